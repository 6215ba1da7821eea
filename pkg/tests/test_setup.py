"""
Test setup for the covert-CSI toolkit
"""

import sys
import os

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from conftest import CHANNEL_DIR


def test_imports():
    """Test that all required modules can be imported"""
    from covertcsi import __version__
    from covertcsi.cli import main
    from covertcsi.covert_capacity import causal_capacity, noncausal_capacity
    from covertcsi.coding_sim import run_experiment
    from covertcsi.awgn import evaluate
    from excel_generator import ReportWorkbook
    from database_manager import RunRegistry
    print(f"✅ covertcsi {__version__} imported successfully")
    assert callable(main)


def test_bundled_channels():
    """Test that every bundled channel file loads and validates"""
    from covertcsi.channel_model import read_channel

    names = sorted(f for f in os.listdir(CHANNEL_DIR) if f.endswith('.json'))
    assert names
    for name in names:
        _, report = read_channel(os.path.join(CHANNEL_DIR, name))
        print(f"✅ {name} is valid" if report.ok else f"❌ {name}: {report.lines()}")
        assert report.ok


def test_configuration():
    """Test that the environment configuration is usable"""
    from config import WORKER_COUNT, DEFAULT_SEED, LOG_LEVEL

    assert WORKER_COUNT >= 1
    assert DEFAULT_SEED >= 0
    if os.getenv('COVERT_DATABASE_URL'):
        print("✅ COVERT_DATABASE_URL is configured")
    else:
        print("⚠️ COVERT_DATABASE_URL is not configured, using var/covert.sqlite3")
    assert LOG_LEVEL.upper() in ('DEBUG', 'INFO', 'WARNING', 'ERROR')


if __name__ == "__main__":
    print("🧪 Testing covert-CSI setup...")
    print()

    all_tests_passed = True
    for test in (test_imports, test_bundled_channels, test_configuration):
        print(f"Running {test.__name__}...")
        try:
            test()
        except Exception as e:
            print(f"❌ {test.__name__} failed: {e}")
            all_tests_passed = False
        print()

    if all_tests_passed:
        print("🎉 All tests passed! The toolkit is ready to use.")
    else:
        print("⚠️ Some tests failed. Please check the configuration.")
        sys.exit(1)
