"""
Shared fixtures for the covertcsi tests
"""

import sys
import os

# Add the project root to the Python path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

import numpy as np
import pytest

from covertcsi.channel_model import StateDmc, load_channel
from covertcsi.covert_capacity import solution_from_dict

CHANNEL_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), 'covertcsi', 'channels')

# Strategy rows (x(s=0), x(s=1)) for a binary input and binary state
ALL_STRATEGIES = [[0, 0], [0, 1], [1, 0], [1, 1]]


def bsc_law(p: float = 0.2) -> np.ndarray:
    """Y = Z = X xor S"""
    law = np.zeros((2, 2, 2, 2))
    for s in range(2):
        for x in range(2):
            out = x ^ s
            law[s, x, out, out] = 1.0
    return law


def cascade_law(q: float = 0.1, noisy: str = 'Z') -> np.ndarray:
    """One output is X xor S, the other is that output through a BSC(q)."""
    law = np.zeros((2, 2, 2, 2))
    for s in range(2):
        for x in range(2):
            clean = x ^ s
            for other in range(2):
                prob = 1.0 - q if other == clean else q
                if noisy == 'Z':
                    law[s, x, clean, other] = prob
                else:
                    law[s, x, other, clean] = prob
    return law


def random_channel(seed: int, nx: int = 2, ns: int = 2, ny: int = 2, nz: int = 2) -> StateDmc:
    """Random channel with full-support rows."""
    rng = np.random.default_rng(seed)
    law = rng.dirichlet(np.ones(ny * nz), size=ns * nx).reshape(ns, nx, ny, nz)
    p_s = rng.dirichlet(np.ones(ns))
    return StateDmc.from_tensor(p_s, law, x0=0, cost=np.arange(nx, dtype=float))


@pytest.fixture
def bsc_path():
    return os.path.join(CHANNEL_DIR, 'bsc.json')


@pytest.fixture
def bsc(bsc_path):
    return load_channel(bsc_path)


@pytest.fixture
def degraded_warden():
    return load_channel(os.path.join(CHANNEL_DIR, 'degraded_warden.json'))


@pytest.fixture
def degraded_receiver():
    return StateDmc.from_tensor([0.8, 0.2], cascade_law(0.1, noisy='Y'), x0=0, cost=[0.0, 1.0])


@pytest.fixture
def bsc_solution():
    """Capacity-achieving causal scheme of the bundled BSC: x = s w.p. 0.8, x = 1 - s w.p. 0.2."""
    return solution_from_dict({
        'mode': 'causal',
        'rate_bits': 0.7219280948873623,
        'aux_dist': [0.0, 0.8, 0.2, 0.0],
        'map': ALL_STRATEGIES,
    })
