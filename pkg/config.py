"""
Configuration for the covert-CSI solver and simulator
Environment overrides are read from .env (see env_template.txt)
"""

import os
from dotenv import load_dotenv
from dataclasses import dataclass, field, asdict
from typing import List, Dict, Optional

load_dotenv()

# Runtime Configuration
WORKER_COUNT = int(os.getenv('COVERT_WORKERS', '1'))
DATABASE_URL = os.getenv('COVERT_DATABASE_URL', os.path.abspath('var/covert.sqlite3'))
OUTPUT_FOLDER = os.getenv('COVERT_OUTPUT_FOLDER', 'output/runs')
LOG_LEVEL = os.getenv('COVERT_LOG_LEVEL', 'INFO')
DEFAULT_SEED = int(os.getenv('COVERT_SEED', '20240611'))

# Numerical tolerances
SIMPLEX_TOL = 1e-12         # construction of Pmf objects
FILE_ROW_TOL = 1e-9         # row sums of ingested channel files
IDENTITY_TOL = 1e-10        # information identities in tests
FEASIBILITY_TOL = 1e-8      # P_Z = Q0 (TV) and cost residuals
NFOLD_MEMORY_CAP = 1 << 22  # entries of an n-fold product

# Solver Settings
FW_GAP_TOL = 1e-7           # conditional-gradient duality gap, nats
FW_MAX_ITER = int(os.getenv('COVERT_FW_MAX_ITER', '2000'))
DEFAULT_RESTARTS = 32
ASCENT_MAX_ITER = int(os.getenv('COVERT_ASCENT_MAX_ITER', '600'))
ASCENT_TOL = 1e-10
MAP_ENUM_BUDGET = int(os.getenv('COVERT_MAP_BUDGET', '20000'))
ORACLE_BUDGET = int(os.getenv('COVERT_ORACLE_BUDGET', '50000000'))

# Simulation Settings
EXACT_Z_CAP = 4096
EXACT_WORK_CAP = 10 ** 8
MC_SAMPLES = 10 ** 6
CODEBOOK_ENTRY_CAP = 1 << 24
DEFAULT_TRIALS = 1000
DEFAULT_CODEBOOKS = 5

# CSV export columns for simulation sweeps
CSV_COLUMNS = [
    'n',
    'realized_R',
    'realized_RK',
    'realized_Rprime',
    'p_err',
    'p_err_halfwidth',
    'kl_nats',
    'tv',
    'detection_bound',
    'exactness_flag'
]

SURFACE_COLUMNS = ['A_nats', 'B', 'value_bits']


@dataclass
class SolverSettings:
    """Parameters for the capacity solvers"""
    aux_bound: str = 'achiev'
    restarts: int = DEFAULT_RESTARTS
    seed: int = DEFAULT_SEED
    fw_max_iter: int = FW_MAX_ITER
    fw_gap_tol: float = FW_GAP_TOL
    ascent_max_iter: int = ASCENT_MAX_ITER
    feasibility_tol: float = FEASIBILITY_TOL
    map_budget: int = MAP_ENUM_BUDGET
    workers: int = WORKER_COUNT
    aux_size: Optional[int] = None
    prune_dominated: bool = True


@dataclass
class SimConfig:
    """Parameters for one blocklength of the coding simulation"""
    n: int
    R: float
    R_K: float
    R_prime: float = 0.0
    seed: int = DEFAULT_SEED
    trials: int = DEFAULT_TRIALS
    mode: str = 'causal'
    exact_z_cap: int = EXACT_Z_CAP
    exact_threshold: int = EXACT_WORK_CAP
    mc_samples: int = MC_SAMPLES
    workers: int = WORKER_COUNT

    def to_dict(self) -> Dict:
        return asdict(self)


@dataclass
class SweepConfig:
    """A simulation sweep over blocklengths, with several codebook draws per blocklength"""
    n_list: List[int] = field(default_factory=lambda: [2, 4, 6, 8])
    R: float = 0.5
    R_K: float = 0.5
    R_prime: float = 0.0
    seed: int = DEFAULT_SEED
    trials: int = DEFAULT_TRIALS
    codebooks: int = DEFAULT_CODEBOOKS
    exact_z_cap: int = EXACT_Z_CAP
    exact_threshold: int = EXACT_WORK_CAP
    mc_samples: int = MC_SAMPLES
    workers: int = WORKER_COUNT

    def config_for(self, n: int, seed: int, mode: str) -> SimConfig:
        return SimConfig(
            n=n,
            R=self.R,
            R_K=self.R_K,
            R_prime=self.R_prime,
            seed=seed,
            trials=self.trials,
            mode=mode,
            exact_z_cap=self.exact_z_cap,
            exact_threshold=self.exact_threshold,
            mc_samples=self.mc_samples,
            workers=1,
        )

    def to_dict(self) -> Dict:
        return asdict(self)
