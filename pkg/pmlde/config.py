"""pmlde configuration defaults."""

import os

# Implicit solver
DEFAULT_SOLVER_TOL = 1e-12
# max_iter = factor * sqrt(number of unknowns)
DEFAULT_MAXITER_FACTOR = 10
GMRES_RESTART = 60

# Embedding profile: |6r/eps| beyond this returns exact 0 or 1
EXPONENT_CLAMP = 600.0
# Object must stay this many eps away from the collar
SUPPORT_MARGIN_EPS = 10.0

# PML: default peak damping targets this round-trip reflection factor
DEFAULT_REFLECTION = 1e-4

# Physical energy counts cells with psi >= this threshold
PHYS_ENERGY_PSI_THRESHOLD = 0.5

# Adaptive mesh refinement
REFINEMENT_RATIO = 2
DEFAULT_MAX_LEVEL = 1
MAX_LEVEL_LIMIT = 2
GHOST_WIDTH = 2
NESTING_BUFFER = 2
SENSOR_SMOOTHING_SWEEPS = 2
DEFAULT_BUFFER_CELLS = 2
DEFAULT_REGRID_INTERVAL = 10
DEFAULT_TILE = 1
# Fraction of tagged cells a patch must reach before it is left unsplit
DEFAULT_GRID_EFFICIENCY = 0.7
MIN_BOX_SIZE = 4
# Sensor thresholds: a cell is tagged when any sensor exceeds its threshold
DEFAULT_TAU_EMB = 1.0
DEFAULT_TAU_PML = 0.5
DEFAULT_TAU_SOL = 0.05

# Output formats
SNAPSHOT_MAGIC = b"WSC1"
CHECKPOINT_MAGIC = b"WCK1"
FORMAT_VERSION = 1
ENERGY_COLUMNS = (
    "n",
    "t",
    "E_embed",
    "D",
    "R",
    "residual",
    "E_phys_level0",
    "E_phys_all",
    "solver_iters",
)

# Process exit codes
EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_GEOMETRY = 4
EXIT_IO = 5

DEFAULT_LOG_LEVEL = "WARNING"
DEFAULT_OUTPUT_DIR = "pmlde-output"

# Environment variable overrides
# e.g. PMLDE_SOLVER_TOL=1e-14
ENV_MAP = {
    "PMLDE_SOLVER_TOL": ("solver_tol", float),
    "PMLDE_SOLVER_MAXITER_FACTOR": ("maxiter_factor", float),
    "PMLDE_LOG_LEVEL": ("log_level", str),
    "PMLDE_OUTPUT_DIR": ("output_dir", str),
}


def load_env_overrides(environ=None):
    """Read configuration overrides from environment variables."""
    environ = os.environ if environ is None else environ
    overrides = {}
    for env_var, (key, cast) in ENV_MAP.items():
        value = environ.get(env_var)
        if value:
            overrides[key] = cast(value)
    return overrides
