import os

# TIER 1: SAMPLING
# Use this for: random (q, q_dot, q_ddot) draws and off-surface (q, p) draws.
SAMPLE_LOW = -2.0
SAMPLE_HIGH = 2.0
DEFAULT_SAMPLES = 100
DEFAULT_SEED = 42
MAX_REJECTIONS = 10_000

# Tier 2: TOLERANCES
# Use this for: pass/fail decisions on identities and oracles.
IDENTITY_TOL = 1e-8
FD_TOL = 1e-5
NUMERIC_ZERO_TOL = 1e-12
RANK_REL_TOL = 1e-8
KERNEL_ANGLE_TOL = 1e-6
REBASE_DET_TOL = 1e-6
MUTANT_MIN_RESIDUAL = 1e-3
# Allowed distance from a mutant's recorded residual.
MUTANT_RESIDUAL_TOL = 1e-9
# Residual differences allowed between a shifted and an unshifted suite.
AMBIGUITY_TOL = 1e-9

# Tier 3: FINITE DIFFERENCES
FD_STEP = 1e-5
# Five-point central stencil: offsets and weights for f'(x) * h.
FD_OFFSETS = (-2.0, -1.0, 1.0, 2.0)
FD_WEIGHTS = (1.0 / 12.0, -8.0 / 12.0, 8.0 / 12.0, -1.0 / 12.0)
# Stencils whose point lies within FD_MARGIN steps of a domain boundary are skipped.
FD_MARGIN = 100.0

# Tier 4: COMPILATION
LAMBDIFY_CSE = True
JET_CACHE_SIZE = 32

# Tier 5: CORPUS
CORPUS_DIR = os.path.join(os.path.dirname(os.path.dirname(os.path.abspath(__file__))), "corpus")
MUTANT_DIR = os.path.join(CORPUS_DIR, "mutants")
CORPUS_EXPECTATIONS = os.path.join(CORPUS_DIR, "expected.json")
MODEL_SUFFIX = ".gsf"
EXPLORE_COUNT = 50
