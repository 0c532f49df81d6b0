"""Constants for archetype_match."""

from logging import Logger, getLogger

LOGGER: Logger = getLogger(__package__)

DOMAIN = "archetype_match"

# Environment
ENV_SEED = "DAA_SEED"

# Configuration keys (run-config files mirror the CLI flag names)
CONF_SYSTEM = "system"
CONF_SPEC_FILE = "spec_file"
CONF_DT = "dt"
CONF_TMAX = "tmax"
CONF_N_TRAJ = "n_traj"
CONF_SIGMA = "sigma"
CONF_SEED = "seed"
CONF_SUBSTEPS = "substeps"
CONF_OUT = "out"
CONF_KIND = "kind"
CONF_SCALE = "scale"
CONF_LENGTHSCALE = "lengthscale"
CONF_ARCHETYPE = "archetype"
CONF_ARCHETYPES = "archetypes"
CONF_TARGET = "target"
CONF_TARGETS = "targets"
CONF_EPOCHS = "epochs"
CONF_LR = "lr"
CONF_BATCH_SIZE = "batch_size"
CONF_HIDDEN = "hidden"
CONF_FLOW_STEPS = "flow_steps"
CONF_LEARN_BETA = "learn_beta"
CONF_PRESET = "preset"
CONF_WORKERS = "workers"
CONF_FITS_DIR = "fits_dir"
CONF_MATRIX = "matrix"
CONF_MANIFOLD_POINTS = "manifold_points"
CONF_LOG_LEVEL = "log_level"
CONF_SOURCE_TMAX = "source_tmax"

# Simulation defaults
DEFAULT_SUBSTEPS = 5
DEFAULT_N_TRAJ = 50
DEFAULT_SPLIT_RATIO = 0.8

# Flow-map defaults
DEFAULT_HIDDEN = 64
DEFAULT_FLOW_STEPS = 10

# Training defaults (Adam keeps its library defaults for betas/eps)
DEFAULT_LR = 0.01
DEFAULT_EPOCHS = 200
DEFAULT_BATCH_SIZE = 32
DEFAULT_TRAINABLE_BETA: tuple[str, ...] = ("v",)
# Horizon of the archetype flow when classifying targets.
CLASSIFY_SOURCE_TMAX = 5.0

# Noise levels for the benchmark targets
SIGMA_RING_NOISY = 0.1
SIGMA_VDP_NOISY = 0.25
SIGMA_NOISY_ARCHETYPE = 0.025

# Closed-form target parameters
VDP_MU = 0.3
SELKOV_A = 0.05
SELKOV_B = 0.5
LIENARD_A = 1.5
LIENARD_B = -0.5

# Random deformation of the ring (weights ~ N(mean, std))
RANDOM_DIFFEO_HIDDEN = 64
RANDOM_DIFFEO_WEIGHT_MEAN = 0.02
RANDOM_DIFFEO_WEIGHT_STD = 0.5

# Gaussian-process vector field perturbation
DEFAULT_GP_LATTICE = 30
DEFAULT_GP_PADDING = 0.1
DEFAULT_GP_VARIANCE = 1.0
GP_LENGTHSCALE_RANGE = (0.1, 1.0)
# Ring initial conditions (|x| <= 1.5) padded by 10% of the box width.
DEFAULT_GP_BOUNDS = ((-1.8, -1.8), (1.8, 1.8))

# Tolerances
DEGENERATE_STD = 1e-12

# Scoring
DEFAULT_MANIFOLD_POINTS = 100

# Output file naming
DEFAULT_OUT = "out"
MANIFEST_FILENAME = "run_manifest.json"
META_SUFFIX = ".meta.json"
FIT_SUFFIX = ".fit.json"
CHECKPOINT_SUFFIX = ".ckpt.json"
LOSS_SUFFIX = ".loss.csv"
MATRIX_STEM = "score_matrix"
