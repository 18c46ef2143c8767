# sampling
CHOLESKY_MAX_STEPS = 4096
EIGENVALUE_CLIP_TOLERANCE = 1e-9

# solver
WONG_ZAKAI_SUBSTEPS = 8
SIMULATION_CHUNK_SIZE = 2048

# local time
CUTOFF_FRACTION = 0.1  # a = 0.1 * T
EPSILON_FACTOR = 0.5  # eps = EPSILON_FACTOR * step ** h
X_GRID_SUBDIVISIONS = 1  # x spacing = eps / X_GRID_SUBDIVISIONS
FLAT_SEGMENT_TOLERANCE = 1e-9
T_GRID_POINTS = 4096  # default t_grid keeps at most this many path grid times
NOISE_FLOOR_RATIO = 0.5  # eps below this multiple of the mean per-step movement is noise-dominated

# hoelder regression
MIN_SCALES = 4
PREFERRED_SCALES = 6
MIN_WINDOWS = 8
WINDOW_STARTS = 8  # increment starts sampled per window
LADDER_LOW_STEPS = 8
BOOTSTRAP_RESAMPLES = 2000

# density estimates
BANDWIDTH_SCALE = 0.8
BANDWIDTH_SENSITIVITY = (0.5, 1.0, 2.0)
KDE_GRID_POINTS = 1024
MIN_KDE_SAMPLES = 1000
MIN_TAIL_COUNT = 50
GAMMA_FRACTION = 0.8
GROWTH_TOLERANCE = 0.05

# validation
MIN_COVARIANCE_PATHS = 100
Z_SCORE_LIMIT = 5.0
