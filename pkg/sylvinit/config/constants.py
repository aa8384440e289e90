from __future__ import annotations

# sylvester solve
DEFAULT_LAMBDA = 10.0
EPS_SCALE = 1e-8

# jacobi eigensolver
JACOBI_TOL = 1e-12
JACOBI_MAX_SWEEPS = 100
JACOBI_THRESHOLD = 0.2
JACOBI_THRESHOLD_SWEEPS = 3
SIGN_TOL = 1e-12

# latent codes
KMEANS_MAX_ITERS = 100
KMEANS_TOL = 1e-6
LDA_RIDGE = 1e-6
PAD_SCALE = 0.01
RANK_TOL = 1e-12

# patches
DEFAULT_PATCHES_PER_IMAGE = 16

# training
DEFAULT_LR = 0.1
DEFAULT_MOMENTUM = 0.9
DEFAULT_DECAY_FACTOR = 10.0
DEFAULT_BATCH_SIZE = 64
DEFAULT_EPOCHS = 30

# init subset
DEFAULT_PER_CLASS = 100

# blobs
BLOB_CLASSES = 3
BLOB_SIDE = 8
BLOB_CHANNELS = 1
BLOB_PER_CLASS = 100
BLOB_SPREAD = 0.1

DATA_DIR_ENV = "SYLVINIT_DATA_DIR"
