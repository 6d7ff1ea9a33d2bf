import os

# the CONFIG_PATH just points to the logs and cached runs.

# change this to 755 if you want your ~/.fedalc folder to be world readable
CONFIG_PATH_MODE = 0o700
# change this if conflict with an existing ~/.fedalc folder you want to keep
DEFAULT_CONFIG_PATH = os.path.join(os.path.expanduser("~"), ".fedalc")
DEFAULT_LOG_FILE = os.path.join(DEFAULT_CONFIG_PATH, "fedalc.log")
# overrides the console log level (eg. DEBUG, WARNING)
LOG_LEVEL_ENV = 'FEDALC_LOG_LEVEL'

# for numeric.py
# unit-norm assertions are only checked in debug mode
DEBUG = os.environ.get('FEDALC_DEBUG', '') not in ('', '0')
UNIT_NORM_TOLERANCE = 1e-6
FINITE_DIFF_EPS = 1e-5

# for model.py
# text architecture: embedding layer, then three linear layers
EMBED_DIM = 512
HIDDEN1_DIM = 1024
HIDDEN2_DIM = 1024
OUT_DIM = 512
CHECKPOINT_VERSION = 1

# for losses.py
MARGIN_POS = 0.9
NU = 0.9
ALPHA = 1.0
BETA = 1.0
LAMBDA = 1.0
MINING_K = 5

# for labelsets.py
DIGEST_SIZE = 32
EMBEDDING_DECIMALS = 6
# sigma is materialized as a dense C x C array only below this many labels
DENSE_SIGMA_LIMIT = 4096

# for federation.py
CLIENT_LR = 0.1
SERVER_LR = 0.0001
LOCAL_EPOCHS = 1
BATCH_SIZE = 32
ROUNDS = 300
FIXED_ROUNDS = 100
PRECISION_KS = (1, 3, 5)
FIXED_LR = 0.1
EVAL_BATCH_SIZE = 1024
SIGMA_MODES = ('raw', 'normalized')
SERVER_REGS = ('topk', 'full')

# for cli / run output
HISTORY_VERSION = 1
HISTORY_COMMENT = f"# fedalc-history v{HISTORY_VERSION}"
HISTORY_COLUMNS = ('round', 'p_at_1', 'p_at_3', 'p_at_5', 'map',
                   'collapse_gauge', 'mean_client_loss')
HISTORY_FILENAME = 'history.csv'
MANIFEST_FILENAME = 'manifest.json'
CHECKPOINT_FILENAME = 'checkpoint.npz'

# for data.py
TRAIN_FILENAME = 'train.txt'
VAL_FILENAME = 'val.txt'
TEST_FILENAME = 'test.txt'
SHARDS_FILENAME = 'shards.json'
VAL_FRACTION = 0.05
SYNTH_NOISE = 1.0

# for config.py (synthetic fixture defaults)
SYNTH_LABELS = 16
SYNTH_FEATURES = 64
SYNTH_INSTANCES = 2000
SYNTH_AVG_LABELS = 2.5
SYNTH_CLUSTERS = 4
TRUE_WORDS = ('true', 'yes', 'on', '1')
FALSE_WORDS = ('false', 'no', 'off', '0')
