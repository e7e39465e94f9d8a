"""Defaults shared by the configuration layer, the models and the worker."""

# Training hyper-parameters
BATCH_SIZE = 8
EPOCHS = 20
C1 = 0.5
C2 = 0.5
PARTICLES_PER_GROUP = 4  # num_neighbors: the particle itself plus three neighbours
NUM_NEIGHBORS = PARTICLES_PER_GROUP - 1
DENSE_DIM = 64           # encoder feed-forward width
NUM_HEADS = 4
RNN_UNITS = 2048
DENSE_UNITS = 1024
DROPOUT_RATE = 0.4
GAUSSIAN_NOISE_STD = 0.1
NUM_FRAMES = 4
ZOOM_RANGE = 0.1
ROTATION_RANGE = 8
WIDTH_SHIFT_RANGE = 0.2
HEIGHT_SHIFT_RANGE = 0.2

# Gradient weight matrix: 0.2 everywhere, 10 towards the wild-rate particle
PAIR_WEIGHT = 0.2
WILD_PAIR_WEIGHT = 10.0
WILD_PARTICLE = 3

# Desk-scale sizes used when nothing else is configured
DESK_RNN_UNITS = 16
DESK_DENSE_UNITS = 64
DESK_D_MODEL = 16
DESK_NUM_HEADS = 2
DESK_NUM_BLOCKS = 2

# PSO-1..3 use fixed rates, PSO-4 draws one from a range
FIXED_LEARNING_RATES = (1e-2, 1e-3, 1e-4)
WILD_LEARNING_RATE_RANGE = (1e-5, 1e-1)

BETA = 1.0
DYNAMIC2_C = 0.5
WARMUP_EPOCHS = 1
COORDINATOR_TIMEOUT = 300.0
DEFAULT_LISTEN = '127.0.0.1:7700'
BROADCAST_ID = -1

LAYER_NORM_EPS = 1e-12
PROBABILITY_FLOOR = 1e-12
LEAKY_RELU_SLOPE = 0.01
FINITE_DIFF_EPS = 1e-5

DYNAMIC_NAMES = ('individual', 'dynamic1', 'dynamic2')
MODEL_NAMES = (
    'sphere', 'rosenbrock', 'rastrigin',
    'transformer', 'rnn', 'lstm', 'gru', 'bilstm', 'mlp',
    'convnet',
)


def particle_label(particle_id: int) -> str:
    """Convert a zero-based particle id to the PSO-n label used in result tables"""
    return f"PSO-{particle_id + 1}"


def get_dynamic_display_name(dynamic: str) -> str:
    """Convert a dynamic key to display name"""
    if dynamic == 'individual':
        return 'Individual Learning'
    return dynamic.replace('dynamic', 'Dynamic ').title()
