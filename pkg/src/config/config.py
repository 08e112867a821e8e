class AppConfig:
    """Default constants for the compose-lab workbench.

    This class centralizes every default used by the experiment configuration,
    the synthetic benchmark, training and inference. `ExperimentConfig` reads
    its field defaults from here, so changing a value in this class changes
    the default of the corresponding YAML key.
    """
    # --- Model Dimensions ---
    FEATURE_DIM = 32            # D, patch feature / slot dimension
    NUM_SLOTS = 7               # K
    ROUTER_HIDDEN_DIM = 64      # h
    TOP_KAPPA = 4               # κ, query slots kept for Chamfer matching
    SLOT_ITERATIONS = 3         # R, slot attention refinement steps
    ORACLE_SHARPNESS = 50.0     # attention logit scale of the oracle slot parameters
    INITIAL_TEMPERATURE = 10.0  # τ at initialization (log_tau = log(10))
    ROUTER_INIT_SCALE = 0.1

    # --- Loss Settings ---
    LAMBDA_D = 0.02
    DECORRELATION_KIND = "cross_correlation"
    GAMMA_HINGE = 1.0
    STD_FLOOR = 1e-6
    CT_WEIGHT = 0.0             # 0 = COMPOSE, 0.5 = COMPOSE-CT
    PROTOTYPE_STOP_GRADIENT = False

    # --- Matcher Settings ---
    MATCHER_KIND = "hard_chamfer"
    SOFT_BETA = 20.0
    SINKHORN_EPSILON = 0.05
    SINKHORN_MAX_ITERS = 1000
    SINKHORN_TOL = 1e-9
    SINKHORN_WARN_RESIDUAL = 1e-3
    GAMMA_BLEND = 0.3

    # --- Optimizer Settings (Adam) ---
    LEARNING_RATE = 1e-3
    ADAM_BETA1 = 0.9
    ADAM_BETA2 = 0.999
    ADAM_EPS = 1e-8
    STEPS_PER_SESSION = 150
    REPLAY_PER_CLASS = 20

    # --- Synthetic Benchmark Geometry ---
    NUM_CONCEPTS = 12
    NUM_TRAIN_CONCEPTS = 8
    NUM_SESSIONS = 3
    CLASSES_PER_SESSION = 6
    GRID_SHAPE = (2, 2)
    PRO_GRID_SHAPE = (2, 3)
    PATCHES_PER_CELL = 4
    CONCEPT_SPREAD = 0.1
    PATCH_NOISE = 0.05
    MAX_CONCEPT_OVERLAP = 0.3
    POOL_MAX_RETRIES = 10000

    # --- Episode Settings ---
    TRAIN_WAY = 5
    TRAIN_SHOT = 5
    TRAIN_QUERIES = 5
    EVAL_WAY = 5
    EVAL_SHOT = 5
    EVAL_QUERIES = 5
    EVAL_EPISODES = 300
    SESSION_EVAL_EPISODES = 50
    CI_Z = 1.96

    # --- Numerics ---
    NORMALIZE_EPS = 1e-9
    ATTENTION_MASS_FLOOR = 1e-12
    JACOBI_MAX_SWEEPS = 100
    RANK_TOL_RATIO = 1e-6
    FINITE_DIFF_STEP = 1e-5

    # --- Gradient Lab ---
    ALIGNMENT_EPISODES = 300
    HOLISTIC_RANK_CONFIGS = 100
    SINKHORN_PROBE_MATRICES = 20
    SINKHORN_PROBE_EPSILONS = (1.0, 0.3, 0.1, 0.03, 0.01)
    SPECTRAL_FLOOR_BATCHES = 1000
    ORACLE_EPISODES = 50

    # --- Runtime ---
    SEED = 0
    WORKERS = 1
    WORKERS_ENV_VAR = "COMPOSE_LAB_WORKERS"
    OUTPUT_DIR = "runs/default"
    LOG_LEVEL = "INFO"
    LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
    CODE_VERSION = "compose-lab 0.1.0"

    # --- Exit Codes ---
    EXIT_OK = 0
    EXIT_CHECK_FAILURE = 1
    EXIT_USAGE = 2
    EXIT_NUMERIC = 3
