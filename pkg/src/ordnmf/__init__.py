"""Ordinal non-negative matrix factorization for recommendation."""

from .baselines import BinarizationRule, binarize, make_bepof_config, make_pf_config
from .data import (
    OrdinalMatrix,
    QuantizationScheme,
    filter_activity,
    load_triplets,
    matrix_from_classes,
    quantize_counts,
    train_test_split,
)
from .errors import (
    ConfigError,
    DataError,
    DegenerateThresholdError,
    NumericalError,
    OrdnmfError,
    ParseError,
)
from .evaluation import (
    PPCReport,
    RankingMetricsReport,
    evaluate_ranking,
    log_lik_nonzeros,
    ndcg_at_m,
    ppc_histogram,
)
from .inference import (
    FitConfig,
    FitResult,
    GammaVariationalMatrix,
    VariationalState,
    compute_elbo,
    fit,
    init_state,
    load_state,
    predict_scores,
    save_state,
    ztp_mean,
)
from .model import ThresholdSequence, gamma_noise_cdf, log1mexp
from .synthetic import GroundTruth, default_thresholds, generate_dataset

__version__ = "0.1.0"
