"""berbench: benchmark Bayes-error-rate estimators under controlled label noise.

Injecting uniform label noise at level rho moves a dataset's Bayes error
along a known straight line, so estimators can be judged on real data with
an unknown BER: run each one across a noise grid and integrate how far its
lower/upper bound curves escape the analytically valid envelope.
"""

from .core import (
    EnvelopeCurve,
    EstimateInterval,
    cover_hart_lower,
    envelope,
    knn_lower,
    noisy_ber,
)
from .data import (
    Dataset,
    GaussianMixtureSpec,
    TrueBer,
    derive_seed,
    generate_gaussian_mixture,
    inject_label_noise,
    load_dataset,
    save_dataset,
    subsample,
    true_ber,
)
from .estimators import EstimatorConfig, EstimatorError, GeometryCache, estimate
from .harness import (
    ConfigError,
    ExperimentConfig,
    emit_plot_data,
    load_config,
    parse_config,
    run_experiment,
    score_tables,
    synth_dataset,
)
from .scoring import (
    CurveEstimate,
    ScoreReport,
    TrialResult,
    aggregate_trials,
    area_scores,
    best_per_method,
    score_experiment,
)

__version__ = "0.1.0"
