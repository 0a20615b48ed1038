"""Estimate which topics sparse social-media users are exposed to.

Contributors' activity stands in for their exposure; thinning them to
engager-level rates yields mock engagers with known ground truth on which
nearest-neighbour matching, Poisson factorization and an encoder-decoder
are compared.
"""

from .corpus import ParticipationThresholds, Role, TweetRecord, UserRecord
from .errors import ConfigError, DataError, NumericError, TopicExposureError
from .evaluation import (
    ExperimentConfig,
    build_dataset,
    l1_norm,
    per_user_l1,
    render_report,
    run_benchmark,
    run_experiment,
)
from .synth import SynthConfig, generate_corpus

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataError",
    "ExperimentConfig",
    "NumericError",
    "ParticipationThresholds",
    "Role",
    "SynthConfig",
    "TopicExposureError",
    "TweetRecord",
    "UserRecord",
    "build_dataset",
    "generate_corpus",
    "l1_norm",
    "per_user_l1",
    "render_report",
    "run_benchmark",
    "run_experiment",
]
