"""Preference-driven sequential line search over the unit hypercube.

A Gaussian-process preference model learns from slider choices, expected
improvement proposes the next line segment, and the loop converges toward the
chooser's latent optimum.  Includes a quantile-space mapping for searching
over empirical embedding tables, simulated users, an evaluation harness with
CLI, and an HTTP session service with pluggable candidate rendering.
"""

from .acquisition import AcquisitionConfig, expected_improvement, maximize_ei
from .embedding import (EmbeddingTable, QuantileMapper, from_quantile,
                        mean_embedding, mean_endpoints, to_quantile)
from .harness import ConvergenceReport, ExperimentConfig, run_baseline, run_experiment
from .metrics import masked_mae, sinusoidal_features
from .oracles import (CustomOracle, NegL2Oracle, NegMaskedMaeOracle,
                      PreferenceOracle, make_oracle)
from .preference_gp import (Hyperparameters, HyperPriors, PreferenceGP,
                            PreferenceModel, PreferenceRecord, fit_map, kernel,
                            log_posterior, posterior)
from .session import (GPConfig, Segment, Session, SessionConfig, build_segment,
                      extend_segment, replay_events)

__version__ = "0.1.0"

__all__ = [
    "AcquisitionConfig", "expected_improvement", "maximize_ei",
    "EmbeddingTable", "QuantileMapper", "to_quantile", "from_quantile",
    "mean_embedding", "mean_endpoints",
    "ConvergenceReport", "ExperimentConfig", "run_experiment", "run_baseline",
    "masked_mae", "sinusoidal_features",
    "PreferenceOracle", "NegL2Oracle", "NegMaskedMaeOracle", "CustomOracle",
    "make_oracle",
    "Hyperparameters", "HyperPriors", "PreferenceGP", "PreferenceModel",
    "PreferenceRecord", "fit_map", "kernel", "log_posterior", "posterior",
    "GPConfig", "Segment", "Session", "SessionConfig", "build_segment",
    "extend_segment", "replay_events",
    "__version__",
]
