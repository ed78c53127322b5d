"""Orthogonal additive kernel (OAK) Gaussian-process regression.

Quick start::

    from oakgp import RunConfig, fit, build_report, component_posterior_mean
    model = fit(X, y, RunConfig(max_order=2))
    report = build_report(model)
    print(report.ranking[:5])
"""

__version__ = "0.1.0"

from ._backend import BACKEND
from .config import FeatureSpec, RunConfig
from .errors import (
    ConfigError,
    DataError,
    ModelFormatError,
    NumericalError,
    OakError,
    SchemaError,
)
from .gp import (
    FittedModel,
    GammaPrior,
    component_posterior_mean,
    component_posterior_variance,
    condition,
    constant_component,
    fit,
    log_marginal_likelihood,
    map_objective,
    predict,
    truncated_predict,
)
from .io import ingest, load_model, save_model
from .kernels import OakHyperparams, newton_girard_gram, oak_gram, product_form_gram
from .sobol import SobolReport, build_report, cumulative_curve, sobol_index

__all__ = [
    "BACKEND", "ConfigError", "DataError", "FeatureSpec", "FittedModel", "GammaPrior",
    "ModelFormatError", "NumericalError", "OakError", "OakHyperparams", "RunConfig",
    "SchemaError", "SobolReport", "build_report", "component_posterior_mean",
    "component_posterior_variance", "condition", "constant_component", "cumulative_curve",
    "fit", "ingest", "load_model", "log_marginal_likelihood", "map_objective",
    "newton_girard_gram", "oak_gram", "predict", "product_form_gram", "save_model",
    "sobol_index", "truncated_predict",
]
