"""Sum-of-trees regression with closed-form variance-based sensitivity analysis.

Fit a Bayesian ensemble of regression trees to data on the unit cube, then
compute Sobol' indices and Shapley effects for every posterior draw exactly,
with no extra sampling over the input space.
"""

from .forest import (
    EnsembleFormatError,
    Forest,
    Internal,
    Leaf,
    PosteriorEnsemble,
    Tree,
    deserialize,
    evaluate,
    evaluate_many,
    l2_distance,
    mean,
    random_forest,
    second_moment,
    serialize,
    variance,
)
from .oracle import BlackBox, mc_cost, mc_shapley, mc_variance
from .sampler import Dataset, SamplerConfig, SplitNet, fit, make_splitnet
from .sensitivity import (
    IndexEstimate,
    SensitivityReport,
    assemble_report,
    cost,
    cost_difference,
    shapley_exact,
    shapley_sampled,
    sobol_interaction,
    sobol_main,
    sobol_total,
)
from .testbed import (
    FUNCTION_NAMES,
    GenerationSpec,
    TestFunction,
    evaluate_batch,
    generate,
    reference_values,
)

__version__ = "0.1.0"

__all__ = [
    "BlackBox",
    "Dataset",
    "EnsembleFormatError",
    "FUNCTION_NAMES",
    "Forest",
    "GenerationSpec",
    "IndexEstimate",
    "Internal",
    "Leaf",
    "PosteriorEnsemble",
    "SamplerConfig",
    "SensitivityReport",
    "SplitNet",
    "TestFunction",
    "Tree",
    "assemble_report",
    "cost",
    "cost_difference",
    "deserialize",
    "evaluate",
    "evaluate_batch",
    "evaluate_many",
    "fit",
    "generate",
    "l2_distance",
    "make_splitnet",
    "mc_cost",
    "mc_shapley",
    "mean",
    "mc_variance",
    "random_forest",
    "reference_values",
    "second_moment",
    "serialize",
    "shapley_exact",
    "shapley_sampled",
    "sobol_interaction",
    "sobol_main",
    "sobol_total",
    "variance",
]
