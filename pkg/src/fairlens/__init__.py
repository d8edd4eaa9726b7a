"""Causal fairness analysis: labelled causal graphs, structural models,
path-specific effects, counterfactual predictions and group metrics."""

__version__ = "0.1.0"

from .errors import FairlensError, NumericError, ValidationError
from .graph import (
    CausalGraph,
    audit_paths,
    d_separated,
    enumerate_paths,
    minimal_adjustment_sets,
    recommend_criteria,
    satisfies_backdoor,
    validate_graph,
)
from .scm import (
    BernoulliLogistic,
    BernoulliRoot,
    Dataset,
    Expression,
    LinearGaussian,
    StructuralModel,
    build_model,
    intervene,
    population_moments,
    sample,
)
from .effects import PathInterventionSpec, ade, aie, ate, backdoor_adjust, ett, nci, pse
from .counterfactual import abduct, build_twin, corrected_descendant, counterfactual_outcome, fair_predict
from .metrics import (
    GroupedCounts,
    calibration_check,
    confusion,
    demographic_parity,
    dp_gap_curve,
    error_rate_parity,
    incompatibility_witness,
    ppv_from_rates,
    predictive_parity,
)
from .dsl import ScenarioSpec, parse_spec, serialize
from .presets import preset, presets
