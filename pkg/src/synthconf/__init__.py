"""Synthetic control, synthetic difference-in-differences and confounding-aware inference."""

from .dgp import DgpSpec, DgpTemplate, LatentDraw, make_matched_spec, simulate
from .errors import (
    ConvergenceError,
    InfeasibleCapError,
    PanelError,
    SpecError,
    SynthConfError,
    WeightConstraintError,
)
from .estimators import (
    TauEstimate,
    bias_oracle,
    estimate_dr,
    estimate_horizontal,
    estimate_pca_baseline,
    estimate_placebo_set,
    estimate_vertical,
    fit_placebo_weights,
    oracle_beta_horizontal,
    oracle_beta_vertical,
)
from .inference import (
    EstimateReport,
    ci_dr,
    ci_regression,
    placebo_test,
    variance_horizontal,
    variance_vertical,
)
from .mc import ExperimentSpec, McReport, emit_table, run_experiment
from .panel import (
    AggregationWeights,
    Panel,
    TreatmentPattern,
    WeightSet,
    load_panel,
    save_panel,
    validate_weights,
)
from .solver import (
    OracleInputs,
    SolverConfig,
    oracle_inputs,
    oracle_weights_horizontal,
    oracle_weights_vertical,
    project_simplex_box,
    solve_horizontal,
    solve_vertical,
)

__version__ = "0.1.0"
