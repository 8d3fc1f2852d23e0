"""Resource-constrained dynamic monitoring strategies from longitudinal data.

Clone-censor-weight estimation of two dynamic marginal structural models
(failure risk and measurement count at a horizon) over a grid of
threshold-indexed monitoring strategies, constrained selection of the optimal
threshold under a resource cap, and a cohort simulator whose forced-strategy
Monte Carlo serves as the validating oracle.
"""

from .cohort import (
    BaselineField,
    BaselineSchema,
    Cohort,
    SubjectRecord,
    TimeRow,
    baseline_design,
)
from .errors import (
    BootstrapUnstable,
    ConfigError,
    DegenerateResponse,
    IngestError,
    NonConvergence,
    PositivityViolation,
    RankError,
    RcdsError,
    SchemaError,
    SeparationError,
    UndefinedHistory,
)
from .expansion import ExpandedDataset, expand, horizon_responses, horizon_table
from .glm import DesignMatrix, GlmFit, fit_glm, predict, rcs_basis
from .msm import (
    DoseResponseTable,
    MsmSpec,
    WeightOptions,
    analyze_cohort,
    bootstrap_pipeline,
    fit_outcome_msm,
    fit_resource_msm,
    standardize,
)
from .optimize import ConstrainedSelection, frontier, select
from .simulate import (
    DgpParams,
    TruthTable,
    monitor_probability,
    oracle_truth,
    positivity_audit,
    simulate_cohort,
    simulate_forced,
)
from .strategies import (
    StrategyGrid,
    ThresholdStrategy,
    applicable_window,
    consistency_horizon,
    horizon_matrix,
)
from .study import run_coverage
from .weights import (
    MonitorFeatureSpec,
    MonitorModel,
    attach_weights,
    fit_monitor_model,
    weight_summary,
)

__version__ = "0.1.0"
