"""Data-driven GPU frequency scaling at desk scale.

Train energy/time prediction models over frequency configurations, match
arriving applications to a clustered knowledge base, pick the cheapest
deadline-feasible clock per job, and evaluate the policy against default- and
max-clock baselines in a discrete-event simulator. Fitted models can also be
served over a small HTTP/JSON API.
"""

from .matcher import (
    ClusterModel,
    KnowledgeBase,
    MatchResult,
    build_knowledge_base,
    kmeans,
    match_application,
)
from .models import (
    EvalReport,
    FittedModel,
    GBRTKind,
    LassoKind,
    ModelKind,
    OLSKind,
    build_design_matrix,
    cross_validate,
    evaluate,
    fit,
    load_model,
    predict,
    save_model,
)
from .oracle import (
    OracleModel,
    OracleRanges,
    OracleSpec,
    generate_synthetic,
    oracle_eval,
)
from .policies import (
    CandidatePrediction,
    Job,
    Policy,
    ScheduleDecision,
    predict_all_configs,
    select_frequency,
)
from .schema import (
    Dataset,
    DeviceSpec,
    FeatureSchema,
    FrequencyConfig,
    Measurement,
    NormStats,
    TrainingRecord,
    ValidationError,
)
from .server import ModelServer, serve
from .simulator import (
    PolicyComparison,
    SimulationResult,
    Workload,
    compare_policies,
    generate_workload,
    simulate,
)
from .traces import (
    TraceParseError,
    denormalize,
    load_dataset,
    load_device,
    normalize,
    save_device,
    split,
    write_dataset,
)

__version__ = "0.1.0"
