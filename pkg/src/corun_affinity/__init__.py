"""Co-run interference profiling, affinity matrices and affinity-aware placement."""

from .harness import (
    BaselineProfile,
    CampaignStore,
    FakeRunner,
    PairObservation,
    ProcessRunner,
    RunSample,
    run_baseline,
    run_campaign,
    run_pair,
)
from .metrics import (
    AffinityClass,
    ClassificationThresholds,
    PairMetrics,
    classify,
    confidence_interval,
    loss_percent,
    normalize_scores,
    pair_metrics,
)
from .model import (
    DwarfClass,
    EnvironmentKind,
    LibraryKind,
    PairKey,
    WorkloadSet,
    WorkloadSpec,
    enumerate_pairs,
    load_workloads,
    validate_workload_set,
)
from .scheduler import (
    Host,
    Objective,
    PlacementPlan,
    PlacementRequest,
    explain_plan,
    plan_exhaustive,
    plan_greedy,
    predict_host_cost,
)
from .store import (
    AffinityEntry,
    AffinityMatrix,
    build_matrix,
    load_matrix,
    render_matrix_table,
    save_matrix,
)

__version__ = "0.1.0"
