"""moeplace: expert placement on storage-constrained edge servers for
low-latency distributed mixture-of-experts inference."""

from .catalog import ExpertCatalog, ExpertId, ModelSpec, build_catalog, layer_subsets
from .estimators import (
    BruteForcePlacement,
    GreedyPlacement,
    LfuPlacement,
    PlacementEstimator,
    RandomPlacement,
    SuccessivePlacement,
    make_estimator,
)
from .instance import Instance, Placement
from .knapsack import ItemValue, KnapsackResult, accelerated_knapsack, dp_knapsack
from .latency import (
    BetaCounts,
    EvalState,
    LatencyBreakdown,
    LatencyModel,
    RoutingDecision,
    avg_model_latency,
    check_latency_regime,
    count_activated,
    max_token_latency,
    objective_F,
    route_other_edges,
    token_latency,
)
from .network import (
    EdgeServerNode,
    Hop,
    LinkModel,
    UserNode,
    downlink_rate,
    embedding_latency,
    expert_compute_latency,
    uplink_rate,
)
from .placement import (
    CurvatureReport,
    brute_force_optimal,
    curvature_closed_form,
    curvature_report,
    find_nonsubmodular_witnesses,
    greedy_k1,
    lfu_placement,
    random_placement,
    subproblem_item_values,
    successive_placement,
    supermodular_curvature,
)
from .scenario import Scenario, build_instance, default_model_library, load_scenario
from .workload import (
    ActivationProfile,
    GatingParams,
    LocalCache,
    assign_local_cache,
    synthesize_profile,
    topk_select,
    zipf_request_dist,
)

__version__ = "0.1.0"
