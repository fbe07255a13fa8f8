"""martwin: digital-twin driven uplink spectrum reservation for AR key-frame traffic.

A desk-scale simulator and library: synthetic or ingested key-frame traces,
two switchable data-driven traffic predictors managed by a per-user digital
twin, and a closed-form robust reservation rule that converts predicted upload
counts into bandwidth and resource blocks under predictor uncertainty.
"""

from .config import ConfigError, SimConfig, TwinSection, SimSection, parse_config
from .mapgraph import (
    CullConfig,
    SetJaccardIndex,
    WeightedFrameGraph,
    build_graph,
    cull,
    dump_graph_csv,
    empty_graph,
    jaccard,
    update_map,
)
from .predictors import (
    DetailedState,
    ExperienceStore,
    ModelParams,
    PredictedAction,
    SimplifiedState,
    build_detailed_state,
    fit_detailed,
    fit_recurrent,
    fit_simplified,
    poisson_reserve,
    predict_detailed,
    predict_simplified,
    predict_transition,
    recurrent_baseline_predict,
)
from .reservation import (
    RadioConfig,
    RBSpec,
    ReservationDecision,
    decide,
    eval_g,
    eval_g_double_sum,
    find_n_star,
    key_count_distribution,
    oracle_g,
    posterior_rates,
    quantize_rbs,
    reserve_bandwidth,
    run_verification,
)
from .sim import (
    MethodResult,
    SlotRecord,
    SummaryMetrics,
    compare_baselines,
    compute_metrics,
    emit_csv,
    parse_csv,
    run_full,
    run_simulation,
)
from .trace import (
    Frame,
    FrameTrace,
    GeneratorConfig,
    LabelingConfig,
    TraceFormatError,
    TraceSlot,
    generate_trace,
    label_key_frames,
    load_trace,
    save_trace,
    slotify,
)
from .twin import (
    ConfusionStats,
    SwitchState,
    UserProfile,
    msf_step,
    new_profile,
    profile_snapshot,
    record_experience,
    switch_sequence,
    update_confusion,
)

__version__ = "0.1.0"
