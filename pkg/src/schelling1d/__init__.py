"""One-dimensional Schelling segregation on a ring: simulation and analysis."""

from .ring import (
    ALPHA,
    BETA,
    ConfigError,
    IllegalSwap,
    Interval,
    MetricSet,
    NodeStatus,
    ProcessParams,
    RingState,
    StateClass,
    SwapDelta,
    build_state,
    classify_state,
    interval_bias,
    maximal_blocks,
    node_status,
    stable_intervals,
    swap_legal,
)
from .dynamics import (
    Outcome,
    RunConfig,
    RunSummary,
    Runner,
    StoppingTimes,
    SwapEvent,
    Trace,
    enumerate_legal_pairs,
    run,
    sample_initial,
    step,
)

__version__ = "0.1.0"
