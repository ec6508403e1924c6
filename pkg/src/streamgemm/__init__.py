"""FP32 CNN inference on a software model of a streamed tiled GEMM engine."""

from .darknet import (
    LayerSpec,
    LayerWeights,
    NetworkGraph,
    WeightedNetwork,
    fold_batchnorm,
    load_network,
    load_weights,
    parse_cfg,
    save_weights,
)
from .engine import (
    DEFAULT_BUDGET_BYTES,
    EngineConfig,
    EngineCounters,
    GemmShape,
    TileSchedule,
    bank_partition,
    expected_counters,
    gemm_reference,
    gemm_streamed,
    pack_bus_words,
    plan_tiles,
    resolve_thread_cap,
)
from .errors import (
    BadHeader,
    BudgetExceeded,
    ConfigError,
    DimMismatch,
    EmptyConfig,
    InputError,
    InvalidDimension,
    InvalidPreset,
    MissingNetHeader,
    MissingRequiredKey,
    NegativeVariance,
    NonIntegralOutputDim,
    SchemaMismatch,
    StreamGemmError,
    TrailingBytes,
    TruncatedFile,
    UnknownActivation,
    UnknownSection,
    UnsupportedLayer,
    VerificationFailed,
    WeightsError,
)
from .perf import (
    ComparisonReport,
    ComparisonRow,
    DevicePreset,
    PerfEstimate,
    builtin_presets,
    compare,
    estimate,
    fill_latency,
    load_preset,
    parse_preset,
)
from .report import (
    BenchRow,
    BenchmarkReport,
    merge,
    read_csv,
    write_csv,
    write_plot_data,
)
from .runtime import ExecutionPlan, PlanStep, forward, lower
from .tensor import (
    ACTIVATIONS,
    Matrix,
    Tensor,
    activate,
    avgpool,
    col2im,
    conv_out_dim,
    im2col,
    maxpool,
    read_tensor,
    softmax,
    write_tensor,
)

__version__ = "0.1.0"
