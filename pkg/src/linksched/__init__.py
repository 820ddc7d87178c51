"""Graph-embedding link scheduling for D2D interference networks."""

from .baselines import (
    OracleKind,
    brute_force_optimal,
    default_oracle,
    greedy_schedule,
    heuristic_schedule,
    label_dataset,
    run_oracle,
)
from .dataset import LayoutRecord, generate_records, read_dataset, write_dataset
from .embednn import (
    Adam,
    AdamConfig,
    ArchConfig,
    ModelGrads,
    ModelParams,
    backward,
    classify,
    embed,
    forward,
    infer_schedule,
    init_params,
    load_checkpoint,
    save_checkpoint,
    supervised_loss,
    unsupervised_loss,
)
from .errors import (
    CompatibilityError,
    ConfigurationError,
    InputError,
    LinkschedError,
    NumericalError,
    OracleSizeError,
)
from .graph import QuantizerSpec, SchedGraph, Topology, build_graph, quantize
from .netgen import (
    ChannelConfig,
    ChannelMatrix,
    LayoutConfig,
    NetworkLayout,
    ScheduleVector,
    compute_channel,
    generate_layout,
    soft_sum_rate,
    sum_rate,
)
from .trainer import (
    EvalReport,
    ExperimentSpec,
    TrainConfig,
    TrainResult,
    evaluate,
    evaluate_baseline,
    run_experiment,
    sweep,
    train,
    train_unsupervised_tuned,
)

__version__ = "0.1.0"
