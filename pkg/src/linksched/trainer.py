"""Training loops (supervised and unsupervised), evaluation, and sweeps.

Training holds out a validation split, selects the epoch with the best
validation sum-rate ratio, and early-stops on that metric rather than on
classifier accuracy: accuracy and achieved rate are correlated but can
disagree, and the rate is the quantity that ultimately matters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .baselines import OracleKind, default_oracle, heuristic_schedule, run_oracle
from .dataset import LayoutRecord, generate_records
from .embednn import (
    Adam,
    AdamConfig,
    ArchConfig,
    ModelGrads,
    ModelParams,
    backward,
    forward,
    init_params,
    supervised_loss,
    unsupervised_loss,
)
from .errors import ConfigurationError, InputError, NumericalError
from .graph import QuantizerSpec, SchedGraph, Topology, build_graph
from .netgen import (
    ChannelConfig,
    LayoutConfig,
    ScheduleVector,
    derived_seed,
    sum_rate,
    STREAM_BASELINE,
)
from .parallel import parallel_map

W_LOSS_GRID = (0.005, 0.01, 0.02)
FULL_ACTIVATION_THRESHOLD = 0.95


@dataclass(frozen=True)
class TrainConfig:
    mode: str = "supervised"  # supervised | unsupervised
    epochs_max: int = 100
    batch_size: int = 16  # layouts per optimizer step
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    patience: int = 10
    val_fraction: float = 0.1
    w_loss: float = 0.0  # full-activation penalty weight (unsupervised)
    seed: int = 0
    iterations: int = 2  # T
    embed_dim: int = 32  # p
    bits: int = 3  # q
    hidden: int = 64  # H
    topology: Topology = field(default_factory=Topology.fully_connected)
    channel: ChannelConfig = field(default_factory=ChannelConfig)

    def validate(self) -> None:
        if self.mode not in ("supervised", "unsupervised"):
            raise ConfigurationError(f"unknown training mode {self.mode!r}")
        if self.epochs_max < 1 or self.batch_size < 1:
            raise ConfigurationError("epochs_max and batch_size must be >= 1")
        if not (0.0 < self.val_fraction < 1.0):
            raise ConfigurationError("val_fraction must be in (0, 1)")
        if self.w_loss < 0:
            raise ConfigurationError("w_loss must be >= 0")
        self.arch().validate()

    def arch(self) -> ArchConfig:
        return ArchConfig(
            embed_dim=self.embed_dim,
            iterations=self.iterations,
            bits=self.bits,
            hidden=self.hidden,
            topology=self.topology,
        )


@dataclass
class EpochStats:
    epoch: int
    train_loss: float  # mean per-layout loss over the epoch
    val_ratio: float
    val_accuracy: float  # NaN when no labels exist
    val_activation: float  # mean fraction of links switched on

    def as_row(self) -> list:
        return [self.epoch, self.train_loss, self.val_ratio, self.val_accuracy, self.val_activation]


HISTORY_COLUMNS = ["epoch", "train_loss", "val_ratio", "val_accuracy", "val_activation"]


@dataclass
class TrainResult:
    params: ModelParams
    history: list[EpochStats]
    quantizer: QuantizerSpec
    best_epoch: int
    w_loss: float


@dataclass
class _Prepared:
    graph: SchedGraph
    channel: object  # ChannelMatrix
    label: np.ndarray | None
    oracle_rate: float | None  # validation normalizer, filled lazily


def _quantizer_for(records: list[LayoutRecord], bits: int) -> QuantizerSpec:
    cfg = records[0].layout.config
    return QuantizerSpec.for_layout_config(bits, cfg.d_min, cfg.d_max, cfg.area_edge)


def _prepare(
    records: list[LayoutRecord], cfg: TrainConfig, quantizer: QuantizerSpec
) -> list[_Prepared]:
    def one(rec: LayoutRecord) -> _Prepared:
        return _Prepared(
            graph=build_graph(rec.layout, quantizer, cfg.topology),
            channel=rec.channel(cfg.channel),
            label=rec.label,
            oracle_rate=None,
        )

    return parallel_map(one, records)


def _hard_decisions(probs: np.ndarray) -> np.ndarray:
    return (probs[:, 1] > 0.5).astype(np.int64)


def train(records: list[LayoutRecord], cfg: TrainConfig) -> TrainResult:
    """Fit the model; returns the parameters of the best validation epoch.

    Supervised mode needs every record labeled. The validation normalizer
    is the labeled schedule's rate in supervised mode and a freshly run
    default oracle otherwise. Datasets too small to split train on
    everything and validate on the same layouts.
    """
    cfg.validate()
    if not records:
        raise InputError("training dataset is empty")
    if cfg.mode == "supervised" and any(r.label is None for r in records):
        raise InputError("supervised training needs labels on every record")

    quantizer = _quantizer_for(records, cfg.bits)
    prepared = _prepare(records, cfg, quantizer)

    rng = np.random.default_rng(cfg.seed)
    n = len(prepared)
    n_val = int(np.ceil(cfg.val_fraction * n))
    perm = rng.permutation(n)
    if n_val >= n:
        train_idx = np.arange(n)
        val_idx = np.arange(n)
    else:
        val_idx = perm[:n_val]
        train_idx = perm[n_val:]

    label_oracle = default_oracle(records[0].num_pairs)
    for i in val_idx:
        prep = prepared[i]
        if prep.label is not None:
            ref = ScheduleVector(rho=prep.label)
        else:
            ref = run_oracle(prep.channel, label_oracle)
        prep.oracle_rate = sum_rate(prep.channel, ref)[0]

    if cfg.topology.kind == "knn":
        degree = min(cfg.topology.k, records[0].num_pairs - 1)
    else:
        degree = records[0].num_pairs - 1
    params = init_params(cfg.arch(), cfg.seed, degree=degree)
    grads = ModelGrads(params)
    opt = Adam(params, AdamConfig(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps))

    history: list[EpochStats] = []
    best_ratio = -np.inf
    best_epoch = -1
    best_params = params.copy()
    stale = 0

    for epoch in range(cfg.epochs_max):
        order = rng.permutation(train_idx)
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = [prepared[i] for i in order[start : start + cfg.batch_size]]
            fp = forward([b.graph for b in batch], params, mode="train")
            if cfg.mode == "supervised":
                labels = np.concatenate([b.label for b in batch])
                loss, dlogits = supervised_loss(fp.probs, labels)
            else:
                loss = 0.0
                dlogits = np.zeros_like(fp.probs)
                for b, sl in zip(batch, fp.node_slices):
                    l_i, d_i = unsupervised_loss(fp.probs[sl], b.channel, cfg.w_loss)
                    loss += l_i
                    dlogits[sl] = d_i
            if not np.isfinite(loss):
                raise NumericalError(
                    f"non-finite loss at epoch {epoch}, batch starting {start} "
                    f"(mode={cfg.mode}, w_loss={cfg.w_loss}, lr={cfg.lr})"
                )
            epoch_loss += loss
            backward(fp, dlogits, grads)
            if not grads.all_finite():
                raise NumericalError(f"non-finite gradients at epoch {epoch}")
            opt.step(params, grads)
            grads.zero()

        ratio, accuracy, activation = _validate(prepared, val_idx, params)
        stats = EpochStats(
            epoch=epoch,
            train_loss=epoch_loss / max(len(order), 1),
            val_ratio=ratio,
            val_accuracy=accuracy,
            val_activation=activation,
        )
        history.append(stats)
        if ratio > best_ratio:
            best_ratio = ratio
            best_epoch = epoch
            best_params = params.copy()
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break

    return TrainResult(
        params=best_params,
        history=history,
        quantizer=quantizer,
        best_epoch=best_epoch,
        w_loss=cfg.w_loss,
    )


def _validate(
    prepared: list[_Prepared], val_idx: np.ndarray, params: ModelParams
) -> tuple[float, float, float]:
    ratios = []
    matches = []
    activations = []
    for i in val_idx:
        prep = prepared[i]
        probs = forward(prep.graph, params, mode="eval").probs
        rho = _hard_decisions(probs)
        rate = sum_rate(prep.channel, ScheduleVector(rho=rho))[0]
        ratios.append(rate / prep.oracle_rate)
        activations.append(rho.mean())
        if prep.label is not None:
            matches.append(np.mean(rho == prep.label))
    accuracy = float(np.mean(matches)) if matches else float("nan")
    return float(np.mean(ratios)), accuracy, float(np.mean(activations))


def train_unsupervised_tuned(
    records: list[LayoutRecord],
    cfg: TrainConfig,
    w_grid: tuple[float, ...] = W_LOSS_GRID,
) -> TrainResult:
    """Unsupervised training with the full-activation escape hatch.

    Starts with no penalty; if the selected model switches on more than
    95% of links on validation, retries over the penalty grid and keeps
    the best validating run that stays below the threshold (or the least
    activated run if none does).
    """
    base = train(records, replace(cfg, mode="unsupervised", w_loss=0.0))
    if base.history[base.best_epoch].val_activation <= FULL_ACTIVATION_THRESHOLD:
        return base
    candidates = []
    for w in w_grid:
        res = train(records, replace(cfg, mode="unsupervised", w_loss=w))
        stats = res.history[res.best_epoch]
        candidates.append((res, stats.val_ratio, stats.val_activation))
    ok = [c for c in candidates if c[2] <= FULL_ACTIVATION_THRESHOLD]
    if ok:
        return max(ok, key=lambda c: c[1])[0]
    candidates.append((base, base.history[base.best_epoch].val_ratio,
                       base.history[base.best_epoch].val_activation))
    return min(candidates, key=lambda c: c[2])[0]


# ---------------------------------------------------------------------------
# evaluation


@dataclass
class EvalReport:
    oracle: str
    accuracy: float
    avg_ratio: float
    mean_activation: float
    per_layout: list[dict]
    runtime: dict

    PER_LAYOUT_COLUMNS = (
        "index", "rate", "oracle_rate", "ratio", "accuracy", "activation"
    )

    def rows(self) -> list[list]:
        return [[r[c] for c in self.PER_LAYOUT_COLUMNS] for r in self.per_layout]

    def summary(self) -> str:
        return (
            f"accuracy={self.accuracy:.4f}, ratio={self.avg_ratio:.4f}, "
            f"activation={self.mean_activation:.4f}, oracle={self.oracle}"
        )


def _evaluate_schedules(
    records: list[LayoutRecord],
    ch_base: ChannelConfig,
    oracle: OracleKind,
    schedule_fn,
    build_graphs: bool,
    quantizer: QuantizerSpec | None,
    topology: Topology | None,
) -> EvalReport:
    t_graph = t_infer = t_oracle = 0.0
    per_layout = []
    for idx, rec in enumerate(records):
        ch = rec.channel(ch_base)
        graph = None
        if build_graphs:
            t0 = time.perf_counter()
            graph = build_graph(rec.layout, quantizer, topology)
            t_graph += time.perf_counter() - t0
        t0 = time.perf_counter()
        sched = schedule_fn(rec, graph, ch)
        t_infer += time.perf_counter() - t0
        t0 = time.perf_counter()
        ref = run_oracle(ch, oracle, rng_seed=derived_seed(rec.layout.config.seed, STREAM_BASELINE))
        t_oracle += time.perf_counter() - t0
        rate = sum_rate(ch, sched)[0]
        oracle_rate = sum_rate(ch, ref)[0]
        per_layout.append(
            {
                "index": idx,
                "rate": rate,
                "oracle_rate": oracle_rate,
                "ratio": rate / oracle_rate,
                "accuracy": float(np.mean(sched.rho == ref.rho)),
                "activation": float(np.mean(sched.rho)),
            }
        )
    n = max(len(records), 1)
    return EvalReport(
        oracle=str(oracle),
        accuracy=float(np.mean([r["accuracy"] for r in per_layout])) if per_layout else float("nan"),
        avg_ratio=float(np.mean([r["ratio"] for r in per_layout])) if per_layout else float("nan"),
        mean_activation=float(np.mean([r["activation"] for r in per_layout])) if per_layout else float("nan"),
        per_layout=per_layout,
        runtime={
            "layouts": len(records),
            "graph_s": t_graph,
            "infer_s": t_infer,
            "oracle_s": t_oracle,
            "infer_s_per_layout": t_infer / n,
        },
    )


def evaluate(
    params: ModelParams,
    records: list[LayoutRecord],
    ch_base: ChannelConfig,
    oracle: OracleKind | None = None,
    quantizer: QuantizerSpec | None = None,
) -> EvalReport:
    """Eval-mode inference against the normalizing oracle's schedules."""
    if not records:
        raise InputError("evaluation dataset is empty")
    oracle = oracle or default_oracle(records[0].num_pairs)
    quantizer = quantizer or _quantizer_for(records, params.arch.bits)
    if quantizer.bits != params.arch.bits:
        raise ConfigurationError(
            f"quantizer bits {quantizer.bits} do not match the model's {params.arch.bits}"
        )

    def schedule_fn(rec, graph, ch):
        probs = forward(graph, params, mode="eval").probs
        return ScheduleVector.from_soft(probs[:, 1])

    return _evaluate_schedules(
        records, ch_base, oracle, schedule_fn,
        build_graphs=True, quantizer=quantizer, topology=params.arch.topology,
    )


def evaluate_baseline(
    kind: OracleKind,
    records: list[LayoutRecord],
    ch_base: ChannelConfig,
    oracle: OracleKind | None = None,
) -> EvalReport:
    """Score a non-learned scheduler with the same report machinery."""
    if not records:
        raise InputError("evaluation dataset is empty")
    oracle = oracle or default_oracle(records[0].num_pairs)

    def schedule_fn(rec, graph, ch):
        seed = derived_seed(rec.layout.config.seed, STREAM_BASELINE)
        return run_oracle(ch, kind, rng_seed=seed)

    return _evaluate_schedules(
        records, ch_base, oracle, schedule_fn,
        build_graphs=False, quantizer=None, topology=None,
    )


# ---------------------------------------------------------------------------
# experiment sweeps


@dataclass
class ExperimentSpec:
    """One end-to-end run: generate, label, train, evaluate."""

    name: str
    layout: LayoutConfig
    train_cfg: TrainConfig
    train_layouts: int = 500
    test_layouts: int = 1000
    oracle: OracleKind | None = None  # label source and normalizer
    test_shadowing: float = 0.0
    train_shadowing: float | None = None  # None: same as test
    tune_w_loss: bool = False
    seed: int = 0


SWEEP_COLUMNS = [
    "name", "L", "d_min", "d_max", "mode", "topology", "iterations", "bits",
    "shadowing_train", "shadowing_test", "oracle", "w_loss",
    "accuracy", "ratio", "activation", "epochs", "error",
]

STREAM_TRAIN_SET = 10
STREAM_TEST_SET = 11


def run_experiment(spec: ExperimentSpec) -> dict:
    """Execute one sweep cell; failures come back as a row, not a raise."""
    cfg = spec.train_cfg
    oracle = spec.oracle or default_oracle(spec.layout.num_pairs)
    train_shadow = spec.train_shadowing if spec.train_shadowing is not None else spec.test_shadowing
    row = {
        "name": spec.name,
        "L": spec.layout.num_pairs,
        "d_min": spec.layout.d_min,
        "d_max": spec.layout.d_max,
        "mode": cfg.mode,
        "topology": str(cfg.topology),
        "iterations": cfg.iterations,
        "bits": cfg.bits,
        "shadowing_train": train_shadow,
        "shadowing_test": spec.test_shadowing,
        "oracle": str(oracle),
        "w_loss": cfg.w_loss,
        "accuracy": float("nan"),
        "ratio": float("nan"),
        "activation": float("nan"),
        "epochs": 0,
        "error": None,
    }
    try:
        train_records = generate_records(
            spec.train_layouts, spec.layout,
            base_seed=derived_seed(spec.seed, STREAM_TRAIN_SET),
            shadowing_std=train_shadow,
        )
        test_records = generate_records(
            spec.test_layouts, spec.layout,
            base_seed=derived_seed(spec.seed, STREAM_TEST_SET),
            shadowing_std=spec.test_shadowing,
        )
        if cfg.mode == "supervised":
            for rec in train_records:
                sched = run_oracle(rec.channel(cfg.channel), oracle)
                rec.label = sched.rho
                rec.oracle = oracle.as_dict()
            result = train(train_records, cfg)
        elif spec.tune_w_loss:
            result = train_unsupervised_tuned(train_records, cfg)
        else:
            result = train(train_records, cfg)
        report = evaluate(
            result.params, test_records, cfg.channel,
            oracle=oracle, quantizer=result.quantizer,
        )
        row.update(
            w_loss=result.w_loss,
            accuracy=report.accuracy,
            ratio=report.avg_ratio,
            activation=report.mean_activation,
            epochs=len(result.history),
        )
    except Exception as exc:  # noqa: BLE001 - sweep rows must survive failures
        row["error"] = f"{type(exc).__name__}: {exc}"
    return row


def sweep(experiments: list[ExperimentSpec]) -> list[dict]:
    return [run_experiment(spec) for spec in experiments]
