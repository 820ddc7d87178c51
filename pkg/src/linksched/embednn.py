"""The learnable model, hand-rolled on numpy in float64.

Two stages share one training objective:

* iterative mean-field embedding: every node vector is rebuilt each
  round from its own one-hot feature, the histogram of its in-edge
  features, and the sum of its in-neighbors' previous vectors, through
  a shared ReLU-activated linear map;
* a per-node classifier (affine, batch norm, ReLU, affine, softmax)
  turning the final embedding into (P(inactive), P(active)).

Backward passes are exact reverse-mode differentiation of exactly this
architecture; there is no generic autodiff underneath.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, LinkschedError
from .graph import SchedGraph, Topology
from .netgen import ChannelMatrix, ScheduleVector, soft_sum_rate

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
LOG_CLAMP = 1e-12
RATE_CLAMP = 1e-30


@dataclass(frozen=True)
class ArchConfig:
    """Architecture hyperparameters; defaults follow the headline setup."""

    embed_dim: int = 32  # p
    iterations: int = 2  # T
    bits: int = 3  # q, feature dim 2^q
    hidden: int = 64  # H
    topology: Topology = field(default_factory=Topology.fully_connected)

    @property
    def feat_dim(self) -> int:
        return 1 << self.bits

    def validate(self) -> None:
        if min(self.embed_dim, self.iterations, self.bits, self.hidden) < 1:
            raise ConfigurationError("all architecture sizes must be >= 1")
        self.topology.validate()


@dataclass
class EmbeddingParams:
    w_node: np.ndarray  # (p, 2^q), applied to the node's own feature
    w_edge: np.ndarray  # (p, 2^q), applied to the in-edge histogram
    w_neighbor: np.ndarray  # (p, p), applied to the neighbor-embedding sum
    iterations: int

    @property
    def embed_dim(self) -> int:
        return self.w_node.shape[0]

    @property
    def feat_dim(self) -> int:
        return self.w_node.shape[1]


@dataclass
class ClassifierParams:
    w_hidden: np.ndarray  # (H, p)
    b_hidden: np.ndarray  # (H,); redundant under batch norm but kept
    bn_scale: np.ndarray  # (H,)
    bn_shift: np.ndarray  # (H,)
    bn_mean: np.ndarray  # (H,) running mean, eval-mode statistics
    bn_var: np.ndarray  # (H,) running variance
    w_out: np.ndarray  # (2, H)
    b_out: np.ndarray  # (2,)

    @property
    def hidden(self) -> int:
        return self.w_hidden.shape[0]


@dataclass
class ModelParams:
    embed: EmbeddingParams
    clf: ClassifierParams
    arch: ArchConfig

    def copy(self) -> "ModelParams":
        e = self.embed
        c = self.clf
        return ModelParams(
            embed=EmbeddingParams(e.w_node.copy(), e.w_edge.copy(), e.w_neighbor.copy(), e.iterations),
            clf=ClassifierParams(
                c.w_hidden.copy(), c.b_hidden.copy(), c.bn_scale.copy(), c.bn_shift.copy(),
                c.bn_mean.copy(), c.bn_var.copy(), c.w_out.copy(), c.b_out.copy(),
            ),
            arch=self.arch,
        )


# Canonical order for optimizer state, gradient buffers, and checkpoints.
PARAM_NAMES = (
    "w_node", "w_edge", "w_neighbor",
    "w_hidden", "b_hidden", "bn_scale", "bn_shift", "w_out", "b_out",
)
RUNNING_STAT_NAMES = ("bn_mean", "bn_var")


def param_array(params: ModelParams, name: str) -> np.ndarray:
    holder = params.embed if hasattr(params.embed, name) else params.clf
    return getattr(holder, name)


def param_items(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    return [(name, param_array(params, name)) for name in PARAM_NAMES]


class ModelGrads:
    """Gradient buffer mirroring the trainable parameter arrays."""

    def __init__(self, params: ModelParams):
        self.arrays = {name: np.zeros_like(arr) for name, arr in param_items(params)}

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        # augmented assignment on grads[name] hands the array back here
        self.arrays[name] = value

    def zero(self) -> None:
        for arr in self.arrays.values():
            arr[...] = 0.0

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(a))) if a.size else 0.0 for a in self.arrays.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays.values())


def _glorot(rng: np.random.Generator, shape: tuple[int, int]) -> np.ndarray:
    fan_out, fan_in = shape
    half_width = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-half_width, half_width, size=shape)


def init_params(arch: ArchConfig, seed: int, degree: float | None = None) -> ModelParams:
    """Zero-mean uniform init scaled per matrix; draw order is fixed so a
    seed pins every weight.

    ``degree`` is the typical in-degree of the graphs to be embedded.
    The edge histogram sums to the degree and the neighbor term sums that
    many nonnegative embeddings, so without the correction the update
    explodes by a factor of the degree per round on dense graphs.
    """
    arch.validate()
    rng = np.random.default_rng(seed)
    p, F, H = arch.embed_dim, arch.feat_dim, arch.hidden
    d = 1.0 if degree is None else max(1.0, float(degree))
    embed = EmbeddingParams(
        w_node=_glorot(rng, (p, F)),
        w_edge=_glorot(rng, (p, F)) / max(1.0, d / np.sqrt(F)),
        w_neighbor=_glorot(rng, (p, p)) / d,
        iterations=arch.iterations,
    )
    clf = ClassifierParams(
        w_hidden=_glorot(rng, (H, p)),
        b_hidden=np.zeros(H),
        bn_scale=np.ones(H),
        bn_shift=np.zeros(H),
        bn_mean=np.zeros(H),
        bn_var=np.ones(H),
        w_out=_glorot(rng, (2, H)),
        b_out=np.zeros(2),
    )
    return ModelParams(embed=embed, clf=clf, arch=arch)


# ---------------------------------------------------------------------------
# forward passes


@dataclass
class EmbedCache:
    mu_steps: list[np.ndarray]  # mu_0 .. mu_T, each (L, p)
    nbr_sums: list[np.ndarray]  # aggregated previous-step embeddings per round


def embed_forward(graph: SchedGraph, ep: EmbeddingParams) -> tuple[np.ndarray, EmbedCache]:
    """Run the synchronous embedding iterations, keeping what backward needs."""
    if graph.node_feat.shape[1] != ep.feat_dim:
        raise ConfigurationError(
            f"graph features have dim {graph.node_feat.shape[1]}, "
            f"params expect {ep.feat_dim}"
        )
    L = graph.num_nodes
    base = graph.node_feat @ ep.w_node.T + graph.edge_hist @ ep.w_edge.T
    mu = np.zeros((L, ep.embed_dim))
    mu_steps = [mu]
    nbr_sums = []
    for _ in range(ep.iterations):
        nbr = graph.aggregate_in(mu)
        nbr_sums.append(nbr)
        mu = np.maximum(0.0, base + nbr @ ep.w_neighbor.T)
        mu_steps.append(mu)
    return mu, EmbedCache(mu_steps=mu_steps, nbr_sums=nbr_sums)


def embed(graph: SchedGraph, ep: EmbeddingParams) -> np.ndarray:
    """Final node embeddings, (L, p)."""
    return embed_forward(graph, ep)[0]


@dataclass
class ClassifierCache:
    inputs: np.ndarray  # (N, p)
    x_hat: np.ndarray  # (N, H) normalized hidden pre-activation
    inv_std: np.ndarray  # (H,) 1/sqrt(var + eps) actually used
    relu_out: np.ndarray  # (N, H)
    probs: np.ndarray  # (N, 2)
    train_mode: bool


def classifier_forward(
    mu: np.ndarray,
    cp: ClassifierParams,
    mode: str = "eval",
    update_running: bool = True,
) -> tuple[np.ndarray, ClassifierCache]:
    """Per-node probabilities (P(inactive), P(active)).

    Train mode normalizes with the statistics of the nodes in ``mu`` (the
    current mini-batch pool) and, unless told otherwise, folds them into
    the running statistics; eval mode uses the running statistics as-is.
    """
    if mode not in ("train", "eval"):
        raise ConfigurationError(f"mode must be train or eval, got {mode!r}")
    if mu.shape[1] != cp.w_hidden.shape[1]:
        raise ConfigurationError(
            f"embeddings have dim {mu.shape[1]}, classifier expects {cp.w_hidden.shape[1]}"
        )
    h_pre = mu @ cp.w_hidden.T + cp.b_hidden
    train_mode = mode == "train"
    if train_mode:
        mean = h_pre.mean(axis=0)
        var = h_pre.var(axis=0)  # biased, matching the backward pass
        if update_running:
            cp.bn_mean[...] = (1 - BN_MOMENTUM) * cp.bn_mean + BN_MOMENTUM * mean
            cp.bn_var[...] = (1 - BN_MOMENTUM) * cp.bn_var + BN_MOMENTUM * var
    else:
        mean, var = cp.bn_mean, cp.bn_var
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    x_hat = (h_pre - mean) * inv_std
    h_bn = cp.bn_scale * x_hat + cp.bn_shift
    relu_out = np.maximum(0.0, h_bn)
    logits = relu_out @ cp.w_out.T + cp.b_out
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    cache = ClassifierCache(
        inputs=mu, x_hat=x_hat, inv_std=inv_std,
        relu_out=relu_out, probs=probs, train_mode=train_mode,
    )
    return probs, cache


def classify(
    mu: np.ndarray, cp: ClassifierParams, mode: str = "eval"
) -> np.ndarray:
    return classifier_forward(mu, cp, mode)[0]


@dataclass
class ForwardPass:
    """One model application to a batch of graphs, with cached intermediates.

    All graphs' nodes go through the classifier as a single pool, so
    train-mode batch statistics cover the whole mini-batch.
    """

    graphs: list[SchedGraph]
    node_slices: list[slice]
    embed_caches: list[EmbedCache]
    clf_cache: ClassifierCache
    probs: np.ndarray  # (total nodes, 2)
    params: ModelParams


def forward(
    graphs: SchedGraph | list[SchedGraph],
    params: ModelParams,
    mode: str = "eval",
) -> ForwardPass:
    if isinstance(graphs, SchedGraph):
        graphs = [graphs]
    embeddings = []
    caches = []
    slices = []
    offset = 0
    for g in graphs:
        mu, cache = embed_forward(g, params.embed)
        embeddings.append(mu)
        caches.append(cache)
        slices.append(slice(offset, offset + g.num_nodes))
        offset += g.num_nodes
    pooled = np.concatenate(embeddings, axis=0)
    probs, clf_cache = classifier_forward(pooled, params.clf, mode)
    return ForwardPass(
        graphs=graphs, node_slices=slices, embed_caches=caches,
        clf_cache=clf_cache, probs=probs, params=params,
    )


def infer_schedule(graph: SchedGraph, params: ModelParams) -> ScheduleVector:
    """Eval-mode inference plus the hard activation decision."""
    probs = forward(graph, params, mode="eval").probs
    return ScheduleVector.from_soft(probs[:, 1])


# ---------------------------------------------------------------------------
# losses (value plus exact gradient w.r.t. the classifier logits)


def _softmax_vjp(probs: np.ndarray, dprobs: np.ndarray) -> np.ndarray:
    inner = np.sum(dprobs * probs, axis=1, keepdims=True)
    return probs * (dprobs - inner)


def supervised_loss(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Summed cross entropy against 0/1 activation labels."""
    labels = np.asarray(labels)
    if labels.shape[0] != probs.shape[0]:
        raise ConfigurationError("labels and probabilities disagree in length")
    onehot = np.stack([1.0 - labels, labels.astype(np.float64)], axis=1)
    loss = -float(np.sum(onehot * np.log(np.clip(probs, LOG_CLAMP, None))))
    # softmax + cross entropy collapse to this for the logits; the clamp
    # is a numerical guard and is treated as inactive
    dlogits = probs - onehot
    return loss, dlogits


def unsupervised_loss(
    probs: np.ndarray, ch: ChannelMatrix, w_loss: float = 0.0
) -> tuple[float, np.ndarray]:
    """Reciprocal soft sum rate plus a penalty against full activation.

    The reciprocal is taken of the mean per-link spectral efficiency (sum
    rate divided by bandwidth times link count): that keeps the objective
    O(1) regardless of network size, so the penalty weights it is tuned
    against, 0.005 to 0.02, act on a comparable scale.
    """
    if w_loss < 0:
        raise ConfigurationError("penalty weight must be >= 0")
    active = probs[:, 1]
    rate, drate = soft_sum_rate(ch, active, with_grad=True)
    scale = ch.bandwidth * ch.num_pairs
    se = rate / scale
    if se < RATE_CLAMP:
        loss_rate = 1.0 / RATE_CLAMP
        d_active = np.zeros_like(active)
    else:
        loss_rate = 1.0 / se
        d_active = -(1.0 / se**2) * (drate / scale)
    inactive = np.clip(probs[:, 0], LOG_CLAMP, None)
    loss = loss_rate - w_loss * float(np.sum(np.log(inactive)))
    d_inactive = np.where(probs[:, 0] > LOG_CLAMP, -w_loss / inactive, 0.0)
    dprobs = np.stack([d_inactive, d_active], axis=1)
    return loss, _softmax_vjp(probs, dprobs)


# ---------------------------------------------------------------------------
# backward


def classifier_backward(
    cache: ClassifierCache, cp: ClassifierParams, dlogits: np.ndarray, grads: ModelGrads
) -> np.ndarray:
    """Propagate logit gradients to classifier parameters; returns the
    gradient w.r.t. the pooled embeddings."""
    grads["w_out"] += dlogits.T @ cache.relu_out
    grads["b_out"] += dlogits.sum(axis=0)
    d_relu = dlogits @ cp.w_out
    d_bn = d_relu * (cache.relu_out > 0)
    grads["bn_scale"] += np.sum(d_bn * cache.x_hat, axis=0)
    grads["bn_shift"] += d_bn.sum(axis=0)
    dx_hat = d_bn * cp.bn_scale
    if cache.train_mode:
        n = dx_hat.shape[0]
        dx = (cache.inv_std / n) * (
            n * dx_hat
            - dx_hat.sum(axis=0)
            - cache.x_hat * np.sum(dx_hat * cache.x_hat, axis=0)
        )
    else:
        dx = dx_hat * cache.inv_std
    grads["w_hidden"] += dx.T @ cache.inputs
    grads["b_hidden"] += dx.sum(axis=0)
    return dx @ cp.w_hidden


def embed_backward(
    graph: SchedGraph,
    cache: EmbedCache,
    ep: EmbeddingParams,
    d_mu: np.ndarray,
    grads: ModelGrads,
) -> None:
    """Reverse the synchronous iterations, accumulating into ``grads``.

    The adjoint of one round flows to the previous round's embeddings
    through the neighbor map transposed along out-edges, masked by the
    ReLU derivative.
    """
    for t in reversed(range(ep.iterations)):
        mask = cache.mu_steps[t + 1] > 0
        d_pre = d_mu * mask
        grads["w_node"] += d_pre.T @ graph.node_feat
        grads["w_edge"] += d_pre.T @ graph.edge_hist
        grads["w_neighbor"] += d_pre.T @ cache.nbr_sums[t]
        if t > 0:
            d_mu = graph.aggregate_out(d_pre @ ep.w_neighbor)


def backward(fp: ForwardPass, dlogits: np.ndarray, grads: ModelGrads) -> None:
    """Full reverse pass for one forward application; gradients accumulate."""
    if fp.clf_cache is None:
        raise LinkschedError("backward requires the cached forward pass")
    d_pool = classifier_backward(fp.clf_cache, fp.params.clf, dlogits, grads)
    for g, cache, sl in zip(fp.graphs, fp.embed_caches, fp.node_slices):
        embed_backward(g, cache, fp.params.embed, d_pool[sl], grads)


# ---------------------------------------------------------------------------
# optimizer


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


class Adam:
    """Standard bias-corrected Adam over the canonical parameter set."""

    def __init__(self, params: ModelParams, cfg: AdamConfig = AdamConfig()):
        self.cfg = cfg
        self.step_count = 0
        self.m = {name: np.zeros_like(arr) for name, arr in param_items(params)}
        self.v = {name: np.zeros_like(arr) for name, arr in param_items(params)}

    def step(self, params: ModelParams, grads: ModelGrads) -> None:
        c = self.cfg
        self.step_count += 1
        t = self.step_count
        for name, arr in param_items(params):
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m[...] = c.beta1 * m + (1 - c.beta1) * g
            v[...] = c.beta2 * v + (1 - c.beta2) * g * g
            m_hat = m / (1 - c.beta1**t)
            v_hat = v / (1 - c.beta2**t)
            arr[...] = arr - c.lr * m_hat / (np.sqrt(v_hat) + c.eps)


def adam_step(params: ModelParams, grads: ModelGrads, opt: Adam) -> None:
    opt.step(params, grads)


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"LSCHED01"
_CKPT_VERSION = 1


def save_checkpoint(path, params: ModelParams, extra: dict | None = None) -> None:
    """Binary container: magic, json header, raw float64 array bytes.

    Writing is deterministic, so identical params give identical bytes.
    """
    arrays = list(param_items(params)) + [
        (name, getattr(params.clf, name)) for name in RUNNING_STAT_NAMES
    ]
    header = {
        "version": _CKPT_VERSION,
        "arch": {
            "embed_dim": params.arch.embed_dim,
            "iterations": params.arch.iterations,
            "bits": params.arch.bits,
            "hidden": params.arch.hidden,
            "topology": str(params.arch.topology),
        },
        "arrays": [
            {"name": name, "shape": list(arr.shape)} for name, arr in arrays
        ],
        "extra": extra or {},
    }
    import json

    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(len(blob).to_bytes(8, "little"))
        fh.write(blob)
        for _, arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype=np.float64).tobytes())


def load_checkpoint(path) -> tuple[ModelParams, dict]:
    import json

    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigurationError(f"{path} is not a model checkpoint")
        size = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(size).decode())
        if header["version"] != _CKPT_VERSION:
            raise ConfigurationError(f"unsupported checkpoint version {header['version']}")
        arrays = {}
        for entry in header["arrays"]:
            shape = tuple(entry["shape"])
            n = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * n)
            arrays[entry["name"]] = np.frombuffer(buf, dtype=np.float64).reshape(shape).copy()
    arch_d = header["arch"]
    arch = ArchConfig(
        embed_dim=arch_d["embed_dim"],
        iterations=arch_d["iterations"],
        bits=arch_d["bits"],
        hidden=arch_d["hidden"],
        topology=Topology.parse(arch_d["topology"]),
    )
    embed_p = EmbeddingParams(
        w_node=arrays["w_node"],
        w_edge=arrays["w_edge"],
        w_neighbor=arrays["w_neighbor"],
        iterations=arch.iterations,
    )
    clf = ClassifierParams(
        w_hidden=arrays["w_hidden"], b_hidden=arrays["b_hidden"],
        bn_scale=arrays["bn_scale"], bn_shift=arrays["bn_shift"],
        bn_mean=arrays["bn_mean"], bn_var=arrays["bn_var"],
        w_out=arrays["w_out"], b_out=arrays["b_out"],
    )
    return ModelParams(embed=embed_p, clf=clf, arch=arch), header.get("extra", {})
