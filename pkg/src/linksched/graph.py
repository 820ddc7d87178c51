"""Graphical model of a layout: one node per pair, one directed edge per
interference link, all features one-hot over quantized distances.

Edges point from the interfering transmitter to the victim receiver, so a
node's in-edges describe the interference it receives. The in-neighbor
set is either every other node or the K transmitters nearest its
receiver; the latter keeps the embedding cost linear in L.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .netgen import NetworkLayout


@dataclass(frozen=True)
class Topology:
    """Fully-connected or K-nearest-neighbor in-edge structure."""

    kind: str  # full | knn
    k: int | None = None

    @classmethod
    def fully_connected(cls) -> "Topology":
        return cls("full")

    @classmethod
    def knn(cls, k: int) -> "Topology":
        return cls("knn", int(k))

    def validate(self) -> None:
        if self.kind == "full":
            if self.k is not None:
                raise ConfigurationError("fully-connected topology takes no K")
        elif self.kind == "knn":
            if self.k is None or self.k < 1:
                raise ConfigurationError("KNN topology needs K >= 1")
        else:
            raise ConfigurationError(f"unknown topology {self.kind!r}")

    @classmethod
    def parse(cls, text: str) -> "Topology":
        """CLI spellings: 'full' or 'knn:K'."""
        name, _, arg = text.partition(":")
        if name == "full" and not arg:
            return cls.fully_connected()
        if name == "knn" and arg:
            return cls.knn(int(arg))
        raise ConfigurationError(f"cannot parse topology spec {text!r}")

    def __str__(self) -> str:
        return self.kind if self.k is None else f"knn:{self.k}"


@dataclass(frozen=True)
class QuantizerSpec:
    """Uniform one-hot quantizer config for node and edge distances."""

    bits: int
    node_range: tuple[float, float]  # direct-link distances
    edge_range: tuple[float, float]  # interference distances

    def validate(self) -> None:
        if self.bits < 1:
            raise ConfigurationError(f"need at least 1 quantizer bit, got {self.bits}")
        for lo, hi in (self.node_range, self.edge_range):
            if hi <= lo:
                raise ConfigurationError(f"empty quantizer range [{lo}, {hi}]")

    @property
    def feat_dim(self) -> int:
        return 1 << self.bits

    @classmethod
    def for_layout_config(cls, bits: int, d_min: float, d_max: float, area_edge: float) -> "QuantizerSpec":
        """Node range follows the pairwise-distance interval, edge range the
        square. A degenerate interval (all pairwise distances equal) widens
        by 1 m each way: every node then lands in the same cell, which is
        exactly the no-node-feature situation such scenarios are meant to
        exercise."""
        if d_max <= d_min:
            node_range = (d_min - 1.0, d_max + 1.0)
        else:
            node_range = (float(d_min), float(d_max))
        return cls(bits=int(bits), node_range=node_range, edge_range=(0.0, float(area_edge)))


def quantize_index(d, lo: float, hi: float, bits: int) -> np.ndarray:
    """0-based cell indices of distances in a uniform 2^bits partition.

    Cells are [lo + i*w, lo + (i+1)*w) with the last cell closed; values
    outside the range clamp to the first/last cell.
    """
    if hi <= lo:
        raise ConfigurationError(f"empty quantizer range [{lo}, {hi}]")
    if bits < 1:
        raise ConfigurationError(f"need at least 1 quantizer bit, got {bits}")
    cells = 1 << bits
    width = (hi - lo) / cells
    idx = np.floor((np.asarray(d, dtype=np.float64) - lo) / width).astype(np.int64)
    return np.clip(idx, 0, cells - 1)


def one_hot(idx: np.ndarray, bits: int) -> np.ndarray:
    """Indicator vectors, one row per index."""
    idx = np.asarray(idx, dtype=np.int64)
    out = np.zeros(idx.shape + (1 << bits,), dtype=np.float64)
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def quantize(d: float, rng: tuple[float, float], bits: int) -> np.ndarray:
    """One-hot encoding of a single distance."""
    return one_hot(quantize_index(d, rng[0], rng[1], bits), bits)


def segment_sum(values: np.ndarray, indptr: np.ndarray, num_segments: int) -> np.ndarray:
    """Row sums of consecutive slices values[indptr[i]:indptr[i+1]].

    Handles empty segments, which reduceat cannot; summation order within
    a segment is fixed, so results are bit-reproducible.
    """
    out = np.zeros((num_segments,) + values.shape[1:], dtype=values.dtype)
    if values.shape[0] == 0:
        return out
    sizes = np.diff(indptr)
    nonempty = sizes > 0
    if not np.any(nonempty):
        return out
    starts = indptr[:-1][nonempty]
    out[nonempty] = np.add.reduceat(values, starts, axis=0)
    return out


@dataclass
class SchedGraph:
    """Immutable graph for one layout.

    Edge arrays are sorted by (destination, source); ``in_indptr`` slices
    them per destination node. ``out_order``/``out_indptr`` give the same
    edges grouped by source, which the embedding backward pass needs.
    """

    num_nodes: int
    node_feat: np.ndarray  # (L, 2^q) one-hot direct-distance features
    edge_src: np.ndarray  # (E,)
    edge_dst: np.ndarray  # (E,)
    edge_feat: np.ndarray  # (E, 2^q) one-hot cross-distance features
    in_indptr: np.ndarray  # (L+1,)
    out_order: np.ndarray  # (E,) permutation sorting edges by (src, dst)
    out_indptr: np.ndarray  # (L+1,)
    edge_hist: np.ndarray  # (L, 2^q) per-node sum of in-edge features
    spec: QuantizerSpec
    topology: Topology

    def in_neighbors(self, v: int) -> np.ndarray:
        """Source nodes of v's in-edges, ascending."""
        return self.edge_src[self.in_indptr[v] : self.in_indptr[v + 1]]

    def aggregate_in(self, per_node: np.ndarray) -> np.ndarray:
        """out[v] = sum of per_node[u] over in-neighbors u of v."""
        return segment_sum(per_node[self.edge_src], self.in_indptr, self.num_nodes)

    def aggregate_out(self, per_node: np.ndarray) -> np.ndarray:
        """Adjoint of aggregate_in: out[u] = sum over v with edge u->v."""
        gathered = per_node[self.edge_dst[self.out_order]]
        return segment_sum(gathered, self.out_indptr, self.num_nodes)

    def edge_list(self) -> list[tuple[int, int, int]]:
        """(src, dst, feature cell) triples for debugging dumps."""
        cells = np.argmax(self.edge_feat, axis=1)
        return [
            (int(s), int(d), int(c))
            for s, d, c in zip(self.edge_src, self.edge_dst, cells)
        ]


def _knn_sources(cross_dist: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Per destination v, the K transmitters nearest its receiver.

    Ties in distance break toward the lower source index (stable sort on
    the distance column).
    """
    L = cross_dist.shape[0]
    k_eff = min(k, L - 1)
    d = cross_dist.copy()
    np.fill_diagonal(d, np.inf)
    order = np.argsort(d, axis=0, kind="stable")  # order[:, v] sorts sources for v
    src = np.sort(order[:k_eff, :], axis=0)  # in-neighbor lists sorted by index
    dst = np.broadcast_to(np.arange(L), (k_eff, L))
    return src.T.ravel(), dst.T.ravel()


def build_graph(
    layout: NetworkLayout, spec: QuantizerSpec, topology: Topology
) -> SchedGraph:
    """Quantize distances and assemble the directed interference graph."""
    spec.validate()
    topology.validate()
    L = layout.num_pairs
    node_idx = quantize_index(
        layout.pair_distances(), spec.node_range[0], spec.node_range[1], spec.bits
    )
    node_feat = one_hot(node_idx, spec.bits)

    cross = layout.cross_distances()
    if topology.kind == "full" or topology.k >= L - 1:
        # enumerate (dst, src) pairs directly so edges come out sorted
        if L > 1:
            dst = np.repeat(np.arange(L), L - 1)
            src = np.concatenate([np.delete(np.arange(L), v) for v in range(L)])
        else:
            dst = np.zeros(0, dtype=np.int64)
            src = np.zeros(0, dtype=np.int64)
    else:
        src, dst = _knn_sources(cross, topology.k)

    edge_idx = quantize_index(
        cross[src, dst], spec.edge_range[0], spec.edge_range[1], spec.bits
    )
    edge_feat = one_hot(edge_idx, spec.bits)

    in_indptr = np.zeros(L + 1, dtype=np.int64)
    np.add.at(in_indptr, dst + 1, 1)
    in_indptr = np.cumsum(in_indptr)

    out_order = np.lexsort((dst, src))
    out_indptr = np.zeros(L + 1, dtype=np.int64)
    np.add.at(out_indptr, src + 1, 1)
    out_indptr = np.cumsum(out_indptr)

    edge_hist = segment_sum(edge_feat, in_indptr, L)
    return SchedGraph(
        num_nodes=L,
        node_feat=node_feat,
        edge_src=src.astype(np.int64),
        edge_dst=dst.astype(np.int64),
        edge_feat=edge_feat,
        in_indptr=in_indptr,
        out_order=out_order,
        out_indptr=out_indptr,
        edge_hist=edge_hist,
        spec=spec,
        topology=topology,
    )
