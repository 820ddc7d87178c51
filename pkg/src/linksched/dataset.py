"""Dataset persistence: line-delimited JSON records plus TSV result tables.

A dataset file starts with a header line and then carries one record per
line with the fields ``L, d_area, d_min, d_max, seed, tx, rx,
shadowing_std`` and optionally ``label`` (0/1 array) and ``oracle``
(label provenance, ``{kind, params}``). Coordinates serialize as JSON
doubles, which round-trip exactly.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import InputError
from .netgen import (
    ChannelConfig,
    ChannelMatrix,
    LayoutConfig,
    NetworkLayout,
    compute_channel,
    derived_seed,
    generate_layout,
)

DATASET_FORMAT = "linksched-dataset"
DATASET_VERSION = 1

# Stream tag for per-record seeds drawn from one dataset base seed.
STREAM_DATASET_RECORD = 7


@dataclass
class LayoutRecord:
    """One layout plus the channel variability and label it was stored with."""

    layout: NetworkLayout
    shadowing_std: float = 0.0
    label: np.ndarray | None = None
    oracle: dict | None = None

    @property
    def num_pairs(self) -> int:
        return self.layout.num_pairs

    def channel_config(self, base: ChannelConfig) -> ChannelConfig:
        return replace(base, shadowing_std_db=float(self.shadowing_std))

    def channel(self, base: ChannelConfig) -> ChannelMatrix:
        """Channel matrix for this record; shadowing draws come from the
        record's own seed, so labels and later evaluations agree."""
        return compute_channel(self.layout, self.channel_config(base))


def generate_records(
    count: int,
    cfg: LayoutConfig,
    base_seed: int,
    shadowing_std: float = 0.0,
) -> list[LayoutRecord]:
    """Draw ``count`` independent layouts; record i's seed derives from
    (base_seed, i) so any record regenerates on its own."""
    records = []
    for i in range(count):
        seed = derived_seed(base_seed, STREAM_DATASET_RECORD * 1_000_003 + i)
        layout = generate_layout(cfg, rng_seed=seed)
        records.append(LayoutRecord(layout=layout, shadowing_std=float(shadowing_std)))
    return records


def _record_to_json(rec: LayoutRecord) -> dict:
    cfg = rec.layout.config
    d = {
        "L": cfg.num_pairs,
        "d_area": cfg.area_edge,
        "d_min": cfg.d_min,
        "d_max": cfg.d_max,
        "seed": cfg.seed,
        "tx": rec.layout.tx_pos.tolist(),
        "rx": rec.layout.rx_pos.tolist(),
        "shadowing_std": rec.shadowing_std,
    }
    if rec.label is not None:
        d["label"] = [int(x) for x in rec.label]
    if rec.oracle is not None:
        d["oracle"] = rec.oracle
    return d


def _record_from_json(d: dict) -> LayoutRecord:
    try:
        cfg = LayoutConfig(
            num_pairs=int(d["L"]),
            area_edge=float(d["d_area"]),
            d_min=float(d["d_min"]),
            d_max=float(d["d_max"]),
            seed=int(d["seed"]),
        )
        layout = NetworkLayout(
            tx_pos=np.asarray(d["tx"], dtype=np.float64),
            rx_pos=np.asarray(d["rx"], dtype=np.float64),
            config=cfg,
        )
        label = d.get("label")
        return LayoutRecord(
            layout=layout,
            shadowing_std=float(d.get("shadowing_std", 0.0)),
            label=None if label is None else np.asarray(label, dtype=np.int64),
            oracle=d.get("oracle"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"malformed dataset record: {exc}") from exc


def write_dataset(path, records: list[LayoutRecord]) -> None:
    header = {
        "format": DATASET_FORMAT,
        "version": DATASET_VERSION,
        "count": len(records),
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for rec in records:
            fh.write(json.dumps(_record_to_json(rec), sort_keys=True) + "\n")


def read_dataset(path) -> list[LayoutRecord]:
    try:
        with open(path) as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise InputError(f"cannot read dataset {path}: {exc}") from exc
    if not lines:
        raise InputError(f"{path} is empty, expected a dataset header")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise InputError(f"{path} has no valid header line: {exc}") from exc
    if header.get("format") != DATASET_FORMAT:
        raise InputError(f"{path} is not a {DATASET_FORMAT} file")
    if header.get("version") != DATASET_VERSION:
        raise InputError(f"unsupported dataset version {header.get('version')}")
    records = [_record_from_json(json.loads(line)) for line in lines[1:] if line]
    if header.get("count") is not None and header["count"] != len(records):
        raise InputError(
            f"{path} header promises {header['count']} records, found {len(records)}"
        )
    return records


# ---------------------------------------------------------------------------
# TSV tables (training history, evaluation reports, sweep results)


def format_cell(value) -> str:
    if value is None:
        return "NA"
    if isinstance(value, float):
        if math.isnan(value):
            return "NA"
        return repr(value)
    return str(value)


def write_table(path, columns: list[str], rows: list[list]) -> None:
    with open(path, "w") as fh:
        fh.write("\t".join(columns) + "\n")
        for row in rows:
            fh.write("\t".join(format_cell(v) for v in row) + "\n")


def read_table(path) -> tuple[list[str], list[list[str]]]:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise InputError(f"{path} is empty, expected a table header")
    columns = lines[0].split("\t")
    return columns, [line.split("\t") for line in lines[1:] if line]
