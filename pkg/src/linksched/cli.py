"""Command-line entry points: gen, label, train, eval, repro, dumpgraph.

Every command writes a manifest next to its main output listing the
resolved configuration, the seeds, and a content hash of every file it
read or produced, so any artifact can be regenerated and checked.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import time
from dataclasses import asdict, replace

import numpy as np

from . import __version__
from .baselines import OracleKind, label_dataset, select_strongest_fraction
from .dataset import (
    LayoutRecord,
    generate_records,
    read_dataset,
    read_table,
    write_dataset,
    write_table,
)
from .embednn import load_checkpoint, save_checkpoint
from .errors import CompatibilityError, ConfigurationError, InputError, LinkschedError
from .graph import QuantizerSpec, Topology, build_graph
from .netgen import ChannelConfig, LayoutConfig, derived_seed
from .trainer import (
    HISTORY_COLUMNS,
    SWEEP_COLUMNS,
    EvalReport,
    ExperimentSpec,
    TrainConfig,
    evaluate,
    evaluate_baseline,
    run_experiment,
    train,
    train_unsupervised_tuned,
)


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _args_config(args) -> dict:
    return {k: v for k, v in vars(args).items() if k != "func"}


def write_manifest(out_path, command: str, config: dict, inputs: list, outputs: list, started: float) -> None:
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "inputs": {str(p): file_sha256(p) for p in inputs},
        "outputs": {str(p): file_sha256(p) for p in outputs},
        "wall_s": round(time.time() - started, 3),
    }
    with open(f"{out_path}.manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)


def _channel_config(args) -> ChannelConfig:
    return ChannelConfig(
        noise_psd_dbm_hz=args.noise_psd,
        bandwidth_hz=args.bandwidth,
        carrier_freq_hz=args.carrier_freq,
        antenna_height_m=args.antenna_height,
        tx_power_dbm=args.tx_power,
    )


def _add_channel_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--noise-psd", type=float, default=-169.0, dest="noise_psd",
                   help="noise spectral density, dBm/Hz")
    p.add_argument("--bandwidth", type=float, default=5e6, help="Hz")
    p.add_argument("--carrier-freq", type=float, default=2.4e9, dest="carrier_freq", help="Hz")
    p.add_argument("--antenna-height", type=float, default=1.5, dest="antenna_height", help="m")
    p.add_argument("--tx-power", type=float, default=40.0, dest="tx_power", help="dBm")


# ---------------------------------------------------------------------------


def cmd_gen(args) -> int:
    started = time.time()
    cfg = LayoutConfig(
        num_pairs=args.pairs,
        area_edge=args.area,
        d_min=args.dmin,
        d_max=args.dmax,
        seed=args.seed,
    )
    cfg.validate()
    records = generate_records(args.num_layouts, cfg, base_seed=args.seed,
                               shadowing_std=args.shadowing_std)
    write_dataset(args.out, records)
    write_manifest(args.out, "gen", _args_config(args) | {"resolved_layout": asdict(cfg)},
                   inputs=[], outputs=[args.out], started=started)
    print(f"wrote {len(records)} layouts to {args.out}")
    return 0


def cmd_label(args) -> int:
    started = time.time()
    records = read_dataset(args.inp)
    oracle = OracleKind.parse(args.oracle)
    ch = _channel_config(args)
    if records:
        # labels must see the same shadowing draw the records were stored with
        ch = replace(ch, shadowing_std_db=records[0].shadowing_std)
    labeled = label_dataset([r.layout for r in records], ch, oracle)
    for rec, (_, sched) in zip(records, labeled):
        rec.label = sched.rho
        rec.oracle = oracle.as_dict()
    write_dataset(args.out, records)
    write_manifest(args.out, "label", _args_config(args), inputs=[args.inp],
                   outputs=[args.out], started=started)
    print(f"labeled {len(records)} layouts with oracle {oracle}")
    return 0


def cmd_train(args) -> int:
    started = time.time()
    records = read_dataset(args.inp)
    if not records:
        raise InputError(f"{args.inp} holds no layouts")
    mode = {"sup": "supervised", "unsup": "unsupervised"}[args.mode]
    topology = Topology.parse(args.topology)
    ch = _channel_config(args)
    cfg = TrainConfig(
        mode=mode,
        epochs_max=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        patience=args.patience,
        val_fraction=args.val_fraction,
        w_loss=args.w_loss,
        seed=args.seed,
        iterations=args.T,
        embed_dim=args.p,
        bits=args.q,
        hidden=args.hidden,
        topology=topology,
        channel=ch,
    )
    if mode == "unsupervised" and args.tune_w_loss:
        result = train_unsupervised_tuned(records, cfg)
    else:
        result = train(records, cfg)
    cfg_hash = hashlib.sha256(
        json.dumps(_args_config(args), sort_keys=True, default=str).encode()
    ).hexdigest()
    extra = {
        "quantizer": {
            "bits": result.quantizer.bits,
            "node_range": list(result.quantizer.node_range),
            "edge_range": list(result.quantizer.edge_range),
        },
        "config_hash": cfg_hash,
        "w_loss": result.w_loss,
        "best_epoch": result.best_epoch,
        "mode": mode,
    }
    save_checkpoint(args.out_model, result.params, extra=extra)
    history_path = args.history or f"{args.out_model}.history.tsv"
    write_table(history_path, HISTORY_COLUMNS, [h.as_row() for h in result.history])
    write_manifest(args.out_model, "train", _args_config(args), inputs=[args.inp],
                   outputs=[args.out_model, history_path], started=started)
    best = result.history[result.best_epoch]
    print(
        f"trained {mode} model: best epoch {result.best_epoch} "
        f"val_ratio={best.val_ratio:.4f} -> {args.out_model}"
    )
    return 0


def cmd_eval(args) -> int:
    started = time.time()
    params, extra = load_checkpoint(args.model)
    records = read_dataset(args.test)
    if args.q is not None and args.q != params.arch.bits:
        raise CompatibilityError(
            f"checkpoint was trained with q={params.arch.bits}, flags request q={args.q}"
        )
    if args.topology is not None:
        topo = Topology.parse(args.topology)
        if topo != params.arch.topology:
            raise CompatibilityError(
                f"checkpoint topology {params.arch.topology} does not match {topo}"
            )
    quantizer = None
    if extra.get("quantizer"):
        qd = extra["quantizer"]
        quantizer = QuantizerSpec(
            bits=qd["bits"],
            node_range=tuple(qd["node_range"]),
            edge_range=tuple(qd["edge_range"]),
        )
    oracle = OracleKind.parse(args.oracle) if args.oracle else None
    ch = _channel_config(args)
    report = evaluate(params, records, ch, oracle=oracle, quantizer=quantizer)
    write_table(args.report, list(EvalReport.PER_LAYOUT_COLUMNS), report.rows())
    write_manifest(args.report, "eval", _args_config(args), inputs=[args.model, args.test],
                   outputs=[args.report], started=started)
    print(report.summary())
    return 0


def cmd_dumpgraph(args) -> int:
    records = read_dataset(args.inp)
    if not (0 <= args.index < len(records)):
        raise InputError(f"record index {args.index} out of range (0..{len(records)-1})")
    rec = records[args.index]
    cfg = rec.layout.config
    spec = QuantizerSpec.for_layout_config(args.q, cfg.d_min, cfg.d_max, cfg.area_edge)
    graph = build_graph(rec.layout, spec, Topology.parse(args.topology))
    node_cells = np.argmax(graph.node_feat, axis=1)
    for v in range(graph.num_nodes):
        print(f"node {v} cell {int(node_cells[v])}")
    for src, dst, cell in graph.edge_list():
        print(f"edge {src} -> {dst} cell {cell}")
    return 0


# ---------------------------------------------------------------------------
# reproduction sweeps


def _base_spec(args, name: str, **overrides) -> ExperimentSpec:
    layout = LayoutConfig(
        num_pairs=overrides.pop("num_pairs", 50),
        d_min=overrides.pop("d_min", 2.0),
        d_max=overrides.pop("d_max", 65.0),
        area_edge=500.0,
        seed=args.seed,
    )
    cfg = TrainConfig(
        mode=overrides.pop("mode", "supervised"),
        epochs_max=args.epochs,
        patience=args.patience,
        seed=args.seed,
        channel=_channel_config(args),
        iterations=overrides.pop("iterations", 2),
        bits=overrides.pop("bits", 3),
        topology=overrides.pop("topology", Topology.fully_connected()),
    )
    return ExperimentSpec(
        name=name,
        layout=layout,
        train_cfg=cfg,
        train_layouts=args.train_layouts,
        test_layouts=args.test_layouts,
        seed=args.seed,
        **overrides,
    )


def _repro_specs(args) -> list[ExperimentSpec]:
    table = args.table
    if table == "T":
        return [_base_spec(args, f"T={t}", iterations=t) for t in (1, 2, 3, 4, 5)]
    if table == "q":
        return [_base_spec(args, f"q={q}", bits=q) for q in (2, 3, 4, 5, 6)]
    if table == "K":
        specs = [
            _base_spec(args, f"K={k}", topology=Topology.knn(k)) for k in (10, 20, 30, 40)
        ]
        specs.append(_base_spec(args, "K=49 (full)"))
        return specs
    if table == "L":
        sizes = [10, 30, 50, 80, 100] + ([500] if args.big else [])
        return [_base_spec(args, f"L={n}", num_pairs=n) for n in sizes]
    if table == "dist":
        ranges = [(2, 65), (10, 50), (30, 70), (30, 30)]
        return [
            _base_spec(args, f"d={lo}-{hi}", d_min=float(lo), d_max=float(hi))
            for lo, hi in ranges
        ]
    raise ConfigurationError(f"unknown repro table {table!r}")


def _repro_shadow(args) -> list[dict]:
    """Shadowing rows: per std, a model trained at that std (full) and the
    no-shadowing model applied to the shadowed test set (generalization)."""
    stds = (0.0, 3.0, 5.0, 8.0, 10.0)
    rows = []
    base = None
    for std in stds:
        spec = _base_spec(args, f"shadow={std:g} full",
                          test_shadowing=std)
        rows.append(run_experiment(spec))
    # generalization: one clean-channel model, shadowed test sets
    from .baselines import default_oracle, run_oracle
    from .trainer import train as train_fn

    spec0 = _base_spec(args, "shadow-gen base")
    oracle = default_oracle(spec0.layout.num_pairs)
    train_records = generate_records(
        spec0.train_layouts, spec0.layout,
        base_seed=derived_seed(args.seed, 10), shadowing_std=0.0,
    )
    for rec in train_records:
        rec.label = run_oracle(rec.channel(spec0.train_cfg.channel), oracle).rho
    result = train_fn(train_records, spec0.train_cfg)
    for std in stds:
        test_records = generate_records(
            spec0.test_layouts, spec0.layout,
            base_seed=derived_seed(args.seed, 11), shadowing_std=std,
        )
        report = evaluate(result.params, test_records, spec0.train_cfg.channel,
                          oracle=oracle, quantizer=result.quantizer)
        rows.append({
            "name": f"shadow={std:g} generalization",
            "L": spec0.layout.num_pairs,
            "d_min": spec0.layout.d_min, "d_max": spec0.layout.d_max,
            "mode": "supervised", "topology": str(spec0.train_cfg.topology),
            "iterations": spec0.train_cfg.iterations, "bits": spec0.train_cfg.bits,
            "shadowing_train": 0.0, "shadowing_test": std,
            "oracle": str(oracle), "w_loss": 0.0,
            "accuracy": report.accuracy, "ratio": report.avg_ratio,
            "activation": report.mean_activation,
            "epochs": len(result.history), "error": None,
        })
    return rows


def _repro_algos(args) -> list[dict]:
    """Algorithm comparison on one shared test set."""
    from .baselines import default_oracle, run_oracle
    from .netgen import sum_rate

    spec = _base_spec(args, "learned")
    oracle = default_oracle(spec.layout.num_pairs)
    row_learned = run_experiment(spec)
    rows = [row_learned]
    test_records = generate_records(
        spec.test_layouts, spec.layout,
        base_seed=derived_seed(args.seed, 11), shadowing_std=0.0,
    )
    val_records = generate_records(
        50, spec.layout, base_seed=derived_seed(args.seed, 12), shadowing_std=0.0,
    )
    ch = spec.train_cfg.channel
    val_channels = [r.channel(ch) for r in val_records]
    val_rates = [sum_rate(c, run_oracle(c, oracle))[0] for c in val_channels]
    strongest = select_strongest_fraction(val_channels, val_rates)
    baselines = [
        ("greedy", OracleKind.greedy()),
        (f"strongest (f={strongest.param:g})", strongest),
        ("random", OracleKind.random_active(0.5)),
        ("all-active", OracleKind.all_active()),
        ("oracle", oracle),
    ]
    for name, kind in baselines:
        report = evaluate_baseline(kind, test_records, ch, oracle=oracle)
        rows.append({
            "name": name,
            "L": spec.layout.num_pairs,
            "d_min": spec.layout.d_min, "d_max": spec.layout.d_max,
            "mode": "-", "topology": "-", "iterations": 0, "bits": 0,
            "shadowing_train": 0.0, "shadowing_test": 0.0,
            "oracle": str(oracle), "w_loss": 0.0,
            "accuracy": report.accuracy, "ratio": report.avg_ratio,
            "activation": report.mean_activation, "epochs": 0, "error": None,
        })
    return rows


def cmd_repro(args) -> int:
    started = time.time()
    if args.table == "shadow":
        rows = _repro_shadow(args)
    elif args.table == "algos":
        rows = _repro_algos(args)
    else:
        specs = _repro_specs(args)
        rows = [run_experiment(s) for s in specs]
    out = args.out or f"repro_{args.table}.tsv"
    write_table(out, SWEEP_COLUMNS, [[r[c] for c in SWEEP_COLUMNS] for r in rows])
    write_manifest(out, f"repro:{args.table}", _args_config(args), inputs=[], outputs=[out],
                   started=started)
    for r in rows:
        status = r["error"] or f"ratio={r['ratio']:.4f} accuracy={r['accuracy']:.4f}"
        print(f"{r['name']:28s} {status}")
    failed = [r for r in rows if r["error"]]
    if failed:
        print(f"{len(failed)} of {len(rows)} runs failed", file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="linksched",
        description="Graph-embedding link scheduling for D2D networks",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a layout dataset")
    p.add_argument("--num-layouts", type=int, required=True, dest="num_layouts")
    p.add_argument("--pairs", type=int, default=50)
    p.add_argument("--area", type=float, default=500.0)
    p.add_argument("--dmin", type=float, default=2.0)
    p.add_argument("--dmax", type=float, default=65.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--shadowing-std", type=float, default=0.0, dest="shadowing_std")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("label", help="label a dataset with a scheduling oracle")
    p.add_argument("--in", required=True, dest="inp")
    p.add_argument("--oracle", default="greedy", help="brute | greedy | local")
    p.add_argument("--out", required=True)
    _add_channel_flags(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", help="train the scheduling model")
    p.add_argument("--in", required=True, dest="inp")
    p.add_argument("--mode", choices=("sup", "unsup"), default="sup")
    p.add_argument("--T", type=int, default=2, help="embedding iterations")
    p.add_argument("--p", type=int, default=32, help="embedding dimension")
    p.add_argument("--q", type=int, default=3, help="quantization bits")
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--topology", default="full", help="full or knn:K")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--batch-size", type=int, default=16, dest="batch_size")
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--val-fraction", type=float, default=0.1, dest="val_fraction")
    p.add_argument("--w-loss", type=float, default=0.0, dest="w_loss")
    p.add_argument("--tune-w-loss", action="store_true", dest="tune_w_loss")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out-model", required=True, dest="out_model")
    p.add_argument("--history", default=None)
    _add_channel_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a test dataset")
    p.add_argument("--model", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--oracle", default=None)
    p.add_argument("--report", required=True)
    p.add_argument("--q", type=int, default=None, help="compatibility check")
    p.add_argument("--topology", default=None, help="compatibility check")
    _add_channel_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("repro", help="run a reproduction sweep table")
    p.add_argument("--table", required=True,
                   choices=("T", "q", "K", "L", "dist", "shadow", "algos"))
    p.add_argument("--out", default=None)
    p.add_argument("--train-layouts", type=int, default=500, dest="train_layouts")
    p.add_argument("--test-layouts", type=int, default=1000, dest="test_layouts")
    p.add_argument("--epochs", type=int, default=150)
    p.add_argument("--patience", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--big", action="store_true", help="include the L=500 row")
    _add_channel_flags(p)
    p.set_defaults(func=cmd_repro)

    p = sub.add_parser("dumpgraph", help="dump one layout's graph as an edge list")
    p.add_argument("--in", required=True, dest="inp")
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--q", type=int, default=3)
    p.add_argument("--topology", default="full")
    p.set_defaults(func=cmd_dumpgraph)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except LinkschedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
