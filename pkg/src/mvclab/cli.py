"""Command-line front end.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import replace
from importlib import resources
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from . import __version__
from . import networks as nets
from .data import SyntheticSpec, ViewSet, apply_miss_mask, load_viewset, save_viewset, \
    synth_multiview
from .losses import LossConfig
from .metrics import evaluate
from .presets import UnknownPresetError, get_preset
from .training import (BIVIEW_VARIANTS, TABLE1_GRID, VARIANTS, TrainConfig, biview_embeddings,
                       mean_report, run_ablation, run_trials, train_biview,
                       train_mcmvc_plus_plus)
from .data import normalize_minmax

log = logging.getLogger("mvclab")


class UsageError(Exception):
    pass


# -- helpers ----------------------------------------------------------------------------------------

def _int_list(text: str) -> List[int]:
    try:
        return [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers: {text!r}")


def _float_list(text: str) -> List[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of numbers: {text!r}")


def _load_data(spec: str) -> ViewSet:
    if spec == "smoke":
        return load_viewset(resources.files("mvclab") / "datasets" / "smoke")
    return load_viewset(spec)


def _merge(cfg: TrainConfig, overrides: dict) -> TrainConfig:
    d = cfg.to_dict()
    for key, val in overrides.items():
        if key == "loss":
            d["loss"] = {**d["loss"], **val}
        else:
            d[key] = val
    return TrainConfig.from_dict(d)


def resolve_config(name: Optional[str]) -> TrainConfig:
    """Preset name, or a JSON file holding TrainConfig fields (optionally a base ``preset``)."""
    if name is None:
        return get_preset("desk-biview")
    path = Path(name)
    if name.endswith(".json") or path.is_file():
        try:
            d = json.loads(path.read_text())
        except FileNotFoundError:
            raise UsageError(f"config file not found: {name}")
        except json.JSONDecodeError as exc:
            raise UsageError(f"{name}: invalid JSON ({exc})")
        base = d.pop("preset", "desk-biview")
        try:
            return _merge(get_preset(base), d)
        except UnknownPresetError as exc:
            raise UsageError(str(exc.args[0]))
        except (TypeError, ValueError) as exc:
            raise UsageError(f"{name}: {exc}")
    try:
        return get_preset(name)
    except UnknownPresetError as exc:
        raise UsageError(str(exc.args[0]))


def _apply_common(cfg: TrainConfig, args) -> TrainConfig:
    if getattr(args, "epochs", None) is not None:
        cfg = replace(cfg, epochs=args.epochs)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _prepare(vs: ViewSet, eta: Optional[float], seed: int):
    """Apply the miss-rate protocol; returns (viewset, incomplete flag)."""
    if eta is not None and eta > 0:
        vs = apply_miss_mask(vs, eta, seed=seed)
    incomplete = vs.mask is not None and not vs.mask.all()
    return vs, incomplete


def config_hash(payload: dict) -> str:
    text = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def _write_labels(path: Path, labels) -> None:
    path.write_text("".join(f"{int(l)}\n" for l in labels))


# -- commands ---------------------------------------------------------------------------------------

def cmd_synth(args) -> int:
    if len(args.dims) < 2:
        raise UsageError("--dims needs at least two views (e.g. 10,15)")
    try:
        spec = SyntheticSpec(clusters=args.clusters, per_cluster=args.per_cluster, dims=args.dims,
                             latent_dim=args.latent_dim, nuisance_dim=args.nuisance_dim,
                             nuisance_scale=args.nuisance_scale, noise=args.noise,
                             separation=args.separation, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc))
    vs = synth_multiview(spec)
    if args.miss_rate:
        vs = apply_miss_mask(vs, args.miss_rate, seed=args.seed)
    save_viewset(vs, args.out)
    print(args.out)
    return 0


def _train_once(vs: ViewSet, cfg: TrainConfig, variant: str, incomplete: bool):
    if variant in BIVIEW_VARIANTS:
        model, history, labels = train_biview(vs, cfg, variant, incomplete)
        return model, history, labels, "biview"
    model, history, result = train_mcmvc_plus_plus(vs, cfg, enhance=variant == "mcmvc-plus-plus",
                                                   variant=variant)
    return model, history, result.labels, "multiview"


def cmd_train(args) -> int:
    if args.replay:
        manifest = json.loads(Path(args.replay).read_text())
        cfg = TrainConfig.from_dict(manifest["config"])
        data, variant, eta = manifest["data"], manifest["variant"], manifest["incomplete_eta"]
    else:
        cfg = _apply_common(resolve_config(args.config), args)
        data, variant, eta = args.data, args.variant, args.incomplete_eta
    if data is None:
        raise UsageError("--data is required")
    vs, incomplete = _prepare(_load_data(data), eta, cfg.seed)
    payload = {"config": cfg.to_dict(), "variant": variant, "incomplete_eta": eta, "data": data}
    run_dir = Path(args.out) / f"run-{config_hash({**payload, 'seed': None})}-seed{cfg.seed}"
    run_dir.mkdir(parents=True, exist_ok=True)
    started = time.strftime("%Y-%m-%dT%H:%M:%S")
    model, history, labels, kind = _train_once(vs, cfg, variant, incomplete)
    outputs = {"losses": "losses.csv", "metrics": "metrics.csv", "labels": "labels.csv",
               "checkpoint": "checkpoint.json"}
    history.write_losses(run_dir / outputs["losses"])
    history.write_metrics(run_dir / outputs["metrics"])
    _write_labels(run_dir / outputs["labels"], labels)
    nets.save_checkpoint(model, run_dir / outputs["checkpoint"],
                         extra={"kind": kind, "variant": variant, "normalize": cfg.normalize,
                                "incomplete": incomplete})
    manifest = {**payload, "seeds": [cfg.seed], "version": f"mvclab-{__version__}",
                "started": started, "finished": time.strftime("%Y-%m-%dT%H:%M:%S"),
                "stages": history.stages, "outputs": outputs}
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    if vs.labels is not None:
        print(json.dumps({"run_dir": str(run_dir), **evaluate(labels, vs.labels).to_dict()}))
    else:
        print(json.dumps({"run_dir": str(run_dir)}))
    return 0


_TABLE_COLS = ["Baseline", "L_ins", "L_var", "L_cla", "ACC", "NMI", "ARI", "PUR"]


def _load_grid(text: str):
    if text == "table1":
        return TABLE1_GRID
    try:
        grid = json.loads(Path(text).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"--grid must be 'table1' or a JSON file: {exc}")
    if not isinstance(grid, list) or not all(isinstance(r, dict) for r in grid):
        raise UsageError("grid JSON must be a list of {ins, var, cla} objects")
    return grid


def _print_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    widths = [max(len(str(x)) for x in col) for col in zip(header, *rows)]
    for r in [header, *rows]:
        print("  ".join(str(x).rjust(w) for x, w in zip(r, widths)))


def cmd_ablate(args) -> int:
    cfg = _apply_common(resolve_config(args.config), args)
    grid = _load_grid(args.grid)
    if args.variant == "mcmvc-i":
        cfg = replace(cfg, loss=replace(cfg.loss, instance_variant="infonce"))
    vs, incomplete = _prepare(_load_data(args.data), args.incomplete_eta, cfg.seed)
    try:
        results = run_ablation(vs, cfg, grid, runs=args.runs, incomplete=incomplete)
    except ValueError as exc:
        if "unknown activation" in str(exc):
            raise UsageError(str(exc))
        raise
    rows = []
    for row, r in results:
        flags = ["x", *("x" if row.get(k) else "" for k in ("ins", "var", "cla"))]
        rows.append([*flags, *(f"{getattr(r, k) * 100:.2f}" for k in ("acc", "nmi", "ari", "pur"))])
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(_TABLE_COLS)
            w.writerows(rows)
    _print_table(_TABLE_COLS, rows)
    return 0


def _read_labels(path: str) -> np.ndarray:
    try:
        return np.loadtxt(path, dtype=np.int64, ndmin=1)
    except (OSError, ValueError) as exc:
        raise ValueError(f"cannot read labels from {path}: {exc}")


def cmd_score(args) -> int:
    pred, truth = _read_labels(args.pred), _read_labels(args.true)
    if pred.size != truth.size:
        raise ValueError(f"label length mismatch: {args.pred} has {pred.size} rows, "
                         f"{args.true} has {truth.size}")
    print(evaluate(pred, truth).to_json())
    return 0


_SWEEP_TRAIN = {"lr": float, "epochs": int, "batch_size": int}
_SWEEP_LOSS = {f: float for f in LossConfig.__dataclass_fields__
               if f not in ("instance_variant", "info_within_view")}


def cmd_sweep(args) -> int:
    if args.param not in _SWEEP_LOSS and args.param not in _SWEEP_TRAIN:
        raise UsageError(f"unknown parameter {args.param!r}; choose from "
                         f"{sorted([*_SWEEP_LOSS, *_SWEEP_TRAIN])}")
    cfg = _apply_common(resolve_config(args.config), args)
    vs, incomplete = _prepare(_load_data(args.data), args.incomplete_eta, cfg.seed)
    rows = []
    for value in args.values:
        if args.param in _SWEEP_TRAIN:
            c = replace(cfg, **{args.param: _SWEEP_TRAIN[args.param](value)})
        else:
            c = replace(cfg, loss=replace(cfg.loss, **{args.param: value}))
        r = mean_report(run_trials(vs, c, args.variant, args.runs, incomplete))
        rows.append([f"{value:g}", *(f"{getattr(r, k):.6f}" for k in ("acc", "nmi", "ari", "pur"))])
    header = [args.param, "acc", "nmi", "ari", "pur"]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            w.writerows(rows)
    _print_table(header, rows)
    return 0


def cmd_export_embeddings(args) -> int:
    model = nets.load_checkpoint(args.checkpoint)
    extra = nets.load_checkpoint_extra(args.checkpoint)
    vs = _load_data(args.data)
    if vs.n_views != model.n_views:
        raise ValueError(f"checkpoint has {model.n_views} encoders, data has {vs.n_views} views")
    for v, d in enumerate(vs.dims):
        want = model.specs[f"enc{v}"].widths[0]
        if d != want:
            raise ValueError(f"view {v}: checkpoint expects {want} features, data has {d}")
    if extra.get("normalize", True):
        vs = normalize_minmax(vs)
    if extra.get("kind") == "biview" and model.has("dual0"):
        zs = biview_embeddings(model, vs.views, vs.mask)
    else:
        zs = nets.embed(model, vs.views)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for v, z in enumerate(zs):
        np.savetxt(out / f"z{v}.csv", z, delimiter=",", fmt="%.17g")
    if vs.labels is not None:
        _write_labels(out / "labels.csv", vs.labels)
    print(out)
    return 0


# -- parser -----------------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mvclab", description="Multi-view clustering experiments.")
    p.add_argument("--version", action="version", version=f"mvclab {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write a synthetic multi-view dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--clusters", type=int, default=3)
    s.add_argument("--per-cluster", type=int, default=100)
    s.add_argument("--dims", type=_int_list, default=[10, 15])
    s.add_argument("--latent-dim", type=int, default=4)
    s.add_argument("--nuisance-dim", type=int, default=5)
    s.add_argument("--nuisance-scale", type=float, default=1.0)
    s.add_argument("--noise", type=float, default=0.1)
    s.add_argument("--separation", type=float, default=4.0)
    s.add_argument("--miss-rate", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    def training_flags(q, variant_default="mcmvc-m"):
        q.add_argument("--data", help="dataset directory, or 'smoke' for the bundled set")
        q.add_argument("--config", help="preset name or JSON file")
        q.add_argument("--variant", choices=VARIANTS, default=variant_default)
        q.add_argument("--incomplete-eta", type=float, default=None)
        q.add_argument("--seed", type=int, default=None)
        q.add_argument("--epochs", type=int, default=None, help="override the epoch count")

    t = sub.add_parser("train", help="train one model and write a run directory")
    training_flags(t)
    t.add_argument("--out", default="runs")
    t.add_argument("--replay", help="re-run from a manifest.json")
    t.set_defaults(func=cmd_train)

    a = sub.add_parser("ablate", help="run the term-activation grid")
    training_flags(a)
    a.add_argument("--grid", default="table1")
    a.add_argument("--runs", type=int, default=5)
    a.add_argument("--out", help="CSV path")
    a.set_defaults(func=cmd_ablate)

    c = sub.add_parser("score", help="score predicted labels against ground truth")
    c.add_argument("--pred", required=True)
    c.add_argument("--true", required=True)
    c.set_defaults(func=cmd_score)

    w = sub.add_parser("sweep", help="average metrics over a one-parameter grid")
    training_flags(w)
    w.add_argument("--param", required=True)
    w.add_argument("--values", type=_float_list, required=True)
    w.add_argument("--runs", type=int, default=5)
    w.add_argument("--out", help="CSV path")
    w.set_defaults(func=cmd_sweep)

    e = sub.add_parser("export-embeddings", help="write per-view embeddings from a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_export_embeddings)
    return p


def _threads() -> int:
    raw = os.environ.get("MVCLAB_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"MVCLAB_THREADS must be an integer, got {raw!r}")
    if n < 1:
        raise UsageError("MVCLAB_THREADS must be at least 1")
    return n


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)      # exits with 2 on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from threadpoolctl import threadpool_limits
    try:
        with threadpool_limits(limits=_threads()):
            return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"mvclab: error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError, RuntimeError) as exc:
        print(f"mvclab: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
