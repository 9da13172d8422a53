"""Command line entry point: ``parsehier <command> ...``.

Commands: synth, train, infer, baseline, eval, report, replay. Every command
writes a ``manifest.json`` (or ``<checkpoint>.manifest.json`` for train) that
``parsehier replay`` can re-run. Exit codes: 0 ok, 1 runtime failure, 2 bad
usage or input.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .baselines import K_PRESETS, METHODS, BaselineConfig, build_baseline_partonomy
from .boundaries import BoundaryConfig, extract_boundaries, preset
from .datasets import (
    FeatureSequence,
    FormatError,
    SynthConfig,
    SynthConfigError,
    generate_synthetic,
    read_annotation,
    read_features,
    write_annotation,
    write_features,
)
from .metrics import MetricReport, aggregate, evaluate, format_table
from .nn_core import NonFiniteError, ShapeError
from .partonomy import from_boundaries, validate
from .stack import (
    CheckpointError,
    ConfigError,
    StackConfig,
    infer_stream,
    load_checkpoint,
    save_checkpoint,
    train_stream,
)

log = logging.getLogger("parsehier")


class UsageError(Exception):
    """Bad flags or unusable input files (exit code 2)."""


# ---------------------------------------------------------------------------
# helpers


def _ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str) -> List[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _env_int(name: str, default: int) -> int:
    val = os.environ.get(name)
    if val is None or val == "":
        return default
    try:
        return int(val)
    except ValueError:
        raise UsageError(f"environment variable {name} must be an integer, got {val!r}")


def _expand(paths: Sequence[str], suffix: str) -> List[Path]:
    out: List[Path] = []
    for p in paths:
        path = Path(p)
        if path.is_dir():
            out += sorted(path.glob(f"*{suffix}"))
        elif path.exists():
            out.append(path)
        else:
            raise UsageError(f"no such file or directory: {p}")
    return out


def _write_manifest(path: Path, args: argparse.Namespace, config: dict, inputs: Sequence,
                    checkpoint: Optional[str] = None) -> None:
    manifest = {
        "tool": "parsehier",
        "version": __version__,
        "command": args.command,
        "argv": list(args._argv),
        "cwd": os.getcwd(),
        "config": config,
        "seed": getattr(args, "seed", None),
        "inputs": [str(p) for p in inputs],
        "checkpoint": checkpoint,
        "output": str(getattr(args, "out", "")),
    }
    path.write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _run_jobs(fn: Callable, items: Sequence, jobs: int) -> list:
    if jobs <= 1 or len(items) <= 1:
        return [fn(*it) for it in items]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(fn, *zip(*items)))


def _echo(config: dict) -> None:
    print("effective config: " + json.dumps(config, sort_keys=True), file=sys.stderr)


# ---------------------------------------------------------------------------
# synth


def cmd_synth(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    durations = args.mean_durations
    if len(durations) != args.levels:
        raise UsageError(f"--mean-durations has {len(durations)} values for {args.levels} levels")
    base = SynthConfig(durations=tuple(durations),
                       jitter=tuple(args.jitter) if args.jitter else None,
                       length=args.length, dim=args.dim, separation=args.separation,
                       noise=args.noise, offset_scale=args.offset_scale,
                       offset_decay=args.offset_decay, drift=args.drift, fps=args.fps, seed=0)
    try:
        base.validate()
    except SynthConfigError as exc:
        raise UsageError(str(exc))
    written = []
    for k in range(args.videos):
        cfg = SynthConfig(**{**base.__dict__, "seed": args.seed * 100003 + k})
        fs, gt = generate_synthetic(cfg)
        stem = f"{args.prefix}_{k:03d}"
        write_features(out / f"{stem}.prsf", fs)
        write_annotation(out / f"{stem}.json", gt)
        written.append(stem)
    config = {**base.to_dict(), "videos": args.videos, "seed": args.seed}
    config.pop("seed", None)
    config["base_seed"] = args.seed
    _echo(config)
    _write_manifest(out / "manifest.json", args, config, [])
    print(f"wrote {len(written)} videos to {out}")
    return 0


# ---------------------------------------------------------------------------
# train


def _load_features(paths: Sequence[Path]) -> List[FeatureSequence]:
    try:
        return [read_features(p) for p in paths]
    except FormatError as exc:
        raise UsageError(str(exc))


def cmd_train(args) -> int:
    paths = _expand(args.features, ".prsf")
    if not paths:
        raise UsageError("no feature files given")
    videos = _load_features(paths)
    dims = {v.d for v in videos}
    if len(dims) != 1:
        raise UsageError(f"feature dims differ across files: {sorted(dims)}")
    try:
        cfg = StackConfig.build(dims.pop(), args.levels, args.hidden, args.memory,
                                sparsity=args.sparsity, train_lr=args.lr, adapt_lr=args.adapt_lr,
                                window=args.window, top_context=args.top_context,
                                bottom_context=args.bottom_context, normalize=args.normalize)
    except ConfigError as exc:
        raise UsageError(str(exc))
    _echo(cfg.to_dict())
    params, trace = train_stream(videos, cfg, seed=args.seed)
    ckpt = Path(args.out)
    ckpt.parent.mkdir(parents=True, exist_ok=True)
    save_checkpoint(ckpt, cfg, params)
    trace_path = Path(args.trace) if args.trace else ckpt.with_suffix(".energy.csv")
    N = cfg.n_levels
    with open(trace_path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "video", "energy"] + [f"pred_{i}" for i in range(1, N + 1)]
                   + [f"sparse_{i}" for i in range(1, N + 1)])
        for s in range(len(trace.energy)):
            w.writerow([s, int(trace.video[s]), repr(float(trace.energy[s]))]
                       + [repr(float(x)) for x in trace.pred[s]] + [repr(float(x)) for x in trace.sparse[s]])
    _write_manifest(Path(str(ckpt) + ".manifest.json"), args, cfg.to_dict(), paths, str(ckpt))
    n = max(1, len(trace.energy) // 10)
    print(f"trained {N}-level stack on {len(videos)} videos ({len(trace.energy)} steps); "
          f"energy {trace.energy[:n].mean():.4f} -> {trace.energy[-n:].mean():.4f}")
    return 0


# ---------------------------------------------------------------------------
# infer


def _boundary_config(args, fps: float, n_levels: int) -> BoundaryConfig:
    """defaults < preset < explicit flags"""
    base = preset(args.preset, fps, n_levels) if args.preset else BoundaryConfig.from_fps(fps, n_levels)
    if base.n_levels != n_levels:
        raise UsageError(f"preset has {base.n_levels} levels, model has {n_levels}")
    smooth = tuple(args.smooth) if args.smooth else base.smoothing
    radii = tuple(args.radii) if args.radii else base.radii
    if len(smooth) == 1:
        smooth = smooth * n_levels
    if len(radii) != n_levels or len(smooth) != n_levels:
        raise UsageError(f"need {n_levels} radii and smoothing windows")
    try:
        return BoundaryConfig(smooth, radii)
    except ValueError as exc:
        raise UsageError(str(exc))


def _infer_one(path: str, ckpt: str, out: str, adapt_lr: float, bcfg_d: dict) -> dict:
    cfg, params = load_checkpoint(ckpt)
    fs = read_features(path)
    traces = infer_stream(fs, params, cfg, adapt_lr=adapt_lr)
    bcfg = BoundaryConfig(**bcfg_d)
    stem = Path(path).stem
    with open(Path(out) / f"{stem}.trace.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "level", "loss"])
        for t in range(traces.shape[1]):
            for i in range(traces.shape[0]):
                w.writerow([t, i + 1, repr(float(traces[i, t]))])
    p = from_boundaries(extract_boundaries(traces, bcfg), fs.T, fs.fps)
    problems = validate(p)
    if problems:
        raise RuntimeError(f"{stem}: predicted partonomy invalid: {problems[:3]}")
    write_annotation(Path(out) / f"{stem}.json", p)
    return {"video": stem, "segments": [len(lv) for lv in p.levels]}


def cmd_infer(args) -> int:
    if not Path(args.checkpoint).exists():
        raise UsageError(f"checkpoint not found: {args.checkpoint}")
    try:
        cfg, _ = load_checkpoint(args.checkpoint)
    except CheckpointError as exc:
        raise UsageError(str(exc))
    paths = _expand(args.features, ".prsf")
    if not paths:
        raise UsageError("no feature files given")
    headers = _load_features(paths)
    for p, fs in zip(paths, headers):
        if fs.d != cfg.feature_dim:
            raise UsageError(f"{p}: feature dim {fs.d}, checkpoint expects {cfg.feature_dim}")
    fpss = {fs.fps for fs in headers}
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    adapt_lr = cfg.adapt_lr if args.adapt_lr is None else args.adapt_lr
    configs = {fps: _boundary_config(args, fps, cfg.n_levels) for fps in fpss}
    items = [(str(p), str(args.checkpoint), str(out), adapt_lr,
              {"smoothing": configs[fs.fps].smoothing, "radii": configs[fs.fps].radii})
             for p, fs in zip(paths, headers)]
    eff = {"adapt_lr": adapt_lr,
           "boundaries": {str(k): {"smoothing": v.smoothing, "radii": v.radii} for k, v in configs.items()},
           "stack": cfg.to_dict()}
    _echo(eff)
    results = _run_jobs(_infer_one, items, args.jobs)
    _write_manifest(out / "manifest.json", args, eff, paths, str(args.checkpoint))
    for r in results:
        print(f"{r['video']}: segments per level {r['segments']}")
    return 0


# ---------------------------------------------------------------------------
# baseline


def _baseline_one(path: str, out: str, method: str, cfg_d: dict, gt_path: Optional[str]) -> str:
    fs = read_features(path)
    gt = read_annotation(gt_path) if gt_path else None
    cfg = BaselineConfig(**cfg_d)
    p = build_baseline_partonomy(fs, cfg, method, gt)
    stem = Path(path).stem
    write_annotation(Path(out) / f"{stem}.json", p)
    return stem


def cmd_baseline(args) -> int:
    paths = _expand(args.features, ".prsf")
    if not paths:
        raise UsageError("no feature files given")
    method = args.method
    counts = None
    if args.k_preset:
        counts = K_PRESETS[args.k_preset]
    if args.k:
        counts = tuple(args.k)
    cfg = BaselineConfig(counts=counts, durations=tuple(args.durations) if args.durations else None,
                         oracle=method == "kmeans-oracle", seed=args.seed)
    gts: List[Optional[str]] = [None] * len(paths)
    if method == "kmeans-oracle":
        if not args.oracle_from:
            raise UsageError("kmeans-oracle needs --oracle-from")
        src = Path(args.oracle_from)
        for k, p in enumerate(paths):
            g = src / f"{p.stem}.json" if src.is_dir() else src
            if not g.exists():
                raise UsageError(f"ground truth not found: {g}")
            gts[k] = str(g)
    elif method == "fixed" and cfg.durations is None:
        raise UsageError("fixed baseline needs --durations")
    elif method in ("kmeans", "linkage") and cfg.counts is None:
        raise UsageError(f"{method} baseline needs --k or --k-preset")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg_d = {"counts": cfg.counts, "durations": cfg.durations, "oracle": cfg.oracle, "seed": cfg.seed}
    _echo({"method": method, **cfg_d})
    try:
        stems = _run_jobs(_baseline_one, [(str(p), str(out), method, cfg_d, g) for p, g in zip(paths, gts)],
                          args.jobs)
    except FormatError as exc:
        raise UsageError(str(exc))
    _write_manifest(out / "manifest.json", args, {"method": method, **cfg_d}, paths)
    print(f"wrote {len(stems)} {method} predictions to {out}")
    return 0


# ---------------------------------------------------------------------------
# eval / report


def _eval_one(pred_path: str, gt_path: str, out_path: str, settings: dict) -> dict:
    pred = read_annotation(pred_path)
    gt = read_annotation(gt_path)
    rep = evaluate(pred, gt, video=Path(pred_path).stem, **settings)
    Path(out_path).write_text(json.dumps(rep.to_json(), indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return rep.flat()


def cmd_eval(args) -> int:
    pred, gt = Path(args.pred), Path(args.gt)
    if not pred.exists():
        raise UsageError(f"prediction not found: {pred}")
    if not gt.exists():
        raise UsageError(f"ground truth not found: {gt}")
    out = Path(args.out)
    if pred.is_dir():
        preds = sorted(p for p in pred.glob("*.json") if p.name != "manifest.json")
        out.mkdir(parents=True, exist_ok=True)
        pairs = []
        for p in preds:
            g = gt / p.name if gt.is_dir() else gt
            if not g.exists():
                raise UsageError(f"ground truth not found for {p.name}: {g}")
            pairs.append((p, g, out / f"{p.stem}.report.json"))
        manifest_path = out / "manifest.json"
    else:
        g = gt / pred.name if gt.is_dir() else gt
        if not g.exists():
            raise UsageError(f"ground truth not found: {g}")
        out.parent.mkdir(parents=True, exist_ok=True)
        pairs = [(pred, g, out)]
        manifest_path = Path(str(out) + ".manifest.json")
    if not pairs:
        raise UsageError("no predictions to evaluate")
    mode = "one_to_one" if args.match == "one-to-one" else "literal"
    settings = {"tolerance": args.tolerance, "mode": mode, "alpha": args.alpha,
                "beta": args.beta, "tau": args.tau}
    if args.alpha <= 0 or args.beta < 0 or not (0 < args.tau <= 1):
        raise UsageError("need --alpha > 0, --beta >= 0 and 0 < --tau <= 1")
    _echo(settings)
    try:
        rows = _run_jobs(_eval_one, [(str(p), str(g), str(o), settings) for p, g, o in pairs], args.jobs)
    except FormatError as exc:
        raise UsageError(str(exc))
    _write_manifest(manifest_path, args, settings, [str(p) for p, _, _ in pairs])
    for (p, _, _), r in zip(pairs, rows):
        print(f"{p.stem}: TED {r['TED']:.2f}  hF1 {r['hF1']:.2f}")
    return 0


def cmd_report(args) -> int:
    files: List[Path] = []
    for src in args.inputs:
        s = Path(src)
        if s.is_dir():
            files += sorted(s.glob("*.report.json"))
        elif s.exists():
            files.append(s)
        else:
            raise UsageError(f"no such file or directory: {src}")
    if not files:
        raise UsageError("no *.report.json files found")
    reports = []
    for f in files:
        try:
            reports.append(MetricReport.from_json(json.loads(f.read_text(encoding="utf-8"))))
        except (KeyError, json.JSONDecodeError) as exc:
            raise UsageError(f"{f}: not a metric report ({exc})")
    means = aggregate(reports)
    table = format_table({args.name: means})
    print(table, end="")
    settings = reports[0].settings
    summary = {"name": args.name, "videos": len(reports), "settings": settings, "mean": means}
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True) + "\n", encoding="utf-8")
        (out / "table.txt").write_text(table, encoding="utf-8")
        _write_manifest(out / "manifest.json", args, {"name": args.name}, files)
    return 0


# ---------------------------------------------------------------------------
# replay


def cmd_replay(args) -> int:
    try:
        manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
        argv = manifest["argv"]
        cwd = manifest.get("cwd") or os.getcwd()
    except (OSError, KeyError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read manifest {args.manifest}: {exc}")
    if argv and argv[0] == "replay":
        raise UsageError("refusing to replay a replay")
    prev = os.getcwd()
    os.chdir(cwd)
    try:
        return main(argv)
    finally:
        os.chdir(prev)


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="parsehier", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    seed_default = _env_int("PARSE_SEED", 0)
    jobs_default = _env_int("PARSE_JOBS", 1)

    p = sub.add_parser("synth", help="generate synthetic feature streams with nested ground truth")
    p.add_argument("--out", required=True)
    p.add_argument("--videos", type=int, default=20)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--mean-durations", type=_floats, default=[20.0, 100.0, 400.0])
    p.add_argument("--jitter", type=_floats, default=None)
    p.add_argument("--length", type=int, default=2000)
    p.add_argument("--dim", type=int, default=16)
    p.add_argument("--separation", type=float, default=1.0)
    p.add_argument("--noise", type=float, default=0.5)
    p.add_argument("--offset-scale", type=float, default=0.5)
    p.add_argument("--offset-decay", type=float, default=1.0)
    p.add_argument("--drift", type=float, default=0.0)
    p.add_argument("--fps", type=float, default=15.0)
    p.add_argument("--prefix", default="video")
    p.add_argument("--seed", type=int, default=seed_default)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="single-pass streaming training")
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--trace", default=None, help="energy trace CSV (default: <out>.energy.csv)")
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--hidden", type=int, default=64)
    p.add_argument("--memory", type=int, default=5)
    p.add_argument("--sparsity", type=float, default=0.1)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--adapt-lr", type=float, default=1e-6)
    p.add_argument("--window", type=int, default=1)
    p.add_argument("--top-context", choices=("self", "none"), default="self")
    p.add_argument("--bottom-context", action="store_true")
    p.add_argument("--normalize", action="store_true")
    p.add_argument("--seed", type=int, default=seed_default)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("infer", help="error traces and predicted partonomies")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--adapt-lr", type=float, default=None)
    p.add_argument("--preset", choices=("breakfast", "salads", "assembly", "fps-default"), default=None)
    p.add_argument("--radii", type=_ints, default=None)
    p.add_argument("--smooth", type=_ints, default=None)
    p.add_argument("--jobs", type=int, default=jobs_default)
    p.set_defaults(fn=cmd_infer)

    p = sub.add_parser("baseline", help="non-learned baseline partonomies")
    p.add_argument("--method", choices=METHODS, required=True)
    p.add_argument("--features", nargs="+", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=_ints, default=None, help="segments per level, finest first")
    p.add_argument("--k-preset", choices=sorted(K_PRESETS), default=None)
    p.add_argument("--durations", type=_floats, default=None, help="frames per level, finest first")
    p.add_argument("--oracle-from", default=None)
    p.add_argument("--seed", type=int, default=seed_default)
    p.add_argument("--jobs", type=int, default=jobs_default)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--tolerance", type=int, default=None, help="frames (default: round(fps))")
    p.add_argument("--match", choices=("literal", "one-to-one"), default="literal")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--jobs", type=int, default=jobs_default)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="average per-video reports")
    p.add_argument("inputs", nargs="*", default=[])
    p.add_argument("--out", default=None)
    p.add_argument("--name", default="mean")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("replay", help="re-run the command recorded in a manifest")
    p.add_argument("manifest")
    p.set_defaults(fn=cmd_replay)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        parser = build_parser()
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if isinstance(exc.code, int) else 2
    args._argv = argv
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report" and not args.inputs:
        print("error: report needs at least one input", file=sys.stderr)
        return 2
    try:
        return args.fn(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (NonFiniteError, ShapeError, CheckpointError, RuntimeError, ValueError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
