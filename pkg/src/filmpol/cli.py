"""``filmpol`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error,
3 data or format error, 4 shape mismatch.
"""
import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import io
from .dataset import load_dataset, load_manifest, make_dataset
from .errors import ConfigError, DataError, FilmpolError, ShapeError, TrainingAborted
from .evaluation import ABLATION_MODES, plot_report, run_ablations, run_crossval
from .mosaic import DemosaicMethod, to_uint16
from .nets import PipelineMode
from .pipeline import (load_field, load_stack, reconstruct, stage_demosaic, stage_infer,
                       stage_prior, stage_reconstruct, stage_stokes)
from .sim import SceneConfig
from .train import TrainConfig, load_checkpoint, predict, train

CONFIG_VERSION = 1
EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, EXIT_DATA, EXIT_SHAPE = 0, 1, 2, 3, 4

QUICK_TRAIN = {"max_iters": 150, "batch_size": 4, "crop": 16}


# --- configs ---------------------------------------------------------------

def _versioned(path, what, allowed):
    d = io.read_json(path, what)
    io.check_fields(d, set(allowed) | {"version"}, what, required=("version",))
    if d["version"] != CONFIG_VERSION:
        raise ConfigError(f"{what}.version must be {CONFIG_VERSION}, got {d['version']!r}",
                          f"{what}.version")
    return d


def load_sim_config(path):
    """``{"version": 1, "scenes": [SceneConfig fields, ...]}``."""
    d = _versioned(path, "simulate", {"scenes"})
    scenes = d.get("scenes", [{}])
    if not isinstance(scenes, list) or not scenes:
        raise ConfigError("simulate.scenes must be a non-empty list", "simulate.scenes")
    return [SceneConfig.from_dict(s, f"scenes[{i}]") for i, s in enumerate(scenes)]


_NET_FIELDS = {"blocks", "convs", "growth", "features", "head_init"}


def _net_desc(d, where):
    if d is None:
        return None
    io.check_fields(d, _NET_FIELDS, where)
    return dict(d)


def load_run_config(path):
    """Training/evaluation config.

    ``{"version": 1, "dataset": "<dir>", "mode": "full", "source": "stack",
    "train": {...}, "anet": {...}, "rnet": {...}, "eval": {"k": 10,
    "split_seed": 0, "folds": null}}``; only ``version`` and ``dataset`` are
    required. Relative dataset paths resolve against the config file.
    """
    allowed = {"dataset", "mode", "source", "method", "train", "anet", "rnet", "eval"}
    d = _versioned(path, "run", allowed)
    if "dataset" not in d:
        raise ConfigError("missing required field 'run.dataset'", "run.dataset")
    ds = Path(d["dataset"])
    if not ds.is_absolute():
        ds = Path(path).parent / ds
    try:
        mode = PipelineMode(d.get("mode", "full"))
    except ValueError:
        raise ConfigError(f"run.mode: unknown pipeline mode {d.get('mode')!r}", "run.mode") from None
    source = d.get("source", "stack")
    if source not in ("stack", "raw"):
        raise ConfigError(f"run.source must be 'stack' or 'raw', got {source!r}", "run.source")
    try:
        method = DemosaicMethod(d.get("method", "edge-aware"))
    except ValueError:
        raise ConfigError(f"run.method: unknown demosaic method {d.get('method')!r}",
                          "run.method") from None
    ev = d.get("eval", {})
    io.check_fields(ev, {"k", "split_seed", "folds"}, "run.eval")
    return {
        "dataset": ds,
        "mode": mode,
        "source": source,
        "method": method,
        "train": TrainConfig.from_dict(d.get("train", {}), "run.train"),
        "anet": _net_desc(d.get("anet"), "run.anet"),
        "rnet": _net_desc(d.get("rnet"), "run.rnet"),
        "k": int(ev.get("k", 10)),
        "split_seed": int(ev.get("split_seed", 0)),
        "folds": ev.get("folds"),
    }


# --- commands --------------------------------------------------------------

def cmd_simulate(args):
    configs = load_sim_config(args.config) if args.config else [SceneConfig()]
    m = make_dataset(configs, args.count, args.out, seed=args.seed)
    print(f"wrote {len(m['samples'])} samples to {args.out}")
    return EXIT_OK


def _write_array(path, arr):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if path.suffix.lower() == ".pgm":
        io.write_pgm(path, to_uint16(arr))
    else:
        io.write_tensorblob(path, arr)


def _model(args):
    if not args.checkpoint:
        raise ConfigError(f"stage '{args.stage}' requires --checkpoint", "--checkpoint")
    if not Path(args.checkpoint).is_file():
        raise ConfigError(f"checkpoint {args.checkpoint} does not exist", "--checkpoint")
    model, _ = load_checkpoint(args.checkpoint)
    return model


def cmd_pipeline(args):
    stage = args.stage
    if stage == "demosaic":
        out = stage_demosaic(io.read_pgm(args.input), args.method)
    elif stage == "stokes":
        out = stage_stokes(load_stack(args.input, args.method))
    elif stage == "infer":
        out = stage_infer(_model(args), load_stack(args.input, args.method))
    elif stage == "prior":
        if args.analytic and args.angle:
            raise ConfigError("--analytic and --angle are mutually exclusive", "--angle")
        src = Path(args.input)
        if src.suffix.lower() == ".pgm":
            stokes = stage_stokes(load_stack(src, args.method))
        else:
            arr = io.read_tensorblob(src)
            stokes = stage_stokes(arr) if arr.ndim == 3 and arr.shape[0] == 4 else arr
            if stokes.ndim != 3 or stokes.shape[0] != 3:
                raise ShapeError(f"{src}: expected a stack (4, H, W) or Stokes map (3, H, W), "
                                 f"got {arr.shape}")
        if args.analytic:
            angle = None
        elif args.angle:
            angle = load_field(args.angle, "angle")
        else:
            angle = stage_infer(_model(args), load_stack(args.stack or args.input, args.method))
        out = stage_prior(stokes, angle)
    elif stage == "reconstruct":
        model = _model(args)
        stack = load_stack(args.input, args.method)
        if args.prior:
            out = stage_reconstruct(model, stack, load_field(args.prior, "prior"))
        else:
            out = reconstruct(model, stack)
    else:  # argparse restricts choices
        raise ConfigError(f"unknown stage {stage}", "stage")
    _write_array(args.output, out)
    return EXIT_OK


def _apply_overrides(cfg, args):
    tr = cfg["train"]
    if args.seed is not None:
        tr = replace(tr, seed=args.seed)
        cfg["split_seed"] = args.seed
    if getattr(args, "iters", None) is not None:
        tr = replace(tr, max_iters=args.iters)
    cfg["train"] = tr
    return cfg


def cmd_train(args):
    cfg = _apply_overrides(load_run_config(args.config), args)
    load_manifest(cfg["dataset"])
    if args.dry_run:
        print(f"config ok; dataset {cfg['dataset']} ok; mode {cfg['mode'].value}")
        return EXIT_OK
    ds = load_dataset(cfg["dataset"], cfg["source"], cfg["method"])
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    log = out / "train_log.jsonl"
    if log.exists():
        log.unlink()
    res = train(cfg["train"], ds, cfg["mode"], cfg["anet"], cfg["rnet"], log_path=log,
                ckpt_dir=out, dump_dir=out / "abort")
    print(f"trained {res.iterations} iterations; final loss "
          f"{res.losses[-1] if res.losses else float('nan'):.6f}; checkpoint {res.checkpoints[-1]}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _apply_overrides(load_run_config(args.config), args)
    if args.folds is not None:
        cfg["k"] = args.folds
        cfg["folds"] = None
    if args.quick:
        cfg["train"] = replace(cfg["train"], **QUICK_TRAIN)
    ds = load_dataset(cfg["dataset"], cfg["source"], cfg["method"])
    kw = dict(k=cfg["k"], split_seed=cfg["split_seed"], folds=cfg["folds"],
              anet_desc=cfg["anet"], rnet_desc=cfg["rnet"])
    if args.ablation:
        rep = run_ablations(ds, cfg["train"], ABLATION_MODES, **kw)
    else:
        rep = run_crossval(ds, cfg["train"], cfg["mode"], **kw)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(rep.to_json())
    (out / "report.txt").write_text(rep.table())
    if args.plots:
        plot_report(rep, out)
    if args.export_recon:
        _export(cfg, ds, Path(args.export_recon))
    sys.stdout.write(rep.table())
    return EXIT_OK


def _export(cfg, ds, out):
    """Train on everything and write 16-bit reconstructions for external scoring."""
    res = train(cfg["train"], ds, cfg["mode"], cfg["anet"], cfg["rnet"])
    rec = predict(res.model, ds.captures)["rec"]
    out.mkdir(parents=True, exist_ok=True)
    for sid, img in zip(ds.ids, rec):
        io.write_pgm(out / f"{sid}.pgm", to_uint16(img))


# --- parser ----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="filmpol", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="render a paired synthetic dataset")
    s.add_argument("--config", help="JSON scene config (default: one default scene)")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("pipeline", help="run one inference stage")
    s.add_argument("stage", choices=["demosaic", "stokes", "prior", "infer", "reconstruct"])
    s.add_argument("--in", dest="input", required=True)
    s.add_argument("--out", dest="output", required=True)
    s.add_argument("--method", default="edge-aware", choices=[m.value for m in DemosaicMethod])
    s.add_argument("--checkpoint")
    s.add_argument("--analytic", action="store_true", help="prior: closed-form minimum, no A-Net")
    s.add_argument("--angle", help="prior: precomputed angle map")
    s.add_argument("--stack", help="prior: capture stack for A-Net when --in is a Stokes map")
    s.add_argument("--prior", help="reconstruct: precomputed prior map")
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("train", help="train a model on a dataset")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="run")
    s.add_argument("--seed", type=int)
    s.add_argument("--iters", type=int)
    s.add_argument("--dry-run", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="k-fold cross-validation and ablations")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default="eval")
    s.add_argument("--seed", type=int)
    s.add_argument("--iters", type=int)
    s.add_argument("--folds", type=int, help="number of folds k")
    s.add_argument("--quick", action="store_true", help="short training for smoke runs")
    s.add_argument("--ablation", action="store_true", help="run all pipeline modes")
    s.add_argument("--plots", action="store_true")
    s.add_argument("--export-recon", help="directory for reconstructions to score externally")
    s.set_defaults(func=cmd_eval)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return args.func(args)
    except TrainingAborted as err:
        diag = dict(err.diagnostic or {})
        if err.fold is not None:
            diag["fold"] = err.fold
        print(f"error: {err}\n{json.dumps(diag, indent=2, default=str)}", file=sys.stderr)
        return err.exit_code
    except FilmpolError as err:
        print(f"error: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"error: {err}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
