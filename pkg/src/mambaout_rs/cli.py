"""Command-line entry point.

Numbers go to stdout as JSON, logs to stderr. Exit codes: 2 configuration
error, 3 data error, 4 numerical failure; each failure also prints one JSON
line ``{"error": kind, "reason": ...}`` on stderr.
"""
from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import mors
from .config import ConfigError, RunConfig, load_config
from .data import DataError, DatasetManifest, scan_dataset, synth_generate
from .model import VARIANTS, ModelConfig, build_model, count_params, describe
from .spectral import FourierFilterGate
from .tensor import ConfigurationError, DimensionError, NumericalError

log = logging.getLogger("mambaout_rs")

EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 2, 3, 4


def _emit(obj) -> None:
    json.dump(obj, sys.stdout, indent=1, default=_jsonable)
    sys.stdout.write("\n")
    sys.stdout.flush()


def _jsonable(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serialisable: {type(o).__name__}")


def _run_config(args) -> RunConfig:
    cfg = load_config(getattr(args, "config", None), getattr(args, "set", None) or ())
    if getattr(args, "seed", None) is not None:
        cfg.set_seed(args.seed)
        cfg.synth.seed = args.seed
    return cfg


def _manifest(cfg: RunConfig) -> DatasetManifest:
    if not cfg.data.manifest:
        raise ConfigError("data.manifest is required (a manifest.json or a class-folder root)")
    p = Path(cfg.data.manifest)
    if p.is_dir():
        if (p / "manifest.json").exists():
            return DatasetManifest.load(p / "manifest.json")
        return scan_dataset(p, cfg.data.ratios, cfg.data.split_seed)
    return DatasetManifest.load(p)


def _model_for(cfg: RunConfig, manifest: DatasetManifest | None = None):
    mc = cfg.model
    if manifest is not None and mc.num_classes != manifest.num_classes:
        log.info("num_classes set to %d from the dataset", manifest.num_classes)
        mc = replace(mc, num_classes=manifest.num_classes)
        cfg.model = mc
    return build_model(mc)


def cmd_train(args) -> int:
    from .training import train

    cfg = _run_config(args)
    manifest = _manifest(cfg)
    model = _model_for(cfg, manifest)
    out = Path(args.out or cfg.train.checkpoint_dir or "runs/train")
    out.mkdir(parents=True, exist_ok=True)
    cfg.train.checkpoint_dir = str(out)
    cfg.save(out / "config.json")
    res = train(model, manifest, cfg.train, out)
    _emit({"run_dir": str(out), "best_epoch": res.best_epoch, "best_val_loss": res.best_val_loss,
           "steps": res.steps, "params": count_params(model),
           "history": [{k: v for k, v in h.items() if k != "seconds"} for h in res.history]})
    return 0


def _load_for_checkpoint(args):
    from .training import load_checkpoint

    ckpt = Path(args.checkpoint)
    if not ckpt.exists():
        raise DataError(f"checkpoint {ckpt} does not exist")
    if args.config is None and (ckpt.parent / "config.json").exists():
        args.config = str(ckpt.parent / "config.json")
    cfg = _run_config(args)
    model = build_model(cfg.model)
    try:
        load_checkpoint(ckpt, model)
    except (KeyError, DimensionError) as e:
        raise ConfigError(f"checkpoint does not match the configured model: {e}") from e
    return cfg, model


def cmd_eval(args) -> int:
    from .training import evaluate

    cfg, model = _load_for_checkpoint(args)
    metrics = evaluate(model, _manifest(cfg), args.split)
    _emit({"split": args.split, **metrics.to_dict()})
    return 0


def cmd_params(args) -> int:
    model = build_model(ModelConfig(variant=args.variant, num_classes=args.num_classes,
                                    input_size=args.input_size))
    _emit({"variant": args.variant, "params": count_params(model),
           "params_m": round(count_params(model) / 1e6, 3)})
    return 0


def cmd_describe(args) -> int:
    model = build_model(ModelConfig(variant=args.variant, num_classes=args.num_classes,
                                    input_size=args.input_size))
    _emit(describe(model))
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck import run_all

    results = run_all(args.scope, args.seed or 0)
    for r in results:
        log.info("%-24s %-18s %.3e %s", r.case, r.shape, r.max_rel_error, "ok" if r.ok else "FAIL")
    _emit([{"case": r.case, "shape": r.shape, "max_rel_error": r.max_rel_error,
            "tolerance": r.tolerance, "ok": r.ok} for r in results])
    if not all(r.ok for r in results):
        raise NumericalError("gradient check exceeded tolerance: "
                             + ", ".join(sorted({r.case for r in results if not r.ok})))
    return 0


def cmd_synth(args) -> int:
    cfg = _run_config(args)
    manifest = synth_generate(cfg.synth, args.out)
    _emit({"root": str(args.out), "classes": manifest.classes, "files": len(manifest.samples),
           "splits": {s: len(manifest.split(s)) for s in ("train", "val", "test")}})
    return 0


def cmd_ablate(args) -> int:
    from .training import ablation_run

    cfg = _run_config(args)
    seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else None
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        cfg.save(out / "config.json")
    report = ablation_run(cfg, seeds, out)
    if out is not None:
        (out / "ablation.json").write_text(json.dumps(report, indent=1, default=_jsonable))
    _emit(report)
    return 0


def cmd_export_gate(args) -> int:
    cfg, model = _load_for_checkpoint(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, mod in model.named_modules():
        if not isinstance(mod, FourierFilterGate):
            continue
        gate = mod.gate_values()  # (C, H, Wf)
        stem = name.replace(".", "_")
        mors.save_tensor(out / f"{stem}.mors", np.ascontiguousarray(gate))
        mean = gate.astype(np.float64).mean(axis=0)
        lines = ["row,col,mean_gate"]
        lines += [f"{h},{k},{mean[h, k]:.8g}" for h in range(mean.shape[0]) for k in range(mean.shape[1])]
        (out / f"{stem}.csv").write_text("\n".join(lines) + "\n")
        written.append({"module": name, "shape": list(gate.shape), "file": f"{stem}.mors"})
    _emit({"out": str(out), "gates": written})
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mambaout-rs", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    ap.add_argument("-q", "--quiet", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    def configurable(p):
        p.add_argument("--config", help="JSON run configuration")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="dotted override, e.g. train.lr=0.0005 (repeatable)")
        p.add_argument("--seed", type=int, help="seed for every RNG stream")

    p = sub.add_parser("train", help="train a model")
    configurable(p)
    p.add_argument("--out", help="run directory (checkpoints, history, effective config)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    configurable(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", default="test", choices=("train", "val", "test"))
    p.set_defaults(func=cmd_eval)

    for name, func, help_ in (("params", cmd_params, "parameter count of a variant"),
                              ("describe", cmd_describe, "per-stage architecture summary")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("variant", choices=sorted(VARIANTS))
        p.add_argument("--num-classes", type=int, default=21)
        p.add_argument("--input-size", type=int, default=224)
        p.set_defaults(func=func)

    p = sub.add_parser("gradcheck", help="finite-difference gradient checks")
    p.add_argument("scope", nargs="?", default="all", choices=("all", "primitives", "blocks", "model"))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)

    p = sub.add_parser("synth", help="write the synthetic grating dataset")
    configurable(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ablate", help="paired with/without-FGB runs on synthetic data")
    configurable(p)
    p.add_argument("--seeds", help="comma-separated seeds (default: config seeds)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-gate", help="dump learned Fourier gates")
    configurable(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_export_gate)
    return ap


def _thread_limit():
    n = os.environ.get("MORS_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits
    return threadpool_limits(int(n))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING if args.quiet else logging.DEBUG if args.verbose > 1 else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    failures = (
        ((ConfigError, ConfigurationError, DimensionError), EXIT_CONFIG, "config"),
        ((DataError, mors.FormatError, FileNotFoundError), EXIT_DATA, "data"),
        ((NumericalError, FloatingPointError), EXIT_NUMERIC, "numerical"),
    )
    try:
        with _thread_limit():
            return args.func(args)
    except Exception as e:
        for types, code, kind in failures:
            if isinstance(e, types):
                sys.stderr.write(json.dumps({"error": kind, "reason": str(e)}) + "\n")
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
