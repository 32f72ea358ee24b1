"""Training loop, evaluation, checkpoints, and the paired FGB ablation."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import functional as F
from . import mors
from .data import Batch, DatasetManifest, augment, iterate_batches, load_split, one_hot, synth_arrays
from .metrics import Metrics, compute_metrics
from .model import MambaOutRS, build_model, count_params
from .optim import Adam, cosine_lr
from .tensor import ConfigurationError, NumericalError, Tape, Tensor

log = logging.getLogger(__name__)


def save_checkpoint(path, model: MambaOutRS, opt: Optional[Adam] = None) -> None:
    entries = dict(model.state_dict())
    if opt is not None:
        entries.update(opt.state_dict())
    mors.save_archive(path, entries)


def load_checkpoint(path, model: MambaOutRS, opt: Optional[Adam] = None) -> dict:
    entries = mors.load_archive(path)
    model.load_state_dict({k: v for k, v in entries.items() if not k.startswith("optim/")})
    if opt is not None and "optim/step" in entries:
        opt.load_state_dict(entries)
    return entries


def predict(model: MambaOutRS, images: np.ndarray, batch_size: int = 64) -> np.ndarray:
    dt = model.cfg.np_dtype
    out = []
    for idx in iterate_batches(len(images), batch_size, None):
        out.append(model(Tensor(images[idx].astype(dt, copy=False)), training=False).data)
    return np.concatenate(out)


def evaluate_arrays(model: MambaOutRS, images: np.ndarray, labels: np.ndarray,
                    batch_size: int = 64) -> Metrics:
    if len(images) == 0:
        raise ValueError("cannot evaluate an empty split")
    K = model.cfg.num_classes
    logits = predict(model, images, batch_size)
    loss = float(F.softmax_cross_entropy(Tensor(logits), one_hot(labels, K, logits.dtype)).data)
    m = compute_metrics(labels, logits.argmax(axis=1), K, loss)
    if m.absent_classes:
        log.warning("classes absent from evaluation split (recall reported as 0): %s", m.absent_classes)
    return m


def evaluate(model: MambaOutRS, manifest: DatasetManifest, split: str = "test",
             batch_size: int = 64) -> Metrics:
    images, labels = load_split(manifest, split)
    return evaluate_arrays(model, images, labels, batch_size)


@dataclass
class TrainResult:
    history: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_loss: float = float("inf")
    steps: int = 0
    best_path: Optional[str] = None
    last_path: Optional[str] = None


def _clip(params, max_norm: float) -> None:
    total = np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params))
    if total > max_norm:
        s = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= p.grad.dtype.type(s)


def train_step(model: MambaOutRS, opt: Adam, batch: Batch, rng, lr: float, grad_clip=None) -> float:
    model.zero_grad()
    x = Tensor(batch.images.astype(model.cfg.np_dtype, copy=False))
    with Tape() as tape:
        loss = F.softmax_cross_entropy(model(x, training=True, rng=rng), batch.labels)
    value = float(loss.data)
    if not np.isfinite(value):
        raise NumericalError(f"training loss became {value}")
    tape.backward(loss)
    if grad_clip:
        _clip(model.parameters(), grad_clip)
    opt.step(lr)
    return value


def fit(model: MambaOutRS, train_data, val_data, cfg, out_dir=None,
        restore_best: bool = False) -> TrainResult:
    """Train on ``(images, labels)`` arrays, selecting the best validation loss.

    With ``out_dir`` set, writes ``history.jsonl``, ``best.ckpt`` and
    ``last.ckpt`` there. On divergence the last good checkpoint is kept
    and :class:`NumericalError` propagates.
    """
    X, y = train_data
    Xv, yv = val_data
    if len(X) == 0 or len(Xv) == 0:
        raise ConfigurationError("training needs nonempty train and val splits")
    K = model.cfg.num_classes
    shuffle_rng, aug_rng, drop_rng = (np.random.default_rng(s)
                                      for s in np.random.SeedSequence(cfg.seed).spawn(3))
    opt = Adam(model.named_parameters(), cfg.lr, cfg.betas, cfg.eps)
    out = Path(out_dir) if out_dir is not None else None
    res = TrainResult()
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        res.best_path, res.last_path = str(out / "best.ckpt"), str(out / "last.ckpt")
        hist_f = open(out / "history.jsonl", "w")
    steps_per_epoch = -(-len(X) // cfg.batch_size)
    total_steps = cfg.max_steps or cfg.epochs * steps_per_epoch
    best_state = None
    try:
        for epoch in range(1, cfg.epochs + 1):
            t0 = time.perf_counter()
            losses, counts = [], []
            for idx in iterate_batches(len(X), cfg.batch_size, shuffle_rng):
                batch = augment(Batch(X[idx], one_hot(y[idx], K)), cfg.augment, aug_rng)
                lr = cosine_lr(cfg.lr, res.steps, total_steps) if cfg.schedule == "cosine" else cfg.lr
                try:
                    losses.append(train_step(model, opt, batch, drop_rng, lr, cfg.grad_clip))
                except NumericalError as e:
                    where = f"; last good checkpoint: {res.last_path}" if out is not None else ""
                    raise NumericalError(f"epoch {epoch} step {res.steps + 1}: {e}{where}") from e
                counts.append(len(idx))
                res.steps += 1
                if cfg.max_steps and res.steps >= cfg.max_steps:
                    break
            train_loss = float(np.dot(losses, counts) / np.sum(counts))
            rec = {"epoch": epoch, "train_loss": train_loss}
            if epoch % cfg.eval_every == 0 or epoch == cfg.epochs:
                vm = evaluate_arrays(model, Xv, yv)
                rec.update(val_loss=vm.loss, val_macro_f1=vm.macro_f1)
                if vm.loss < res.best_val_loss:
                    res.best_val_loss, res.best_epoch = vm.loss, epoch
                    if restore_best:
                        best_state = {n: p.copy() for n, p in model.state_dict().items()}
                    if out is not None:
                        save_checkpoint(res.best_path, model, opt)
            rec["seconds"] = round(time.perf_counter() - t0, 3)
            res.history.append(rec)
            log.info("epoch %d %s", epoch, json.dumps(rec))
            if out is not None:
                hist_f.write(json.dumps(rec) + "\n")
                hist_f.flush()
                save_checkpoint(res.last_path, model, opt)
            if cfg.max_steps and res.steps >= cfg.max_steps:
                break
    finally:
        if out is not None:
            hist_f.close()
    if restore_best and best_state is not None:
        model.load_state_dict(best_state)
    return res


def train(model: MambaOutRS, manifest: DatasetManifest, cfg, out_dir=None, restore_best=False) -> TrainResult:
    return fit(model, load_split(manifest, "train"), load_split(manifest, "val"), cfg,
               out_dir, restore_best)


def ffg_param_count(model: MambaOutRS) -> int:
    return sum(p.data.size for n, p in model.named_parameters() if ".ffg." in n)


def ablation_run(run_cfg, seeds=None, out_dir=None) -> dict:
    """Paired with/without-FGB training on the synthetic spectral dataset.

    Both arms of a seed share model seed, data order, and augmentation
    stream; the test split is scored with the best-validation-loss weights.
    """
    seeds = list(run_cfg.seeds if seeds is None else seeds)
    if len(seeds) < 3:
        raise ConfigurationError(f"ablation needs at least 3 seeds, got {len(seeds)}")
    spec = run_cfg.synth
    images, labels, splits, sigs = synth_arrays(spec)
    splits = np.asarray(splits)
    part = {s: (images[splits == s], labels[splits == s]) for s in ("train", "val", "test")}
    report = {"synth": {"num_classes": spec.num_classes, "image_size": spec.image_size,
                        "noise": spec.noise, "signatures": sigs},
              "seeds": seeds, "per_seed": []}
    for seed in seeds:
        row = {"seed": seed}
        for arm, use in (("with_fgb", True), ("without_fgb", False)):
            mc = replace(run_cfg.model, use_fgb=use, seed=seed, num_classes=spec.num_classes,
                         input_size=spec.image_size, in_channels=spec.channels)
            model = build_model(mc)
            tc = replace(run_cfg.train, seed=seed)
            sub = Path(out_dir) / f"seed{seed}_{arm}" if out_dir is not None else None
            res = fit(model, part["train"], part["val"], tc, sub, restore_best=True)
            tm = evaluate_arrays(model, *part["test"])
            row[arm] = {"test_macro_f1": tm.macro_f1, "test_accuracy": tm.accuracy,
                        "test_loss": tm.loss, "best_epoch": res.best_epoch,
                        "best_val_loss": res.best_val_loss, "params": count_params(model),
                        "ffg_params": ffg_param_count(model)}
            log.info("seed %d %s: test macro-F1 %.4f", seed, arm, tm.macro_f1)
        report["per_seed"].append(row)
    for arm in ("with_fgb", "without_fgb"):
        report[f"mean_{arm}_f1"] = float(np.mean([r[arm]["test_macro_f1"] for r in report["per_seed"]]))
    report["delta_f1"] = report["mean_with_fgb_f1"] - report["mean_without_fgb_f1"]
    return report
