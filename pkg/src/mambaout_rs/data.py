"""Dataset manifests, the synthetic grating dataset, and batch augmentation.

Images are MORS1 rank-3 ``(H, W, C)`` float32 tensors with values in [0, 1],
stored one file per sample under ``root/<class name>/``.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Optional

import numpy as np

from . import mors

SPLITS = ("train", "val", "test")
IMAGE_SUFFIX = ".mors"


class DataError(RuntimeError):
    pass


@dataclass
class Sample:
    path: str
    label: int
    split: str


@dataclass
class DatasetManifest:
    root: str
    classes: list
    samples: list
    seed: int = 0
    ratios: tuple = (0.8, 0.1, 0.1)

    @property
    def num_classes(self) -> int:
        return len(self.classes)

    def split(self, name: str) -> list[Sample]:
        return [s for s in self.samples if s.split == name]

    def to_json(self) -> str:
        return json.dumps({
            "classes": list(self.classes),
            "samples": [asdict(s) for s in self.samples],
            "seed": self.seed,
            "ratios": list(self.ratios),
        }, indent=1)

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            d = json.loads(path.read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read manifest {path}: {e}") from e
        samples = [Sample(**s) for s in d["samples"]]
        return cls(str(path.parent), list(d["classes"]), samples, d.get("seed", 0),
                   tuple(d.get("ratios", (0.8, 0.1, 0.1))))

    def resolve(self, sample: Sample) -> Path:
        p = Path(sample.path)
        return p if p.is_absolute() else Path(self.root) / p


def split_counts(n: int, ratios) -> tuple[int, int, int]:
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_val = min(n_val, n - n_train)
    return n_train, n_val, n - n_train - n_val


def scan_dataset(root, ratios=(0.8, 0.1, 0.1), seed: int = 0) -> DatasetManifest:
    """Stratified, seeded split of a directory of per-class image folders."""
    root = Path(root)
    if abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise DataError(f"split ratios must be nonnegative and sum to 1, got {ratios}")
    if not root.is_dir():
        raise DataError(f"dataset root {root} is not a directory")
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise DataError(f"no class directories under {root}")
    samples = []
    for label, name in enumerate(classes):
        files = sorted(p for p in (root / name).iterdir() if p.suffix == IMAGE_SUFFIX)
        if not files:
            raise DataError(f"class directory {name!r} contains no {IMAGE_SUFFIX} images")
        # per-class stream so adding a class never reshuffles the others
        order = np.random.default_rng([seed, label]).permutation(len(files))
        n_train, n_val, _ = split_counts(len(files), ratios)
        for rank, i in enumerate(order):
            split = "train" if rank < n_train else "val" if rank < n_train + n_val else "test"
            samples.append(Sample(str(files[i].relative_to(root)), label, split))
    samples.sort(key=lambda s: s.path)
    return DatasetManifest(str(root), classes, samples, seed, tuple(ratios))


def load_split(manifest: DatasetManifest, split: str) -> tuple[np.ndarray, np.ndarray]:
    """Stack one split into ``(N, H, W, C)`` float32 images and integer labels."""
    items = manifest.split(split)
    if not items:
        raise DataError(f"split {split!r} is empty")
    images, labels = [], []
    for s in items:
        try:
            img = mors.load_tensor(manifest.resolve(s))
        except (OSError, mors.FormatError) as e:
            raise DataError(f"cannot load {s.path}: {e}") from e
        if img.ndim != 3:
            raise DataError(f"{s.path}: expected a rank-3 (H,W,C) image, got shape {img.shape}")
        images.append(img.astype(np.float32, copy=False))
        labels.append(s.label)
    try:
        return np.stack(images), np.asarray(labels, dtype=np.int64)
    except ValueError as e:
        raise DataError(f"images in split {split!r} have inconsistent shapes") from e


# synthetic frequency-separable data


@dataclass
class SynthSpec:
    num_classes: int = 4
    train_per_class: int = 128
    val_per_class: int = 16
    test_per_class: int = 64
    image_size: int = 64
    channels: int = 3
    noise: float = 0.1
    amplitude: float = 0.5
    components_per_class: int = 1
    min_freq: int = 3
    max_freq: Optional[int] = None  # default image_size // 8, the stage-1 Nyquist limit
    signatures: Optional[list] = None  # per class: list of (fx, fy) cycles per image
    seed: int = 0

    @property
    def samples_per_class(self) -> int:
        return self.train_per_class + self.val_per_class + self.test_per_class


def _canonical(f) -> tuple[int, int]:
    fx, fy = int(f[0]), int(f[1])
    # (fx, fy) and (-fx, -fy) describe the same grating
    return (fx, fy) if (fx, fy) >= (-fx, -fy) else (-fx, -fy)


def class_signatures(spec: SynthSpec) -> list[list[tuple[int, int]]]:
    if spec.signatures is not None:
        sigs = [[_canonical(f) for f in comp] for comp in spec.signatures]
        if len(sigs) != spec.num_classes:
            raise ValueError(f"{len(sigs)} signatures given for {spec.num_classes} classes")
    else:
        hi = spec.max_freq if spec.max_freq is not None else spec.image_size // 8
        cands = sorted({_canonical((fx, fy))
                        for fx in range(-hi, hi + 1) for fy in range(-hi, hi + 1)
                        if spec.min_freq ** 2 <= fx * fx + fy * fy <= hi * hi})
        need = spec.num_classes * spec.components_per_class
        if need > len(cands):
            raise ValueError(f"only {len(cands)} distinct frequencies available for {need} components")
        rng = np.random.default_rng([spec.seed, 7919])
        pick = rng.choice(len(cands), size=need, replace=False)
        flat = [cands[i] for i in pick]
        k = spec.components_per_class
        sigs = [sorted(flat[c * k:(c + 1) * k]) for c in range(spec.num_classes)]
    keys = [tuple(sorted(s)) for s in sigs]
    if len(set(keys)) != len(keys):
        raise ValueError("duplicate class signatures")
    return sigs


def render_grating(spec: SynthSpec, signature, phases, noise: np.ndarray) -> np.ndarray:
    S = spec.image_size
    yy, xx = np.mgrid[0:S, 0:S].astype(np.float64)
    img = np.full((S, S), 0.5)
    for (fx, fy), ph in zip(signature, phases):
        img += spec.amplitude * np.cos(2 * np.pi * (fx * xx + fy * yy) / S + ph)
    out = img[:, :, None] + noise
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def synth_arrays(spec: SynthSpec):
    """Materialise the dataset in memory: ``(images, labels, splits, signatures)``."""
    if spec.image_size < 16:
        raise ValueError(f"synthetic image size must be >= 16, got {spec.image_size}")
    sigs = class_signatures(spec)
    rng = np.random.default_rng(spec.seed)
    S, C = spec.image_size, spec.channels
    images, labels, splits = [], [], []
    split_of = (["train"] * spec.train_per_class + ["val"] * spec.val_per_class
                + ["test"] * spec.test_per_class)
    for label, sig in enumerate(sigs):
        for i in range(spec.samples_per_class):
            phases = rng.uniform(0.0, 2 * np.pi, size=len(sig))
            noise = spec.noise * rng.standard_normal((S, S, C)) if spec.noise > 0 else np.zeros((S, S, C))
            images.append(render_grating(spec, sig, phases, noise))
            labels.append(label)
            splits.append(split_of[i])
    return np.stack(images), np.asarray(labels, dtype=np.int64), splits, sigs


def class_name(label: int, signature) -> str:
    parts = "_".join(f"fx{fx}fy{fy}" for fx, fy in signature)
    return f"c{label:02d}_{parts}"


def synth_generate(spec: SynthSpec, root) -> DatasetManifest:
    """Write the synthetic dataset as MORS1 files plus ``manifest.json``."""
    root = Path(root)
    images, labels, splits, sigs = synth_arrays(spec)
    names = [class_name(i, s) for i, s in enumerate(sigs)]
    counters = [0] * len(names)
    samples = []
    for img, label, split in zip(images, labels, splits):
        d = root / names[label]
        d.mkdir(parents=True, exist_ok=True)
        rel = f"{names[label]}/{counters[label]:05d}{IMAGE_SUFFIX}"
        counters[label] += 1
        mors.save_tensor(root / rel, img)
        samples.append(Sample(rel, int(label), split))
    n = spec.samples_per_class
    ratios = (spec.train_per_class / n, spec.val_per_class / n, spec.test_per_class / n)
    manifest = DatasetManifest(str(root), names, samples, spec.seed, ratios)
    manifest.save(root / "manifest.json")
    (root / "synth_spec.json").write_text(json.dumps(asdict(spec) | {"signatures": sigs}, indent=1))
    return manifest


def spectral_peak_classify(images: np.ndarray, signatures) -> np.ndarray:
    """Label each image by the signature owning its strongest non-DC frequency."""
    S = images.shape[1]
    gray = images.mean(axis=-1)
    power = np.abs(np.fft.fft2(gray - gray.mean(axis=(1, 2), keepdims=True))) ** 2
    owner = {}
    for label, sig in enumerate(signatures):
        for fx, fy in sig:
            owner[(fy % S, fx % S)] = label
            owner[(-fy % S, -fx % S)] = label
    keys = list(owner)
    rows = np.array([k[0] for k in keys])
    cols = np.array([k[1] for k in keys])
    best = power[:, rows, cols].argmax(axis=1)
    return np.array([owner[keys[i]] for i in best])


# batches and augmentation


@dataclass
class Batch:
    images: np.ndarray  # (B, S, S, C)
    labels: np.ndarray  # (B, K) soft labels


def one_hot(labels, num_classes: int, dtype=np.float32) -> np.ndarray:
    return np.eye(num_classes, dtype=dtype)[np.asarray(labels, dtype=int)]


@dataclass
class AugmentConfig:
    hflip: float = 0.0
    crop_pad: int = 0
    mixup: float = 0.0
    cutmix: float = 0.0

    @property
    def enabled(self) -> bool:
        return bool(self.hflip or self.crop_pad or self.mixup or self.cutmix)


def hflip(images: np.ndarray) -> np.ndarray:
    return images[:, :, ::-1, :].copy()


def random_crop(images: np.ndarray, pad: int, rng: np.random.Generator) -> np.ndarray:
    B, H, W, C = images.shape
    padded = np.pad(images, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    offs = rng.integers(0, 2 * pad + 1, size=(B, 2))
    return np.stack([padded[b, oy:oy + H, ox:ox + W] for b, (oy, ox) in enumerate(offs)])


def mixup(batch: Batch, lam: float, perm: np.ndarray) -> Batch:
    """``lam`` weights the original sample, ``1 - lam`` its partner ``perm``."""
    dt = batch.images.dtype.type
    imgs = dt(lam) * batch.images + dt(1 - lam) * batch.images[perm]
    labs = lam * batch.labels + (1 - lam) * batch.labels[perm]
    return Batch(imgs.astype(batch.images.dtype), labs.astype(batch.labels.dtype))


def cutmix_box(size: int, lam: float, rng: np.random.Generator) -> tuple[int, int, int, int]:
    """Rectangle covering roughly ``1 - lam`` of the image, clipped to bounds."""
    cut = int(round(size * np.sqrt(1.0 - lam)))
    cy, cx = rng.integers(0, size, size=2)
    y0, y1 = max(cy - cut // 2, 0), min(cy - cut // 2 + cut, size)
    x0, x1 = max(cx - cut // 2, 0), min(cx - cut // 2 + cut, size)
    return int(y0), int(y1), int(x0), int(x1)


def cutmix(batch: Batch, box, perm: np.ndarray) -> Batch:
    """Paste ``box`` from the partner images; labels mix by exact pasted area."""
    y0, y1, x0, x1 = box
    B, H, W, C = batch.images.shape
    imgs = batch.images.copy()
    imgs[:, y0:y1, x0:x1, :] = batch.images[perm, y0:y1, x0:x1, :]
    frac = (y1 - y0) * (x1 - x0) / (H * W)
    labs = (1 - frac) * batch.labels + frac * batch.labels[perm]
    return Batch(imgs, labs.astype(batch.labels.dtype))


def augment(batch: Batch, cfg: AugmentConfig, rng: np.random.Generator) -> Batch:
    if not cfg.enabled:
        return batch
    imgs = batch.images
    if cfg.hflip > 0:
        flip = rng.random(len(imgs)) < cfg.hflip
        imgs = imgs.copy()
        imgs[flip] = imgs[flip][:, :, ::-1, :]
    if cfg.crop_pad > 0:
        imgs = random_crop(imgs, cfg.crop_pad, rng)
    batch = Batch(imgs, batch.labels)
    if cfg.mixup > 0 or cfg.cutmix > 0:
        use_cutmix = cfg.cutmix > 0 and (cfg.mixup <= 0 or rng.random() < 0.5)
        alpha = cfg.cutmix if use_cutmix else cfg.mixup
        lam = float(rng.beta(alpha, alpha))
        perm = rng.permutation(len(imgs))
        if use_cutmix:
            batch = cutmix(batch, cutmix_box(imgs.shape[1], lam, rng), perm)
        else:
            batch = mixup(batch, lam, perm)
    return batch


def iterate_batches(n: int, batch_size: int, rng: Optional[np.random.Generator]) -> Iterator[np.ndarray]:
    """Index batches; shuffled when ``rng`` is given, sequential otherwise."""
    order = rng.permutation(n) if rng is not None else np.arange(n)
    for i in range(0, n, batch_size):
        yield order[i:i + batch_size]
