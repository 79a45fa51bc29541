"""Synthetic infrared scenes, dataset directories, resizing and flips.

A dataset directory holds ``images/<stem>.pgm`` and ``masks/<stem>.pgm``.
Images may be 8- or 16-bit; they are scaled to [0, 1] by the maximum
representable value. PNG files are accepted on read as well.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

IMAGE_SUFFIXES = (".pgm", ".png")


@dataclass
class Sample:
    image: np.ndarray  # float [1, H, W] in [0, 1]
    mask: np.ndarray  # uint8 [1, H, W] in {0, 1}
    id: str

    def __post_init__(self):
        if self.image.shape != self.mask.shape or self.image.ndim != 3 or self.image.shape[0] != 1:
            raise ValueError(f"sample {self.id!r}: image {self.image.shape} vs mask {self.mask.shape}")


@dataclass
class SynthParams:
    height: int = 64
    width: int = 64
    targets_min: int = 1
    targets_max: int = 3
    amplitude_min: float = 0.45
    amplitude_max: float = 0.8
    sigma_min: float = 0.6
    sigma_max: float = 1.3
    clutter: float = 0.25
    noise: float = 0.02
    background: float = 0.25
    margin: int = 4
    min_separation: float = 8.0
    seed: int = 0

    def validate(self) -> None:
        if self.height < 2 * self.margin + 1 or self.width < 2 * self.margin + 1:
            raise ValueError(f"image {self.height}x{self.width} too small for margin {self.margin}")
        if not 0 < self.amplitude_min <= self.amplitude_max <= 1:
            raise ValueError(
                f"amplitude range must satisfy 0 < min <= max <= 1, got ({self.amplitude_min}, {self.amplitude_max})"
            )
        if not 0 < self.sigma_min <= self.sigma_max:
            raise ValueError(f"sigma range must be positive, got ({self.sigma_min}, {self.sigma_max})")
        if not 0 <= self.targets_min <= self.targets_max:
            raise ValueError(f"bad target count range ({self.targets_min}, {self.targets_max})")
        if self.clutter < 0 or self.noise < 0:
            raise ValueError("clutter and noise must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SynthParams":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _box_blur(a: np.ndarray, r: int, axis: int) -> np.ndarray:
    """Centered moving average of width ``2r+1`` with reflected edges."""
    if r <= 0:
        return a
    pad = [(0, 0)] * a.ndim
    pad[axis] = (r + 1, r)
    c = np.cumsum(np.pad(a, pad, mode="reflect"), axis=axis)
    n = a.shape[axis]
    hi = np.take(c, np.arange(2 * r + 1, 2 * r + 1 + n), axis=axis)
    lo = np.take(c, np.arange(0, n), axis=axis)
    return (hi - lo) / (2 * r + 1)


def _place_centers(rng: np.random.Generator, p: SynthParams, k: int) -> list[tuple[float, float]]:
    centers: list[tuple[float, float]] = []
    for _ in range(k):
        for _attempt in range(100):
            cy = rng.uniform(p.margin, p.height - 1 - p.margin)
            cx = rng.uniform(p.margin, p.width - 1 - p.margin)
            if all(math.hypot(cy - y, cx - x) >= p.min_separation for y, x in centers):
                centers.append((cy, cx))
                break
    return centers


def synth_scene(params: SynthParams, index: int) -> Sample:
    """Clutter background plus Gaussian point targets; deterministic in (seed, index)."""
    params.validate()
    p = params
    rng = np.random.default_rng([p.seed, index])
    h, w = p.height, p.width
    r = max(1, round(h / 8))
    field_ = _box_blur(_box_blur(rng.standard_normal((h, w)), r, 0), r, 1)
    field_ /= max(float(np.abs(field_).max()), 1e-12)
    bg = p.background + p.clutter * field_ + p.noise * rng.standard_normal((h, w))

    k = int(rng.integers(p.targets_min, p.targets_max + 1))
    yy, xx = np.indices((h, w), dtype=np.float64)
    img = bg
    mask = np.zeros((h, w), dtype=bool)
    for cy, cx in _place_centers(rng, p, k):
        amp = rng.uniform(p.amplitude_min, p.amplitude_max)
        sigma = rng.uniform(p.sigma_min, p.sigma_max)
        g = np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * sigma * sigma))
        img = img + amp * g
        # half of the sampled peak, so the nearest pixel is always included
        mask |= g >= 0.5 * g.max()
    img = np.clip(img, 0.0, 1.0).astype(np.float32)
    return Sample(img[None], mask[None].astype(np.uint8), f"synth_{p.seed}_{index:05d}")


def synth_dataset(params: SynthParams, n: int, start: int = 0) -> list[Sample]:
    return [synth_scene(params, i) for i in range(start, start + n)]


# --------------------------------------------------------------------------
# directory I/O


def _read_gray(path: Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            arr = np.asarray(im)
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read image {path}: {exc}") from exc
    if arr.ndim == 3:
        raise OSError(f"{path}: expected a single-channel image, got mode {mode}")
    if mode in ("1", "L", "P"):
        return arr.astype(np.float32) / (1.0 if mode == "1" else 255.0)
    # 16-bit modes ("I;16", "I")
    return arr.astype(np.float32) / 65535.0


def _index(folder: Path) -> dict[str, Path]:
    out: dict[str, Path] = {}
    if not folder.is_dir():
        return out
    for f in sorted(folder.iterdir()):
        if f.suffix.lower() in IMAGE_SUFFIXES:
            if f.stem in out:
                raise OSError(f"duplicate stem {f.stem!r} in {folder}")
            out[f.stem] = f
    return out


def load_dataset(root) -> list[Sample]:
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} does not exist")
    images, masks = _index(root / "images"), _index(root / "masks")
    missing = sorted(set(images) - set(masks))
    if missing:
        raise FileNotFoundError(f"no mask for image stem {missing[0]!r} under {root / 'masks'}")
    orphans = sorted(set(masks) - set(images))
    if orphans:
        raise FileNotFoundError(f"no image for mask stem {orphans[0]!r} under {root / 'images'}")
    out = []
    for stem in sorted(images):
        img = _read_gray(images[stem])
        m = _read_gray(masks[stem]) > 0
        if img.shape != m.shape:
            raise ValueError(f"{stem}: image {img.shape} and mask {m.shape} differ in size")
        out.append(Sample(img[None], m[None].astype(np.uint8), stem))
    return out


def save_sample(sample: Sample, root) -> tuple[Path, Path]:
    """Write ``sample`` as 8-bit binary PGMs; masks are stored as 0/255."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    ip = root / "images" / f"{sample.id}.pgm"
    mp = root / "masks" / f"{sample.id}.pgm"
    img8 = np.round(np.clip(sample.image[0], 0, 1) * 255).astype(np.uint8)
    Image.fromarray(img8, mode="L").save(ip)
    Image.fromarray((sample.mask[0] > 0).astype(np.uint8) * 255, mode="L").save(mp)
    return ip, mp


# --------------------------------------------------------------------------
# transforms


def _bilinear_axis(a: np.ndarray, out: int, axis: int) -> np.ndarray:
    n = a.shape[axis]
    if n == out:
        return a
    # half-pixel centers, clamped at the borders
    src = np.clip((np.arange(out) + 0.5) * n / out - 0.5, 0, n - 1)
    i0 = np.floor(src).astype(np.intp)
    i1 = np.minimum(i0 + 1, n - 1)
    t = (src - i0).astype(a.dtype)
    shape = [1] * a.ndim
    shape[axis] = out
    t = t.reshape(shape)
    a0, a1 = np.take(a, i0, axis=axis), np.take(a, i1, axis=axis)
    return a0 + t * (a1 - a0)


def _nearest_index(n: int, out: int) -> np.ndarray:
    return np.minimum(((np.arange(out) + 0.5) * n / out).astype(np.intp), n - 1)


def resize(sample: Sample, out_h: int, out_w: int) -> Sample:
    if out_h <= 0 or out_w <= 0:
        raise ValueError(f"target size must be positive, got {out_h}x{out_w}")
    img = _bilinear_axis(_bilinear_axis(sample.image, out_h, 1), out_w, 2)
    _, h, w = sample.mask.shape
    m = sample.mask[:, _nearest_index(h, out_h)][:, :, _nearest_index(w, out_w)]
    return Sample(np.clip(img, 0, 1).astype(sample.image.dtype), m, sample.id)


def augment_flip(sample: Sample, rng: np.random.Generator) -> Sample:
    """Independent horizontal and vertical flips, each with probability 0.5."""
    img, m = sample.image, sample.mask
    if rng.random() < 0.5:
        img, m = img[:, :, ::-1], m[:, :, ::-1]
    if rng.random() < 0.5:
        img, m = img[:, ::-1], m[:, ::-1]
    return Sample(np.ascontiguousarray(img), np.ascontiguousarray(m), sample.id)


def stack(samples: list[Sample], dtype=np.float32) -> tuple[np.ndarray, np.ndarray]:
    """Batch arrays ``[N,1,H,W]`` for images and masks."""
    x = np.stack([s.image for s in samples]).astype(dtype, copy=False)
    y = np.stack([s.mask for s in samples]).astype(dtype, copy=False)
    return x, y


def split_holdout(samples: list[Sample], seed: int, frac: float = 0.2) -> tuple[list[Sample], list[Sample]]:
    """Seeded shuffle, then the last ``frac`` becomes the held-out set."""
    order = np.random.default_rng(seed).permutation(len(samples))
    shuffled = [samples[i] for i in order]
    n_test = max(1, int(round(frac * len(samples)))) if len(samples) > 1 else 0
    return shuffled[: len(samples) - n_test], shuffled[len(samples) - n_test :]


def optional_resize(samples: list[Sample], size: Optional[tuple[int, int]]) -> list[Sample]:
    if size is None:
        return samples
    return [s if s.image.shape[1:] == tuple(size) else resize(s, *size) for s in samples]
