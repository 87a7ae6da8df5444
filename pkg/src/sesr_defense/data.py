"""Synthetic desk-scale corpora and PPM dataset directories."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .io import read_ppm, write_ppm

SHAPES = ("disk", "square", "triangle", "cross")


def smooth_field(rng: np.random.Generator, h: int, w: int, exponent: float = 2.0) -> np.ndarray:
    """Zero-mean random field with a 1/f^exponent power spectrum, unit std."""
    fy = np.fft.fftfreq(h)[:, None]
    fx = np.fft.rfftfreq(w)[None, :]
    f = np.sqrt(fy * fy + fx * fx)
    f[0, 0] = 1.0
    spec = (rng.normal(size=f.shape) + 1j * rng.normal(size=f.shape)) / f ** (exponent / 2)
    spec[0, 0] = 0
    field = np.fft.irfft2(spec, s=(h, w))
    return field / (field.std() + 1e-12)


def _shape_mask(kind: str, h: int, w: int, cy: float, cx: float, r: float, angle: float = 0.0) -> np.ndarray:
    """Anti-aliased (4x supersampled) coverage mask of one shape."""
    ss = 4
    yy, xx = np.mgrid[0:h * ss, 0:w * ss]
    y = (yy + 0.5) / ss - cy
    x = (xx + 0.5) / ss - cx
    ca, sa = np.cos(angle), np.sin(angle)
    u, v = ca * x + sa * y, -sa * x + ca * y
    if kind == "disk":
        m = u * u + v * v <= r * r
    elif kind == "square":
        m = (np.abs(u) <= r * 0.85) & (np.abs(v) <= r * 0.85)
    elif kind == "triangle":
        m = (v <= r * 0.7) & (v >= -r + 1.7 * np.abs(u))
    elif kind == "cross":
        t = r * 0.35
        m = ((np.abs(u) <= t) & (np.abs(v) <= r)) | ((np.abs(v) <= t) & (np.abs(u) <= r))
    else:
        raise ValueError(kind)
    return m.reshape(h, ss, w, ss).mean(axis=(1, 3))


def natural_image(rng: np.random.Generator, h: int, w: int, n_shapes: int = 4) -> np.ndarray:
    """Piecewise-smooth RGB test image: colored 1/f background plus a few shapes."""
    base = rng.uniform(0.2, 0.8, size=3)[:, None, None]
    img = base + 0.12 * np.stack([smooth_field(rng, h, w, 3.5) for _ in range(3)])
    for _ in range(n_shapes):
        kind = SHAPES[rng.integers(len(SHAPES))]
        r = rng.uniform(0.1, 0.3) * min(h, w)
        m = _shape_mask(kind, h, w, rng.uniform(0, h), rng.uniform(0, w), r, rng.uniform(0, np.pi))
        color = rng.uniform(0, 1, size=3)[:, None, None]
        shade = 1 + 0.1 * smooth_field(rng, h, w, 3.0)
        img = img * (1 - m) + m * np.clip(color * shade, 0, 1)
    img += 0.005 * rng.normal(size=img.shape)  # fine texture
    return np.clip(img, 0, 1).astype(np.float32)


def synthetic_corpus(n: int, size: int = 96, seed: int = 0) -> list:
    rng = np.random.default_rng(seed)
    return [natural_image(rng, size, size) for _ in range(n)]


def shapes_dataset(n_per_class: int, size: int = 32, seed: int = 0, classes: int = 4):
    """Labelled images: one centred-ish shape per image, label = shape kind.

    Returns ``(images (N, 3, size, size) float32, labels (N,) int64)``.
    """
    if not 2 <= classes <= len(SHAPES):
        raise ValueError(f"classes must be in [2, {len(SHAPES)}]")
    rng = np.random.default_rng(seed)
    images, labels = [], []
    for i in range(n_per_class * classes):
        label = i % classes
        bg = rng.uniform(0.15, 0.85, size=3)[:, None, None]
        img = bg + 0.08 * np.stack([smooth_field(rng, size, size, 2.5) for _ in range(3)])
        fg = rng.uniform(0, 1, size=3)[:, None, None]
        while np.abs(fg - bg).max() < 0.35:
            fg = rng.uniform(0, 1, size=3)[:, None, None]
        r = rng.uniform(0.25, 0.38) * size
        c = size / 2
        m = _shape_mask(
            SHAPES[label], size, size, c + rng.uniform(-3, 3), c + rng.uniform(-3, 3), r, rng.uniform(-0.3, 0.3)
        )
        img = img * (1 - m) + m * fg
        img += 0.01 * rng.normal(size=img.shape)
        images.append(np.clip(img, 0, 1))
        labels.append(label)
    order = rng.permutation(len(images))
    return np.asarray(images, dtype=np.float32)[order], np.asarray(labels, dtype=np.int64)[order]


def load_image_dir(path) -> list:
    """All ``*.ppm`` files (recursively, sorted) as (3, h, w) arrays."""
    return [read_ppm(p)[0] for p in sorted(Path(path).rglob("*.ppm"))]


def load_labeled_dir(path):
    """PPM dataset with labels from subdirectory names (sorted class order).

    Returns ``(images, labels, class_names, file_names)``; images must share a size.
    """
    root = Path(path)
    classes = sorted(d.name for d in root.iterdir() if d.is_dir())
    images, labels, names = [], [], []
    for k, cls in enumerate(classes):
        for f in sorted((root / cls).glob("*.ppm")):
            images.append(read_ppm(f)[0])
            labels.append(k)
            names.append(f"{cls}/{f.name}")
    if not images:
        return np.zeros((0, 3, 0, 0), np.float32), np.zeros(0, np.int64), classes, names
    return np.stack(images), np.asarray(labels, dtype=np.int64), classes, names


def write_labeled_dir(path, images, labels, class_names=None) -> list:
    root = Path(path)
    out = []
    for i, (img, lab) in enumerate(zip(images, labels)):
        cls = class_names[lab] if class_names else f"class{lab}"
        d = root / cls
        d.mkdir(parents=True, exist_ok=True)
        f = d / f"img{i:05d}.ppm"
        write_ppm(f, img)
        out.append(f)
    return out
