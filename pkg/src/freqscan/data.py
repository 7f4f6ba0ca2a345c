"""Datasets: synthetic frequency-annulus classes and PGM class folders."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from freqscan.netpbm import read_pnm, write_pgm
from freqscan.spectral import idct2


@dataclass
class Dataset:
    images: np.ndarray  # (N, C, H, W) float32
    labels: np.ndarray  # (N,) int64
    classes: list[str]

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.classes)


def annulus_edges(num_classes: int, lo: float = 0.03, hi: float = 0.75) -> np.ndarray:
    """Geometrically spaced radial frequency edges, one annulus per class."""
    return np.geomspace(lo, hi, num_classes + 1)


def synthetic_bands(n: int, num_classes: int = 4, image_size: int = 64, seed: int = 0,
                    split: str = "train", components: int = 6, signal: float = 0.2,
                    noise: float = 0.05) -> Dataset:
    """Class c is a random mixture of DCT cosine patterns from its own radial annulus.

    Radial frequency of coefficient (u, v) is sqrt(u^2 + v^2) / (sqrt(2) * size).
    Classes are balanced (n must be a multiple of ``num_classes``); the train and
    test splits draw from disjoint seed streams.
    """
    if n % num_classes:
        raise ValueError(f"n={n} is not a multiple of num_classes={num_classes}")
    if split not in ("train", "test"):
        raise ValueError(f"split must be train or test, got {split!r}")
    rng = np.random.default_rng([seed, 0 if split == "train" else 1])
    u = np.arange(image_size)
    radius = np.sqrt(u[:, None] ** 2 + u[None, :] ** 2) / (np.sqrt(2) * image_size)
    edges = annulus_edges(num_classes)
    pools = [np.flatnonzero((radius >= edges[c]) & (radius < edges[c + 1])) for c in range(num_classes)]
    labels = np.repeat(np.arange(num_classes), n // num_classes)
    labels = labels[rng.permutation(n)]
    images = np.empty((n, 1, image_size, image_size), dtype=np.float32)
    for i, c in enumerate(labels):
        spec = np.zeros(image_size * image_size)
        picks = rng.choice(pools[c], size=components, replace=len(pools[c]) < components)
        np.add.at(spec, picks, rng.standard_normal(components))
        pattern = idct2(spec.reshape(image_size, image_size))
        pattern /= pattern.std() + 1e-12
        images[i, 0] = 0.5 + signal * pattern + noise * rng.standard_normal((image_size, image_size))
    return Dataset(images, labels.astype(np.int64), [f"class_{c}" for c in range(num_classes)])


def load_image_folder(root, image_size: int | None = None) -> Dataset:
    """One subdirectory per class, each holding PGM files; classes sorted by name."""
    root = Path(root)
    classes = sorted(p.name for p in root.iterdir() if p.is_dir())
    if not classes:
        raise ValueError(f"{root}: no class subdirectories")
    images, labels = [], []
    for c, name in enumerate(classes):
        for f in sorted((root / name).glob("*.pgm")):
            img = read_pnm(f)
            if image_size is not None and img.shape != (image_size, image_size):
                raise ValueError(f"{f}: expected {image_size}x{image_size}, got {img.shape}")
            images.append(img)
            labels.append(c)
    if not images:
        raise ValueError(f"{root}: no .pgm files found")
    return Dataset(np.stack(images)[:, None].astype(np.float32), np.array(labels, dtype=np.int64), classes)


def split_dataset(ds: Dataset, test_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Deterministic per-class split so both halves stay stratified."""
    rng = np.random.default_rng([seed, 2])
    train_idx, test_idx = [], []
    for c in range(ds.num_classes):
        idx = np.flatnonzero(ds.labels == c)
        idx = idx[rng.permutation(len(idx))]
        k = int(round(len(idx) * test_fraction))
        test_idx.extend(idx[:k])
        train_idx.extend(idx[k:])
    tr, te = np.sort(train_idx), np.sort(test_idx)
    return (Dataset(ds.images[tr], ds.labels[tr], ds.classes),
            Dataset(ds.images[te], ds.labels[te], ds.classes))


def write_image_folder(ds: Dataset, root) -> None:
    root = Path(root)
    for c, name in enumerate(ds.classes):
        (root / name).mkdir(parents=True, exist_ok=True)
    for i, (img, c) in enumerate(zip(ds.images, ds.labels)):
        write_pgm(root / ds.classes[c] / f"{i:05d}.pgm", img[0])
