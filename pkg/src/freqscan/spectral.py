"""Orthonormal 2D DCT, anti-diagonal frequency indexing and cumulative low-pass bands.

Everything here is plain numpy and runs in float64 internally. Functions that
take a "plane" accept any array whose last two axes are (height, width), so a
stack of planes is transformed in one call.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_BANDS = 8


@dataclass(frozen=True)
class BandPlan:
    """Number of bands and their cumulative cutoffs, lowest first."""

    K: int
    thresholds: tuple[float, ...]

    def __post_init__(self):
        if len(self.thresholds) != self.K:
            raise ValueError(f"expected {self.K} thresholds, got {len(self.thresholds)}")
        if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")
        if not all(0.0 < t <= 1.0 for t in self.thresholds):
            raise ValueError("thresholds must lie in (0, 1]")


@lru_cache(maxsize=64)
def dct_basis(n: int) -> np.ndarray:
    """Orthonormal DCT-II matrix: row u holds alpha(u) * cos((2i + 1) u pi / 2n)."""
    if n < 1:
        raise ValueError("basis size must be positive")
    i = np.arange(n)
    u = i[:, None]
    m = np.cos((2 * i[None, :] + 1) * u * np.pi / (2 * n))
    alpha = np.full(n, np.sqrt(2.0 / n))
    alpha[0] = np.sqrt(1.0 / n)
    m = alpha[:, None] * m
    m.setflags(write=False)
    return m


def _check_plane(x, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim < 2 or x.shape[-1] == 0 or x.shape[-2] == 0:
        raise ValueError(f"{what} must be a non-empty array with at least two axes")
    if not np.isfinite(x).all():
        raise ValueError(f"{what} contains non-finite values")
    return x


def dct2(plane) -> np.ndarray:
    """Separable orthonormal type-II DCT over the last two axes."""
    x = _check_plane(plane, "image plane")
    mh = dct_basis(x.shape[-2])
    mw = dct_basis(x.shape[-1])
    return mh @ x @ mw.T


def idct2(spectrum, shape: tuple[int, int] | None = None) -> np.ndarray:
    """Inverse of :func:`dct2`.

    ``shape`` optionally declares the expected (height, width); a mismatch raises.
    """
    s = _check_plane(spectrum, "spectrum")
    if shape is not None and tuple(s.shape[-2:]) != tuple(shape):
        raise ValueError(f"spectrum shape {s.shape[-2:]} does not match declared {tuple(shape)}")
    mh = dct_basis(s.shape[-2])
    mw = dct_basis(s.shape[-1])
    return mh.T @ s @ mw


def _frequency_terms(h: int, w: int):
    # f(u, v) = num(u, v) / den, kept as an exact integer ratio so that the
    # threshold comparison is not at the mercy of rounding on the boundary.
    u = np.arange(h)[:, None]
    v = np.arange(w)[None, :]
    if h > 1 and w > 1:
        return u * (w - 1) + v * (h - 1), 2 * (h - 1) * (w - 1)
    if h > 1:
        return np.broadcast_to(u, (h, w)), h - 1
    if w > 1:
        return np.broadcast_to(v, (h, w)), w - 1
    return np.zeros((1, 1), dtype=int), 1


def frequency_index(u: int, v: int, h: int, w: int) -> float:
    """Normalized anti-diagonal coordinate of coefficient (u, v), in [0, 1].

    Level sets are the lines perpendicular to the spectrum's main diagonal.
    When one side has length 1 only the other axis contributes.
    """
    if h < 1 or w < 1:
        raise ValueError("plane size must be positive")
    if not (0 <= u < h and 0 <= v < w):
        raise ValueError(f"index ({u}, {v}) outside a {h}x{w} spectrum")
    num, den = _frequency_terms(h, w)
    return float(num[u, v]) / den


def frequency_map(h: int, w: int) -> np.ndarray:
    num, den = _frequency_terms(h, w)
    return np.asarray(num, dtype=np.float64) / den


def band_thresholds(K: int) -> BandPlan:
    """Cutoffs 1/2^(K-k) for k = 1..K, so the last band keeps everything."""
    if not isinstance(K, (int, np.integer)) or not 1 <= K <= MAX_BANDS:
        raise ValueError(f"K must be an integer in [1, {MAX_BANDS}], got {K!r}")
    return BandPlan(int(K), tuple(1.0 / 2 ** (K - k) for k in range(1, K + 1)))


def low_pass_keep(h: int, w: int, f_k: float) -> np.ndarray:
    """Boolean mask of coefficients with frequency_index <= f_k."""
    num, den = _frequency_terms(h, w)
    return num <= f_k * den


def low_pass_mask(spectrum, f_k: float) -> np.ndarray:
    """Zero every coefficient whose frequency exceeds ``f_k``; the boundary is kept."""
    if not 0.0 <= f_k <= 1.0:
        raise ValueError(f"cutoff must lie in [0, 1], got {f_k}")
    s = _check_plane(spectrum, "spectrum")
    keep = low_pass_keep(s.shape[-2], s.shape[-1], f_k)
    return np.where(keep, s, 0.0)


def as_image(image) -> np.ndarray:
    """Validate an image and return it as (H, W, C)."""
    x = np.asarray(image)
    if x.ndim == 2:
        x = x[:, :, None]
    if x.ndim != 3 or min(x.shape) < 1:
        raise ValueError(f"image must be (H, W) or (H, W, C), got shape {x.shape}")
    if not np.issubdtype(x.dtype, np.number):
        raise ValueError("image must be numeric")
    if not np.isfinite(x).all():
        raise ValueError("image contains non-finite values")
    return x


def decompose(image, K: int) -> list[np.ndarray]:
    """Split an image into K cumulative low-pass images, lowest cutoff first.

    Channels are handled independently. Output k keeps DCT coefficients up to
    cutoff 1/2^(K-k); the last output reproduces the input. The result has the
    input's layout and floating dtype (float64 for integer input).
    """
    squeeze = np.ndim(image) == 2
    x = as_image(image)
    out_dtype = x.dtype if np.issubdtype(x.dtype, np.floating) else np.float64
    plan = band_thresholds(K)
    planes = np.moveaxis(x.astype(np.float64), -1, 0)
    spec = dct2(planes)
    h, w = x.shape[:2]
    bands = []
    for f_k in plan.thresholds:
        keep = low_pass_keep(h, w, f_k)
        rec = np.moveaxis(idct2(np.where(keep, spec, 0.0)), 0, -1).astype(out_dtype)
        bands.append(rec[:, :, 0] if squeeze else rec)
    return bands


def decompose_batch(images: np.ndarray, K: int) -> list[np.ndarray]:
    """:func:`decompose` for a stack shaped (N, C, H, W); returns K arrays of that shape."""
    x = _check_plane(images, "image batch")
    plan = band_thresholds(K)
    spec = dct2(x)
    h, w = x.shape[-2:]
    return [idct2(np.where(low_pass_keep(h, w, f_k), spec, 0.0)) for f_k in plan.thresholds]


def spectral_energy(plane) -> float:
    return float(np.sum(dct2(plane) ** 2))
