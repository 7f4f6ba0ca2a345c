"""Band grids, sequence-length arithmetic, downsampling and band ordering.

This half of the serializer is torch-free so that length tables and
preprocessing stay cheap to import. The learned tokenizer lives in
:mod:`freqscan.tokenizer`.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from freqscan.spectral import MAX_BANDS, as_image, decompose, decompose_batch

ORDERS = ("low_to_high", "high_to_low", "random")


@dataclass(frozen=True)
class SerializationConfig:
    K: int = 4
    patch_size: int = 8
    embed_dim: int = 64
    image_size: int = 64
    in_chans: int = 1
    stem_channels: int = 16
    use_class_token: bool = True
    order: str = "low_to_high"
    order_seed: int = 0

    def __post_init__(self):
        if not 1 <= self.K <= MAX_BANDS:
            raise ValueError(f"K must be in [1, {MAX_BANDS}], got {self.K}")
        for name in ("patch_size", "embed_dim", "image_size", "in_chans", "stem_channels"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.image_size % self.patch_size:
            raise ValueError(
                f"image side {self.image_size} is not divisible by patch size {self.patch_size}"
            )
        if self.order not in ORDERS:
            raise ValueError(f"order must be one of {ORDERS}, got {self.order!r}")

    @property
    def base_grid(self) -> int:
        return self.image_size // self.patch_size

    @property
    def band_grids(self) -> list[int]:
        return band_grids(self.K, self.base_grid)

    @property
    def seq_len(self) -> int:
        return sequence_length(self.K, self.base_grid, self.use_class_token)

    def to_dict(self) -> dict:
        return asdict(self)


def band_grid(K: int, k: int, base_grid: int) -> int:
    """Tokens per side for band k (1-based): floor(base_grid / 2^(K-k)), at least 1."""
    if not 1 <= k <= K:
        raise ValueError(f"band index {k} outside 1..{K}")
    if base_grid < 1:
        raise ValueError("base_grid must be positive")
    return max(1, base_grid // 2 ** (K - k))


def band_grids(K: int, base_grid: int) -> list[int]:
    return [band_grid(K, k, base_grid) for k in range(1, K + 1)]


def sequence_length(K: int, base_grid: int, use_class_token: bool = True) -> int:
    return sum(g * g for g in band_grids(K, base_grid)) + int(bool(use_class_token))


def _interp_axis(x: np.ndarray, axis: int, target: int) -> np.ndarray:
    n = x.shape[axis]
    if target == n:
        return x
    if target == 1:
        # Corner alignment is undefined for one sample; use the centre.
        pos = np.array([(n - 1) / 2.0])
    else:
        pos = np.arange(target) * (n - 1) / (target - 1)
    lo = np.floor(pos).astype(int)
    lo = np.minimum(lo, n - 1)
    hi = np.minimum(lo + 1, n - 1)
    frac = pos - lo
    shape = [1] * x.ndim
    shape[axis] = target
    frac = frac.reshape(shape)
    a = np.take(x, lo, axis=axis)
    b = np.take(x, hi, axis=axis)
    # a + t(b - a) leaves constant regions exactly constant.
    return a + frac * (b - a)


def downsample(image: np.ndarray, target_h: int, target_w: int, axes=(0, 1)) -> np.ndarray:
    """Corner-aligned bilinear resampling to a size no larger than the source.

    ``axes`` names the (height, width) axes; the default matches (H, W[, C]) images.
    """
    x = np.asarray(image, dtype=np.float64)
    ah, aw = axes
    h, w = x.shape[ah], x.shape[aw]
    if target_h < 1 or target_w < 1:
        raise ValueError("target size must be positive")
    if target_h > h or target_w > w:
        raise ValueError(f"upsampling {h}x{w} -> {target_h}x{target_w} is not supported")
    return _interp_axis(_interp_axis(x, ah, target_h), aw, target_w)


def band_order(config: SerializationConfig) -> list[int]:
    """Zero-based band indices in the order their token blocks enter the sequence."""
    K = config.K
    if config.order == "low_to_high":
        return list(range(K))
    if config.order == "high_to_low":
        return list(range(K - 1, -1, -1))
    rng = np.random.default_rng(config.order_seed)
    perm = list(rng.permutation(K))
    # Redraw the identity so a "random" run never silently equals the default order.
    while K > 1 and perm == list(range(K)):
        perm = list(rng.permutation(K))
    return [int(p) for p in perm]


def band_offsets(config: SerializationConfig) -> list[int]:
    """Start index of each token block, in sequence order."""
    grids = config.band_grids
    offsets, pos = [], 0
    for k in band_order(config):
        offsets.append(pos)
        pos += grids[k] ** 2
    return offsets


def band_images(image, config: SerializationConfig) -> list[np.ndarray]:
    """Decompose one image and resample band k to band_grid_k * patch_size per side.

    Returns K float32 arrays shaped (C, s_k, s_k), lowest band first.
    """
    x = as_image(image)
    if x.shape[0] != config.image_size or x.shape[1] != config.image_size:
        raise ValueError(
            f"image is {x.shape[0]}x{x.shape[1]}, config expects {config.image_size}x{config.image_size}"
        )
    if x.shape[2] != config.in_chans:
        raise ValueError(f"image has {x.shape[2]} channels, config expects {config.in_chans}")
    out = []
    for g, band in zip(config.band_grids, decompose(x.astype(np.float64), config.K)):
        side = g * config.patch_size
        small = downsample(band, side, side)
        out.append(np.ascontiguousarray(np.moveaxis(small, -1, 0), dtype=np.float32))
    return out


def band_images_batch(images: np.ndarray, config: SerializationConfig) -> list[np.ndarray]:
    """Batched :func:`band_images` for a stack shaped (N, C, H, W)."""
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4 or x.shape[1] != config.in_chans or x.shape[2:] != (config.image_size,) * 2:
        raise ValueError(f"expected (N, {config.in_chans}, {config.image_size}, {config.image_size}), got {x.shape}")
    out = []
    for g, band in zip(config.band_grids, decompose_batch(x, config.K)):
        side = g * config.patch_size
        out.append(downsample(band, side, side, axes=(2, 3)).astype(np.float32))
    return out
