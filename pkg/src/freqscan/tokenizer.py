"""Learned half of the serializer: shared patch embedding and band bookkeeping."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from freqscan.serialization import SerializationConfig, band_images, band_order
from freqscan.spectral import MAX_BANDS


@dataclass
class TokenSequence:
    tokens: torch.Tensor  # (B, L, D)
    band_offsets: list[int]  # block starts, in sequence order
    band_order: list[int]  # zero-based band index of each block
    class_token_index: int | None
    total_length: int


class PatchEmbed(nn.Module):
    """3x3 same-padded conv stem, pointwise nonlinearity, then a strided patch projection."""

    def __init__(self, in_chans: int, stem_channels: int, embed_dim: int, patch_size: int,
                 activation: nn.Module | None = None):
        super().__init__()
        self.patch_size = patch_size
        self.stem = nn.Conv2d(in_chans, stem_channels, 3, padding=1)
        self.act = nn.GELU() if activation is None else activation
        self.proj = nn.Conv2d(stem_channels, embed_dim, patch_size, stride=patch_size)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % self.patch_size or x.shape[-2] % self.patch_size:
            raise ValueError(f"image side {tuple(x.shape[-2:])} not divisible by {self.patch_size}")
        z = self.proj(self.act(self.stem(x)))
        return z.flatten(2).transpose(1, 2)  # row-major within the band


class BandTokenizer(nn.Module):
    """Embeds K band images with shared weights and concatenates them in a fixed order.

    Each band carries its own positional table sized to its grid plus a row of
    a band-embedding table, so token values do not depend on the block order.
    """

    def __init__(self, config: SerializationConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.patch_embed = PatchEmbed(config.in_chans, config.stem_channels, d, config.patch_size)
        self.pos_embed = nn.ParameterList(
            [nn.Parameter(torch.zeros(g * g, d)) for g in config.band_grids]
        )
        self.band_embed = nn.Parameter(torch.zeros(MAX_BANDS, d))
        self.cls_token = nn.Parameter(torch.zeros(d)) if config.use_class_token else None
        for p in self.pos_embed:
            nn.init.trunc_normal_(p, std=0.02)
        nn.init.trunc_normal_(self.band_embed, std=0.02)
        if self.cls_token is not None:
            nn.init.trunc_normal_(self.cls_token, std=0.02)
        self.order = band_order(config)

    def embed_band(self, k: int, image: torch.Tensor) -> torch.Tensor:
        g = self.config.band_grids[k]
        side = g * self.config.patch_size
        if image.shape[-2:] != (side, side):
            raise ValueError(f"band {k + 1} must be {side}x{side}, got {tuple(image.shape[-2:])}")
        return self.patch_embed(image) + self.pos_embed[k] + self.band_embed[k]

    def forward(self, bands: list[torch.Tensor]) -> TokenSequence:
        if len(bands) != self.config.K:
            raise ValueError(f"expected {self.config.K} bands, got {len(bands)}")
        blocks, offsets, pos = [], [], 0
        for k in self.order:
            blk = self.embed_band(k, bands[k])
            offsets.append(pos)
            pos += blk.shape[1]
            blocks.append(blk)
        cls_index = None
        if self.cls_token is not None:
            batch = blocks[0].shape[0]
            blocks.append(self.cls_token.expand(batch, 1, -1))
            cls_index = pos
            pos += 1
        tokens = torch.cat(blocks, dim=1)
        return TokenSequence(tokens, offsets, list(self.order), cls_index, pos)


def bands_to_tensors(bands: list[np.ndarray]) -> list[torch.Tensor]:
    """Single-image band list (C, s, s) -> batched tensors (1, C, s, s)."""
    return [torch.from_numpy(np.ascontiguousarray(b)).unsqueeze(0) for b in bands]


def serialize(image, config: SerializationConfig, tokenizer: BandTokenizer) -> TokenSequence:
    """Image -> token sequence: decompose, resample, embed, order, append the class token."""
    if tokenizer.config != config:
        raise ValueError("tokenizer was built for a different serialization config")
    return tokenizer(bands_to_tensors(band_images(image, config)))
