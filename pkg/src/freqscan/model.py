"""Plain (non-pyramid) classifier over the frequency-ordered token sequence."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from freqscan.serialization import SerializationConfig, band_images
from freqscan.ssm import SelectiveSSM
from freqscan.tokenizer import BandTokenizer, TokenSequence, bands_to_tensors


@dataclass(frozen=True)
class ModelConfig:
    depth: int = 4
    embed_dim: int = 64
    state_size: int = 16
    mlp_ratio: float = 2.0
    num_classes: int = 4
    serialization: SerializationConfig = field(default_factory=SerializationConfig)
    scan: str = "parallel"

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be at least 1")
        if self.embed_dim != self.serialization.embed_dim:
            raise ValueError("embed_dim must match the serialization embed_dim")
        if self.state_size < 1 or self.num_classes < 1 or self.mlp_ratio <= 0:
            raise ValueError("state_size, num_classes and mlp_ratio must be positive")
        if self.scan not in ("parallel", "sequential"):
            raise ValueError(f"unknown scan {self.scan!r}")

    @property
    def mlp_hidden(self) -> int:
        return int(round(self.embed_dim * self.mlp_ratio))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["serialization"] = SerializationConfig(**d["serialization"])
        return cls(**d)

    def with_serialization(self, **changes) -> "ModelConfig":
        return replace(self, serialization=replace(self.serialization, **changes))


# Reference point for the scaled-down presets: the smallest plain model in the
# literature is 24 blocks at width 192, ~7M parameters and ~1.7 GFLOPs at 224px.
REFERENCE_PLAIN_MINI = {"depth": 24, "embed_dim": 192, "params_m": 7, "flops_g": 1.7}


def preset(name: str, num_classes: int = 4, image_size: int = 64) -> ModelConfig:
    if name == "micro_plain":
        depth, dim = 4, 64
    elif name == "tiny_plain":
        depth, dim = 8, 128
    else:
        raise ValueError(f"unknown preset {name!r}; choose micro_plain or tiny_plain")
    ser = SerializationConfig(K=4, patch_size=8, embed_dim=dim, image_size=image_size)
    return ModelConfig(depth=depth, embed_dim=dim, state_size=16, mlp_ratio=2.0,
                       num_classes=num_classes, serialization=ser)


class Block(nn.Module):
    """Pre-norm residual pair: t = z + SSM(LN(z)); out = t + MLP(LN(t))."""

    def __init__(self, dim: int, state_size: int, mlp_hidden: int, scan: str = "parallel"):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.in_proj = nn.Linear(dim, dim)
        self.ssm = SelectiveSSM(dim, state_size, scan=scan)
        self.out_proj = nn.Linear(dim, dim)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = nn.Linear(dim, mlp_hidden)
        self.fc2 = nn.Linear(mlp_hidden, dim)

    def mixer(self, x: torch.Tensor) -> torch.Tensor:
        return self.out_proj(self.ssm(F.silu(self.in_proj(x))))

    def mlp(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(F.gelu(self.fc1(x)))

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        t = z + self.mixer(self.norm1(z))
        return t + self.mlp(self.norm2(t))


class PlainClassifier(nn.Module):
    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.tokenizer = BandTokenizer(config.serialization)
        self.blocks = nn.ModuleList(
            Block(config.embed_dim, config.state_size, config.mlp_hidden, config.scan)
            for _ in range(config.depth)
        )
        self.norm = nn.LayerNorm(config.embed_dim)
        self.head = nn.Linear(config.embed_dim, config.num_classes)
        self.apply(_init_linear)

    def encode(self, bands: list[torch.Tensor]) -> tuple[torch.Tensor, TokenSequence]:
        seq = self.tokenizer(bands)
        z = seq.tokens
        for i, blk in enumerate(self.blocks):
            z = blk(z)
            if not torch.isfinite(z).all():
                raise FloatingPointError(f"non-finite activations after block {i}")
        return z, seq

    def forward(self, bands: list[torch.Tensor]) -> torch.Tensor:
        z, seq = self.encode(bands)
        # Without a class token the last position is the one that has seen everything.
        idx = seq.class_token_index if seq.class_token_index is not None else seq.total_length - 1
        return self.head(self.norm(z[:, idx]))

    def predict_image(self, image) -> torch.Tensor:
        """Logits for one (H, W[, C]) image."""
        return self(bands_to_tensors(band_images(image, self.config.serialization)))[0]


def _init_linear(m: nn.Module):
    # Unit-gain fan-in scaling. The cross-token SSM term is cubic in its input,
    # so a small fixed std (e.g. 0.02) leaves the class token blind at init.
    if isinstance(m, nn.Linear):
        nn.init.normal_(m.weight, std=1.0 / math.sqrt(m.in_features))
        if m.bias is not None:
            nn.init.zeros_(m.bias)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())


def analytic_parameter_count(config: ModelConfig) -> int:
    """Closed-form parameter count, derived from the layer shapes rather than the module."""
    s = config.serialization
    d, n, hid = config.embed_dim, config.state_size, config.mlp_hidden
    stem = s.stem_channels * s.in_chans * 9 + s.stem_channels
    proj = d * s.stem_channels * s.patch_size ** 2 + d
    pos = sum(g * g for g in s.band_grids) * d
    band = 8 * d
    cls = d if s.use_class_token else 0
    ssm = d * n + 2 * n * d + d * d + d + d
    block = 2 * (2 * d) + 2 * (d * d + d) + ssm + (d * hid + hid) + (hid * d + d)
    return stem + proj + pos + band + cls + config.depth * block + 2 * d + d * config.num_classes + config.num_classes


def estimate_flops(config: ModelConfig) -> int:
    """Rough multiply-accumulate count for one image (stem, projections, scan, MLP, head)."""
    s = config.serialization
    d, n, hid = config.embed_dim, config.state_size, config.mlp_hidden
    L = s.seq_len
    flops = 0
    for g in s.band_grids:
        side = g * s.patch_size
        flops += side * side * s.stem_channels * s.in_chans * 9
        flops += g * g * d * s.stem_channels * s.patch_size ** 2
    per_token = 2 * d * d + 2 * n * d + d * d + 3 * d * n + 2 * d * hid
    return flops + config.depth * L * per_token + d * config.num_classes


def build(config: ModelConfig, seed: int = 0) -> PlainClassifier:
    torch.manual_seed(seed)
    return PlainClassifier(config)


def batch_bands(bands: list[np.ndarray], index=None) -> list[torch.Tensor]:
    """Select rows of precomputed (N, C, s, s) band stacks as tensors."""
    if index is None:
        return [torch.from_numpy(b) for b in bands]
    return [torch.from_numpy(b[index]) for b in bands]
