"""Small U-shaped segmentation network with a K-way permutation head.

Encoder/decoder/head parameters live in separate submodules so gradient steps
can be restricted to any subset of groups and so checkpoints keep a stable
name prefix per group. GroupNorm is used instead of BatchNorm to keep every
piece of state in parameters (no running statistics), which makes the
frozen-decoder and byte-identical-checkpoint guarantees exact.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

CHECKPOINT_FORMAT = "selfloop-seg-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class NetworkConfig:
    in_channels: int = 3
    base_width: int = 8
    depth: int = 3
    k_classes: int = 100
    dropout_rate: float = 0.2
    # pooling grid of the permutation head; regional (not global) pooling keeps
    # the spatial arrangement information the jigsaw task is about
    head_pool: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.in_channels < 1:
            raise ValueError(f"in_channels must be >= 1, got {self.in_channels}")
        if self.base_width < 4:
            raise ValueError(f"base_width must be >= 4, got {self.base_width}")
        if self.depth < 2:
            raise ValueError(f"depth must be >= 2, got {self.depth}")
        if self.k_classes < 2:
            raise ValueError(f"k_classes must be >= 2, got {self.k_classes}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.head_pool < 1:
            raise ValueError(f"head_pool must be >= 1, got {self.head_pool}")


def _norm(channels: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(4, channels), channels)


class _DoubleConv(nn.Sequential):
    def __init__(self, c_in: int, c_out: int):
        super().__init__(
            nn.Conv2d(c_in, c_out, 3, padding=1),
            _norm(c_out),
            nn.ReLU(inplace=True),
            nn.Conv2d(c_out, c_out, 3, padding=1),
            _norm(c_out),
            nn.ReLU(inplace=True),
        )


class _Encoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        widths = [cfg.base_width * 2**i for i in range(cfg.depth)]
        c_in = cfg.in_channels
        self.blocks = nn.ModuleList()
        for w in widths:
            self.blocks.append(_DoubleConv(c_in, w))
            c_in = w
        self.bottleneck = _DoubleConv(widths[-1], 2 * widths[-1])
        self.out_channels = 2 * widths[-1]

    def forward(self, x, dropout):
        skips = []
        h = x
        for block in self.blocks:
            h = block(h)
            skips.append(h)
            h = F.max_pool2d(h, 2)
            h = dropout(h)
        return self.bottleneck(h), skips


class _Decoder(nn.Module):
    def __init__(self, cfg: NetworkConfig):
        super().__init__()
        widths = [cfg.base_width * 2**i for i in range(cfg.depth)]
        self.ups = nn.ModuleList()
        self.blocks = nn.ModuleList()
        c = 2 * widths[-1]
        for w in reversed(widths):
            self.ups.append(nn.ConvTranspose2d(c, w, 2, stride=2))
            self.blocks.append(_DoubleConv(2 * w, w))
            c = w
        self.final = nn.Conv2d(widths[0], 1, 1)

    def forward(self, deep, skips, dropout):
        h = deep
        for up, block, skip in zip(self.ups, self.blocks, reversed(skips)):
            h = up(h)
            h = block(torch.cat([h, skip], dim=1))
        return self.final(dropout(h))


class SegNetwork(nn.Module):
    """Encoder-decoder with skip connections plus a permutation-classification head.

    ``stochastic_mode`` turns dropout on for forward passes (used by the
    MC-dropout baseline); everything is deterministic when it is off.
    """

    def __init__(self, config: NetworkConfig):
        super().__init__()
        self.config = config
        self.encoder = _Encoder(config)
        self.decoder = _Decoder(config)
        self.head = nn.Linear(
            self.encoder.out_channels * config.head_pool**2, config.k_classes
        )
        self.stochastic_mode = False
        self.dropout_rate = config.dropout_rate
        self._stoch_gen = torch.Generator()
        self._stoch_gen.manual_seed(config.seed)

    def seed_stochastic(self, seed: int) -> None:
        self._stoch_gen.manual_seed(seed)

    def _dropout(self, x):
        if not self.stochastic_mode or self.dropout_rate <= 0:
            return x
        keep = 1.0 - self.dropout_rate
        mask = (torch.rand(x.shape, generator=self._stoch_gen) < keep).to(x.dtype)
        return x * mask * (1.0 / keep)

    def _check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected (B, {self.config.in_channels}, H, W) input, got {tuple(x.shape)}"
            )
        stride = 2**self.config.depth
        if x.shape[2] % stride or x.shape[3] % stride:
            raise ValueError(
                f"spatial dims {tuple(x.shape[2:])} must be divisible by 2**depth = {stride}"
            )

    def segment(self, x: torch.Tensor) -> torch.Tensor:
        """Per-pixel foreground probability, shape (B, 1, H, W), strictly inside (0, 1)."""
        self._check_input(x)
        deep, skips = self.encoder(x, self._dropout)
        logits = self.decoder(deep, skips, self._dropout)
        eps = 1e-7 if logits.dtype == torch.float32 else 1e-15
        return torch.sigmoid(logits).clamp(eps, 1.0 - eps)

    def permutation_logits(self, x: torch.Tensor) -> torch.Tensor:
        """K-way logits from regionally averaged deepest encoder features."""
        self._check_input(x)
        deep, _ = self.encoder(x, self._dropout)
        pooled = F.adaptive_avg_pool2d(deep, self.config.head_pool)
        return self.head(pooled.flatten(1))

    def parameter_groups(self) -> dict[str, list[nn.Parameter]]:
        return {
            "encoder": list(self.encoder.parameters()),
            "decoder": list(self.decoder.parameters()),
            "head": list(self.head.parameters()),
        }

    def clone(self) -> "SegNetwork":
        other = build_network(self.config)
        other.to(next(self.parameters()).dtype)
        other.load_state_dict(self.state_dict())
        other.stochastic_mode = self.stochastic_mode
        other.dropout_rate = self.dropout_rate
        return other


def build_network(cfg: NetworkConfig) -> SegNetwork:
    """Construct a network with seed-determined initialization."""
    with torch.random.fork_rng():
        torch.manual_seed(cfg.seed)
        return SegNetwork(cfg)


def images_to_batch(images, dtype=torch.float32) -> torch.Tensor:
    """Stack (H, W, C) or (H, W) numpy images into a (B, C, H, W) tensor."""
    arrs = []
    for img in images:
        a = np.asarray(img)
        if a.ndim == 2:
            a = a[:, :, None]
        arrs.append(np.moveaxis(a, 2, 0))
    return torch.as_tensor(np.stack(arrs)).to(dtype)


def parameter_bytes(params) -> bytes:
    """Concatenated little-endian bytes of the given parameters (for freeze checks)."""
    return b"".join(p.detach().cpu().numpy().tobytes() for p in params)


def save_checkpoint(net: SegNetwork, path: str | Path, *, train_seed: int | None = None) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "network": asdict(net.config),
        "train_seed": train_seed,
        "state_dict": net.state_dict(),
    }
    torch.save(payload, path)


def load_checkpoint(path: str | Path) -> tuple[SegNetwork, dict]:
    payload = torch.load(path, map_location="cpu")
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {payload.get('version')}")
    net = build_network(NetworkConfig(**payload["network"]))
    dtype = next(iter(payload["state_dict"].values())).dtype
    net.to(dtype)
    net.load_state_dict(payload["state_dict"])
    return net, payload
