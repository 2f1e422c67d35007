"""Hierarchical CNN encoder and the segmentation network used for fine-tuning."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
from torch import nn

from .errors import CheckpointError, ConfigError, ShapeMismatch


@dataclass
class EncoderSpec:
    n_stages: int = 4
    base_channels: int = 16
    input_channels: int = 4
    variant: str = "cnn"

    def __post_init__(self):
        if self.n_stages < 2:
            raise ConfigError("encoder needs at least 2 stages")
        if self.base_channels < 1 or self.input_channels < 1:
            raise ConfigError("channel counts must be positive")
        if self.variant != "cnn":
            raise ConfigError(f"unsupported encoder variant {self.variant!r}")

    @property
    def channels(self) -> list[int]:
        return [self.base_channels * 2 ** i for i in range(self.n_stages)]

    def to_dict(self) -> dict:
        return asdict(self)


class StageFeatures(list):
    """Per-stage feature maps ``[S_1, ..., S_n]``, each ``N x C_i x H_i x W_i``."""

    @property
    def channels(self) -> list[int]:
        return [s.shape[1] for s in self]

    @property
    def resolutions(self) -> list[tuple[int, int]]:
        return [tuple(s.shape[-2:]) for s in self]

    def validate(self) -> "StageFeatures":
        if len(self) < 2:
            raise ShapeMismatch("need at least two stages")
        for (h0, w0), (h1, w1) in zip(self.resolutions, self.resolutions[1:]):
            if h0 != 2 * h1 or w0 != 2 * w1:
                raise ShapeMismatch(f"stage resolutions must halve: {self.resolutions}")
        for c0, c1 in zip(self.channels, self.channels[1:]):
            if c1 < c0:
                raise ShapeMismatch(f"stage channels must not decrease: {self.channels}")
        return self


def conv_block(cin: int, cout: int, kernel: int = 3) -> nn.Sequential:
    """Conv, per-sample per-channel affine normalization, GELU."""
    return nn.Sequential(
        nn.Conv2d(cin, cout, kernel, padding=kernel // 2),
        nn.GroupNorm(cout, cout),
        nn.GELU(),
    )


class EncoderStage(nn.Module):
    def __init__(self, cin: int, cout: int):
        super().__init__()
        self.down = nn.Conv2d(cin, cout, 3, stride=2, padding=1)
        self.body = nn.Sequential(conv_block(cout, cout), conv_block(cout, cout))

    def forward(self, x):
        return self.body(self.down(x))


class Encoder(nn.Module):
    """Stage ``i`` halves the resolution ``i`` times and has ``base * 2**(i-1)`` channels."""

    def __init__(self, spec: EncoderSpec):
        super().__init__()
        self.spec = spec
        self.stem = conv_block(spec.input_channels, spec.base_channels)
        chans = [spec.base_channels] + spec.channels
        self.stages = nn.ModuleList(EncoderStage(a, b) for a, b in zip(chans, chans[1:]))

    def check_input(self, x: torch.Tensor) -> None:
        factor = 2 ** self.spec.n_stages
        if x.ndim != 4 or x.shape[1] != self.spec.input_channels:
            raise ShapeMismatch(
                f"expected N x {self.spec.input_channels} x H x W input, got {tuple(x.shape)}")
        if x.shape[-1] % factor or x.shape[-2] % factor:
            raise ShapeMismatch(f"input size {tuple(x.shape[-2:])} not divisible by {factor}")

    def forward(self, x: torch.Tensor) -> StageFeatures:
        self.check_input(x)
        feats = StageFeatures()
        x = self.stem(x)
        for stage in self.stages:
            x = stage(x)
            feats.append(x)
        return feats


def encode(image: torch.Tensor, encoder: Encoder) -> StageFeatures:
    """Encode a single ``C x H x W`` image or an ``N x C x H x W`` batch."""
    if image.ndim == 3:
        return StageFeatures(s[0] for s in encoder(image[None]))
    return encoder(image)


class SegmentationHead(nn.Module):
    """Top-down decoder with skip connections from every stage back to full resolution."""

    def __init__(self, channels: list[int], n_classes: int):
        super().__init__()
        if n_classes < 2:
            raise ConfigError("segmentation needs at least 2 classes")
        self.ups = nn.ModuleList()
        self.fuse = nn.ModuleList()
        for hi, lo in zip(reversed(channels[1:]), reversed(channels[:-1])):
            self.ups.append(nn.ConvTranspose2d(hi, lo, 2, stride=2))
            self.fuse.append(conv_block(2 * lo, lo))
        c1 = channels[0]
        self.final_up = nn.ConvTranspose2d(c1, c1, 2, stride=2)
        self.final = nn.Sequential(conv_block(c1, c1), nn.Conv2d(c1, n_classes, 1))

    def forward(self, feats: StageFeatures) -> torch.Tensor:
        x = feats[-1]
        for up, fuse, skip in zip(self.ups, self.fuse, reversed(feats[:-1])):
            x = fuse(torch.cat([up(x), skip], dim=1))
        return self.final(self.final_up(x))


class SegmentationNet(nn.Module):
    def __init__(self, spec: EncoderSpec, n_classes: int = 4):
        super().__init__()
        self.encoder = Encoder(spec)
        self.head = SegmentationHead(spec.channels, n_classes)
        self.n_classes = n_classes

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.head(self.encoder(x))


def segment(image: torch.Tensor, model: SegmentationNet) -> torch.Tensor:
    """Class scores ``K x H x W`` for one image (or ``N x K x H x W`` for a batch)."""
    if image.ndim == 3:
        return model(image[None])[0]
    return model(image)


def encoder_state(module: nn.Module, prefix: str = "encoder.") -> dict[str, torch.Tensor]:
    return {k[len(prefix):]: v for k, v in module.state_dict().items() if k.startswith(prefix)}


def load_encoder_weights(encoder: Encoder, tensors: dict) -> None:
    """Copy encoder tensors into ``encoder`` bit for bit, or raise CheckpointError."""
    own = encoder.state_dict()
    missing = sorted(set(own) - set(tensors))
    if missing:
        raise CheckpointError(f"checkpoint lacks encoder tensors: {missing[:3]}...")
    loaded = {}
    for name, ref in own.items():
        t = torch.as_tensor(tensors[name])
        if tuple(t.shape) != tuple(ref.shape):
            raise CheckpointError(
                f"shape mismatch for {name}: checkpoint {tuple(t.shape)} vs model {tuple(ref.shape)}")
        loaded[name] = t.to(ref.dtype)
    encoder.load_state_dict(loaded)
