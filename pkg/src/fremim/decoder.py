"""Bilateral aggregation decoder and frequency mapping blocks.

The low path walks from the deepest stage back up to stage 1 and yields
``A_low``; the high path walks from stage 1 down to stage n and yields
``A_high``. Each aggregate goes through a frequency mapping block (DFT,
elementwise complex affine map, inverse DFT) and is then projected to the
input image's shape.
"""
from __future__ import annotations

import math

import torch
from torch import nn

from .errors import ConfigError, ShapeMismatch
from .model import Encoder, EncoderSpec, StageFeatures, conv_block

DECODER_KINDS = ("bad", "single")


class BilateralAggregationDecoder(nn.Module):
    def __init__(self, channels: list[int]):
        super().__init__()
        if len(channels) < 2:
            raise ShapeMismatch("bilateral aggregation needs at least two stages")
        self.channels = list(channels)
        n = len(channels)
        # low path: stage i+1 -> stage i, for i = n-1 .. 1
        self.low_up = nn.ModuleList()
        self.low_skip = nn.ModuleList()
        self.low_fuse = nn.ModuleList()
        for i in reversed(range(n - 1)):
            c_deep, c = channels[i + 1], channels[i]
            self.low_up.append(nn.ConvTranspose2d(c_deep, c, 2, stride=2))
            self.low_skip.append(conv_block(c, c, kernel=1))
            self.low_fuse.append(conv_block(2 * c, c))
        # high path: stage i-1 -> stage i, for i = 2 .. n
        self.high_down = nn.ModuleList()
        self.high_skip = nn.ModuleList()
        self.high_fuse = nn.ModuleList()
        for i in range(1, n):
            c_shallow, c = channels[i - 1], channels[i]
            self.high_down.append(nn.Conv2d(c_shallow, c, 3, stride=2, padding=1))
            self.high_skip.append(conv_block(c, c, kernel=1))
            self.high_fuse.append(conv_block(2 * c, c))

    def _check(self, feats) -> StageFeatures:
        feats = StageFeatures(feats).validate()
        if feats.channels != self.channels:
            raise ShapeMismatch(f"decoder built for channels {self.channels}, got {feats.channels}")
        return feats

    def forward(self, feats) -> tuple[torch.Tensor, torch.Tensor]:
        feats = self._check(feats)
        x = feats[-1]
        for up, skip, fuse, s in zip(self.low_up, self.low_skip, self.low_fuse,
                                     reversed(feats[:-1])):
            x = fuse(torch.cat([skip(s), up(x)], dim=1))
        a_low = x
        x = feats[0]
        for down, skip, fuse, s in zip(self.high_down, self.high_skip, self.high_fuse, feats[1:]):
            x = fuse(torch.cat([skip(s), down(x)], dim=1))
        return a_low, x


def bad_forward(features, decoder: BilateralAggregationDecoder):
    """Return ``(A_low, A_high)`` for a list of stage features."""
    return decoder(features)


def fmb_forward(a: torch.Tensor, weight: torch.Tensor, bias: torch.Tensor) -> torch.Tensor:
    """``Re(IDFT(weight * DFT(a) + bias))`` over the last two axes."""
    if weight.shape != a.shape[-3:] or bias.shape != a.shape[-3:]:
        raise ShapeMismatch(
            f"FMB parameters {tuple(weight.shape)} / {tuple(bias.shape)} "
            f"do not match feature map {tuple(a.shape[-3:])}")
    spec = torch.fft.fft2(a)
    return torch.fft.ifft2(weight * spec + bias).real


class FrequencyMappingBlock(nn.Module):
    """Learnable per-channel, per-bin complex affine map in the Fourier domain.

    Starts at the identity (weight 1, bias 0).
    """

    def __init__(self, channels: int, height: int, width: int):
        super().__init__()
        shape = (channels, height, width)
        self.weight_real = nn.Parameter(torch.ones(shape))
        self.weight_imag = nn.Parameter(torch.zeros(shape))
        self.bias_real = nn.Parameter(torch.zeros(shape))
        self.bias_imag = nn.Parameter(torch.zeros(shape))

    @property
    def weight(self) -> torch.Tensor:
        return torch.complex(self.weight_real, self.weight_imag)

    @property
    def bias(self) -> torch.Tensor:
        return torch.complex(self.bias_real, self.bias_imag)

    def forward(self, a: torch.Tensor) -> torch.Tensor:
        return fmb_forward(a, self.weight, self.bias)


class ImageProjection(nn.Module):
    """1x1 conv to the image channel count, then x2 transposed-conv steps up to image size."""

    def __init__(self, in_channels: int, out_channels: int, scale: int):
        super().__init__()
        steps = math.log2(scale) if scale >= 1 else -1
        if steps < 0 or steps != int(steps):
            raise ShapeMismatch(f"scale factor {scale} is not a power of two")
        self.scale = scale
        self.proj = nn.Conv2d(in_channels, out_channels, 1)
        self.ups = nn.ModuleList(
            nn.ConvTranspose2d(out_channels, out_channels, 2, stride=2) for _ in range(int(steps)))

    def forward(self, a: torch.Tensor) -> torch.Tensor:
        x = self.proj(a)
        for up in self.ups:
            x = up(x)
        return x


def upsampling_steps(src: tuple[int, int], dst: tuple[int, int]) -> int:
    """Number of x2 steps from ``src`` to ``dst`` resolution; ShapeMismatch if not a power of two."""
    if dst[0] % src[0] or dst[1] % src[1] or dst[0] // src[0] != dst[1] // src[1]:
        raise ShapeMismatch(f"cannot upsample {src} to {dst} by a uniform integer factor")
    scale = dst[0] // src[0]
    if scale & (scale - 1):
        raise ShapeMismatch(f"scale {scale} from {src} to {dst} is not a power of two")
    return scale.bit_length() - 1


def project_to_image(a: torch.Tensor, target_shape, projection: ImageProjection) -> torch.Tensor:
    c, h, w = target_shape
    upsampling_steps(tuple(a.shape[-2:]), (h, w))
    out = projection(a)
    if tuple(out.shape[-3:]) != (c, h, w):
        raise ShapeMismatch(f"projection produced {tuple(out.shape[-3:])}, wanted {(c, h, w)}")
    return out


class PretrainNet(nn.Module):
    """Encoder plus the reconstruction decoder.

    ``forward`` returns ``(P_low, P_high)`` for ``kind="bad"``; for
    ``kind="single"`` a single FMB on the deepest stage produces one prediction
    returned as ``(None, P)``.
    """

    def __init__(self, spec: EncoderSpec, image_size: int, kind: str = "bad"):
        super().__init__()
        if kind not in DECODER_KINDS:
            raise ConfigError(f"decoder.kind must be one of {DECODER_KINDS}, got {kind!r}")
        self.kind = kind
        self.spec = spec
        self.image_size = image_size
        self.encoder = Encoder(spec)
        chans = spec.channels
        res = [image_size // 2 ** (i + 1) for i in range(spec.n_stages)]
        if res[-1] < 1 or image_size % 2 ** spec.n_stages:
            raise ShapeMismatch(f"image size {image_size} not divisible by 2**{spec.n_stages}")
        c_img = spec.input_channels
        if kind == "bad":
            self.bad = BilateralAggregationDecoder(chans)
            self.fmb_low = FrequencyMappingBlock(chans[0], res[0], res[0])
            self.fmb_high = FrequencyMappingBlock(chans[-1], res[-1], res[-1])
            self.proj_low = ImageProjection(chans[0], c_img, image_size // res[0])
        else:
            self.fmb_high = FrequencyMappingBlock(chans[-1], res[-1], res[-1])
        self.proj_high = ImageProjection(chans[-1], c_img, image_size // res[-1])

    def forward(self, x: torch.Tensor):
        feats = self.encoder(x)
        target = x.shape[-3:]
        if self.kind == "single":
            return None, project_to_image(self.fmb_high(feats[-1]), target, self.proj_high)
        a_low, a_high = self.bad(feats)
        p_low = project_to_image(self.fmb_low(a_low), target, self.proj_low)
        p_high = project_to_image(self.fmb_high(a_high), target, self.proj_high)
        return p_low, p_high
