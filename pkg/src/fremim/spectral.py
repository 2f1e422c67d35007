"""Exact 2D Fourier analysis of multi-channel images.

The forward transform is unnormalized and the inverse carries the ``1/(HW)``
factor. Every transform acts on the last two axes, so a ``C x H x W`` image is
handled one channel at a time.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import FlagMismatch, InvalidPassband, NonFiniteInput, NonRealResult

FILTER_KINDS = ("low_pass", "high_pass", "all_pass")

# imaginary residue allowed (relative to the spectrum's peak) when a real image is requested
REAL_TOLERANCE = 1e-4


@dataclass(frozen=True)
class Spectrum:
    """Complex DFT coefficients indexed ``(..., u, v)``."""

    data: np.ndarray
    centered: bool = False

    @property
    def height(self) -> int:
        return self.data.shape[-2]

    @property
    def width(self) -> int:
        return self.data.shape[-1]

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __add__(self, other: "Spectrum") -> "Spectrum":
        if self.centered != other.centered:
            raise FlagMismatch("cannot add centered and uncentered spectra")
        return Spectrum(self.data + other.data, self.centered)


@dataclass(frozen=True)
class FilterSpec:
    passband: float
    kind: str = "low_pass"

    def __post_init__(self):
        if self.kind not in FILTER_KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not self.passband >= 0:
            raise InvalidPassband(f"passband must be >= 0, got {self.passband}")


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image)
    if image.ndim < 2 or image.shape[-1] < 1 or image.shape[-2] < 1:
        raise ValueError(f"expected (..., H, W) with H, W >= 1, got shape {image.shape}")
    if not np.all(np.isfinite(image)):
        raise NonFiniteInput("image contains NaN or infinite values")
    return image


def dft2(image) -> Spectrum:
    """Unnormalized forward 2D DFT over the last two axes."""
    image = _check_image(image)
    return Spectrum(np.fft.fft2(image, axes=(-2, -1)), centered=False)


def idft2(spectrum: Spectrum, real: bool = True) -> np.ndarray:
    """Normalized inverse 2D DFT.

    With ``real=True`` the imaginary residue is dropped if it is negligible and
    :class:`NonRealResult` is raised otherwise.
    """
    if spectrum.centered:
        raise FlagMismatch("idft2 needs an uncentered spectrum; call uncenter() first")
    out = np.fft.ifft2(spectrum.data, axes=(-2, -1))
    if not real:
        return out
    peak = np.max(np.abs(spectrum.data), initial=0.0)
    residue = np.max(np.abs(out.imag), initial=0.0)
    if residue > REAL_TOLERANCE * peak:
        raise NonRealResult(
            f"imaginary residue {residue:.3g} exceeds {REAL_TOLERANCE:g} x peak {peak:.3g}"
        )
    return out.real


def center(spectrum: Spectrum) -> Spectrum:
    """Move the DC bin to ``(H // 2, W // 2)``."""
    if spectrum.centered:
        raise FlagMismatch("spectrum is already centered")
    return Spectrum(np.fft.fftshift(spectrum.data, axes=(-2, -1)), centered=True)


def uncenter(spectrum: Spectrum) -> Spectrum:
    if not spectrum.centered:
        raise FlagMismatch("spectrum is not centered")
    return Spectrum(np.fft.ifftshift(spectrum.data, axes=(-2, -1)), centered=False)


def radial_distance(height: int, width: int) -> np.ndarray:
    """Euclidean distance of every bin from the centered DC bin."""
    du = np.arange(height) - height // 2
    dv = np.arange(width) - width // 2
    return np.sqrt(du[:, None] ** 2 + dv[None, :] ** 2)


def max_radius(height: int, width: int) -> float:
    return float(radial_distance(height, width).max())


def band_mask(height: int, width: int, passband: float, kind: str) -> np.ndarray:
    """Boolean keep-mask over a centered ``height x width`` spectrum."""
    if not passband >= 0:
        raise InvalidPassband(f"passband must be >= 0, got {passband}")
    if kind == "all_pass":
        return np.ones((height, width), dtype=bool)
    dist = radial_distance(height, width)
    if kind == "low_pass":
        return dist <= passband
    if kind == "high_pass":
        return dist > passband
    raise ValueError(f"unknown filter kind {kind!r}")


def band_filter(spectrum: Spectrum, spec: FilterSpec) -> Spectrum:
    """Ideal circular filter on a centered spectrum."""
    if not spectrum.centered:
        raise FlagMismatch("band_filter needs a centered spectrum")
    if spec.kind == "all_pass":
        return spectrum
    keep = band_mask(spectrum.height, spectrum.width, spec.passband, spec.kind)
    return replace(spectrum, data=np.where(keep, spectrum.data, 0))


def low_pass(spectrum: Spectrum, passband: float) -> Spectrum:
    return band_filter(spectrum, FilterSpec(passband, "low_pass"))


def high_pass(spectrum: Spectrum, passband: float) -> Spectrum:
    return band_filter(spectrum, FilterSpec(passband, "high_pass"))


def log_magnitude(spectrum: Spectrum) -> np.ndarray:
    return np.log1p(np.abs(spectrum.data))


def infinite_passband(height: int, width: int) -> float:
    """Smallest integer passband that keeps every bin of an ``height x width`` spectrum."""
    return float(math.ceil(max_radius(height, width)))
