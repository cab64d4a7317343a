"""Seeded synthetic images for experiments and verification.

These generators keep the whole test and experiment surface runnable
offline: a very smooth band-limited field for derivative checks, a
high-frequency texture for stereo, and the two-box edge scene for the
cost-curve study.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ParamError
from .image import GrayImage, bilinear_many


def smooth_random_image(
    width: int = 128,
    height: int = 128,
    seed: int = 0,
    components: int = 4,
    min_wavelength: float = 280.0,
    max_wavelength: float = 450.0,
    amplitude: float = 2.4,
) -> GrayImage:
    """Sum of a few random low-frequency sinusoids around a 0.5 offset.

    Wavelengths are long relative to the pixel grid so that discrete
    derivative stencils track the analytic derivatives closely; used by
    the Jacobian verification suite.
    """
    rng = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    data = np.full((height, width), 0.5)
    for _ in range(components):
        wavelength = rng.uniform(min_wavelength, max_wavelength)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        k = 2.0 * np.pi / wavelength
        data = data + (amplitude / components) * np.sin(
            k * (np.cos(theta) * xs + np.sin(theta) * ys) + phase
        )
    return GrayImage(data)


def textured_image(
    width: int = 128,
    height: int = 128,
    seed: int = 0,
    blur_sigma: float = 1.2,
    ramp: float = 0.0,
    low: float = 0.08,
    high: float = 0.92,
) -> GrayImage:
    """Dense random texture: blurred uniform noise rescaled to [low, high],
    plus an optional horizontal intensity ramp of total height ``ramp``."""
    rng = np.random.default_rng(seed)
    noise = gaussian_filter(rng.random((height, width)), blur_sigma)
    lo, hi = float(noise.min()), float(noise.max())
    data = low + (high - low) * (noise - lo) / (hi - lo)
    if ramp != 0.0:
        xs = np.linspace(0.0, 1.0, width)[None, :]
        data = data + ramp * (xs - 0.5)
    return GrayImage(data)


def two_box_scene(
    strong_amplitude: float,
    weak_amplitude: float,
    noise_sigma: float = 0.0,
    width: int = 220,
    height: int = 64,
    box_width: int = 30,
    strong_left: int = 40,
    weak_left: int = 120,
    background: float = 0.1,
    seed: int = 0,
) -> tuple[GrayImage, int, int]:
    """Two vertical-edged boxes on a flat background.

    Both boxes share edge orientation and width; they differ only in
    amplitude (strong > weak > 0). Returns (image, weak_center_x,
    strong_center_x). A positive noise_sigma adds seeded Gaussian noise.
    """
    if strong_amplitude <= weak_amplitude or weak_amplitude <= 0.0:
        raise ParamError("amplitudes must satisfy strong > weak > 0")
    data = np.full((height, width), background)
    data[:, strong_left : strong_left + box_width] += strong_amplitude
    data[:, weak_left : weak_left + box_width] += weak_amplitude
    if noise_sigma > 0.0:
        rng = np.random.default_rng(seed)
        data = data + rng.normal(0.0, noise_sigma, size=data.shape)
    weak_center = weak_left + box_width // 2
    strong_center = strong_left + box_width // 2
    return GrayImage(data), weak_center, strong_center


def shift_image(img: GrayImage, tx: float, ty: float) -> GrayImage:
    """Resample so that out(u) = in(u - t), with edge-clamped bilinear
    sampling; the synthesis ground truth for alignment tests."""
    ys, xs = np.mgrid[0 : img.height, 0 : img.width].astype(np.float64)
    return GrayImage(bilinear_many(img.data, xs - tx, ys - ty))


def roll_columns(img: GrayImage, shift: int) -> GrayImage:
    """Circularly shift columns; roll_columns(img, s)(x) = img(x + s)."""
    return GrayImage(np.roll(img.data, -shift, axis=1))
