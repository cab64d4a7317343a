"""Grayscale image core: representation, differentiation, interpolation,
pyramids, and synthetic photometric perturbations.

Intensities are dimensionless scalars with a nominal [0, 1] range that is
deliberately not enforced, so that brightness perturbations stay exact.
All field types are immutable after construction and safe to share across
concurrent readers.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParamError

# Floor for the gradient-regularization constant; keeps constant images
# (zero gradient everywhere) from dividing by zero.
EPSILON_MIN = 1e-8


def _as_readonly(arr: np.ndarray) -> np.ndarray:
    out = np.ascontiguousarray(arr, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class GrayImage:
    """Row-major scalar intensity raster.

    ``data`` has shape (height, width). Values must be finite; they may
    leave [0, 1] (perturbed images are not clamped).
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise DimensionError(f"image data must be 2-D and non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ParamError("image contains non-finite values")
        object.__setattr__(self, "data", _as_readonly(arr))

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


class GradientOperator(enum.Enum):
    SCHARR = "scharr"
    CENTRAL = "central"


@dataclass(frozen=True)
class GradientField:
    """Per-pixel intensity derivatives (intensity per pixel) and their norm."""

    gx: np.ndarray
    gy: np.ndarray
    norm: np.ndarray
    operator: GradientOperator

    def __post_init__(self):
        for name in ("gx", "gy", "norm"):
            object.__setattr__(self, name, _as_readonly(getattr(self, name)))
        if not (self.gx.shape == self.gy.shape == self.norm.shape):
            raise DimensionError("gradient component shapes differ")


@dataclass(frozen=True)
class RegularizedGradientField:
    """Gradient divided by sqrt(norm^2 + epsilon).

    ``epsilon`` is the mean squared gradient norm of the source image
    (floored at EPSILON_MIN), so the field is invariant under affine
    brightness changes a*I + b with a > 0 and ``rnorm`` stays below 1.
    """

    base: GradientField
    epsilon: float
    rgx: np.ndarray
    rgy: np.ndarray
    rnorm: np.ndarray

    def __post_init__(self):
        for name in ("rgx", "rgy", "rnorm"):
            object.__setattr__(self, name, _as_readonly(getattr(self, name)))


@dataclass(frozen=True)
class IntensityHessian:
    """Per-pixel second derivatives; ixy is shared between both off-diagonals."""

    ixx: np.ndarray
    ixy: np.ndarray
    iyy: np.ndarray

    def __post_init__(self):
        for name in ("ixx", "ixy", "iyy"):
            object.__setattr__(self, name, _as_readonly(getattr(self, name)))


@dataclass(frozen=True)
class PerturbationSpec:
    """Synthetic exposure/vignette/noise perturbation parameters.

    The vignette attenuation is 1 at the image center and falls off
    quadratically with radius, saturating at distance ``vignette_radius``
    times the half-diagonal.
    """

    exposure_gain: float = 1.0
    exposure_offset: float = 0.0
    vignette_strength: float = 0.0
    vignette_radius: float = 1.0
    noise_sigma: float = 0.0
    rng_seed: int = 0


def _pad1(data: np.ndarray) -> np.ndarray:
    return np.pad(data, 1, mode="edge")


def compute_gradient(img: GrayImage, operator: GradientOperator = GradientOperator.CENTRAL) -> GradientField:
    """Differentiate an image with replicated-edge padding.

    CENTRAL uses (I(x+1) - I(x-1)) / 2 per axis. SCHARR applies the
    separable 3x3 kernel smooth=[3,10,3], diff=[-1,0,1] scaled by 1/32,
    which preserves the slope of linear ramps exactly.
    """
    if img.width < 3 or img.height < 3:
        raise DimensionError(f"gradient needs at least 3x3, got {img.width}x{img.height}")
    p = _pad1(img.data)
    h, w = img.shape
    c = lambda dy, dx: p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    if operator is GradientOperator.CENTRAL:
        gx = (c(0, 1) - c(0, -1)) / 2.0
        gy = (c(1, 0) - c(-1, 0)) / 2.0
    elif operator is GradientOperator.SCHARR:
        gx = (3.0 * (c(-1, 1) - c(-1, -1)) + 10.0 * (c(0, 1) - c(0, -1)) + 3.0 * (c(1, 1) - c(1, -1))) / 32.0
        gy = (3.0 * (c(1, -1) - c(-1, -1)) + 10.0 * (c(1, 0) - c(-1, 0)) + 3.0 * (c(1, 1) - c(-1, 1))) / 32.0
    else:
        raise ParamError(f"unknown gradient operator: {operator!r}")
    norm = np.hypot(gx, gy)
    return GradientField(gx=gx, gy=gy, norm=norm, operator=operator)


def regularize_gradient(g: GradientField) -> RegularizedGradientField:
    """Scale a gradient field by 1/sqrt(norm^2 + epsilon).

    epsilon is estimated from the field itself as the mean squared norm,
    floored at EPSILON_MIN for degenerate (constant) images.
    """
    epsilon = max(float(np.mean(g.norm**2)), EPSILON_MIN)
    scale = 1.0 / np.sqrt(g.norm**2 + epsilon)
    return RegularizedGradientField(
        base=g, epsilon=epsilon, rgx=g.gx * scale, rgy=g.gy * scale, rnorm=g.norm * scale
    )


def compute_hessian(img: GrayImage) -> IntensityHessian:
    """Second derivatives: 3-point second differences on the diagonal,
    successive central first differences for the mixed term. Replicated
    edges; exact for quadratic intensity surfaces at interior pixels.
    """
    if img.width < 5 or img.height < 5:
        raise DimensionError(f"hessian needs at least 5x5, got {img.width}x{img.height}")
    p = _pad1(img.data)
    h, w = img.shape
    c = lambda dy, dx: p[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
    ixx = c(0, 1) - 2.0 * img.data + c(0, -1)
    iyy = c(1, 0) - 2.0 * img.data + c(-1, 0)
    dx = (c(0, 1) - c(0, -1)) / 2.0
    pdx = _pad1(dx)
    ixy = (pdx[2 : 2 + h, 1 : 1 + w] - pdx[0:h, 1 : 1 + w]) / 2.0
    return IntensityHessian(ixx=ixx, ixy=ixy, iyy=iyy)


def sample_bilinear(img: GrayImage, u: tuple[float, float]) -> float | None:
    """Bilinear intensity at a continuous coordinate (x, y).

    Returns None for coordinates outside [0, w-1] x [0, h-1] so that
    optimization loops can drop the sample instead of catching exceptions.
    Exact at integer coordinates.
    """
    x, y = float(u[0]), float(u[1])
    h, w = img.shape
    if not (0.0 <= x <= w - 1 and 0.0 <= y <= h - 1):
        return None
    x0 = min(int(math.floor(x)), w - 2) if w > 1 else 0
    y0 = min(int(math.floor(y)), h - 2) if h > 1 else 0
    tx, ty = x - x0, y - y0
    d = img.data
    if w == 1 and h == 1:
        return float(d[0, 0])
    x1 = min(x0 + 1, w - 1)
    y1 = min(y0 + 1, h - 1)
    top = (1 - tx) * d[y0, x0] + tx * d[y0, x1]
    bot = (1 - tx) * d[y1, x0] + tx * d[y1, x1]
    return float((1 - ty) * top + ty * bot)


def bilinear_many(data: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Vectorized bilinear sampling of a 2-D array at in-domain coordinates.

    Callers are responsible for bounds; coordinates are clamped to the
    valid cell range so exact border coordinates are handled.
    """
    h, w = data.shape
    x0 = np.clip(np.floor(xs).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(ys).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    tx = xs - x0
    ty = ys - y0
    top = (1 - tx) * data[y0, x0] + tx * data[y0, x1]
    bot = (1 - tx) * data[y1, x0] + tx * data[y1, x1]
    return (1 - ty) * top + ty * bot


def pyramid_shapes(width: int, height: int, levels: int) -> list[tuple[int, int]]:
    shapes = [(width, height)]
    for _ in range(1, levels):
        w, h = shapes[-1]
        shapes.append((w // 2, h // 2))
    return shapes


def build_pyramid(img: GrayImage, levels: int) -> list[GrayImage]:
    """Coarse-to-fine pyramid: level 0 is the input, each next level is a
    2x2 box filter followed by floor-halving. The coarsest level must be
    at least 8x8.
    """
    if levels < 1:
        raise ParamError("levels must be >= 1")
    shapes = pyramid_shapes(img.width, img.height, levels)
    cw, ch = shapes[-1]
    if cw < 8 or ch < 8:
        raise DimensionError(
            f"pyramid with {levels} levels bottoms out at {cw}x{ch}; coarsest level must be >= 8x8"
        )
    out = [img]
    for _ in range(1, levels):
        d = out[-1].data
        h2, w2 = d.shape[0] // 2, d.shape[1] // 2
        blocks = d[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2)
        out.append(GrayImage(blocks.mean(axis=(1, 3))))
    return out


def vignette_map(width: int, height: int, strength: float, radius: float) -> np.ndarray:
    """Radial attenuation map: 1 at center, 1 - strength at and beyond the
    saturation radius (``radius`` is a fraction of the half-diagonal)."""
    cx, cy = (width - 1) / 2.0, (height - 1) / 2.0
    ys, xs = np.mgrid[0:height, 0:width]
    r = np.hypot(xs - cx, ys - cy)
    half_diag = math.hypot(cx, cy)
    if half_diag == 0.0 or radius <= 0.0:
        frac = np.zeros_like(r)
    else:
        frac = np.minimum(1.0, r / (radius * half_diag))
    return 1.0 - strength * frac**2


def apply_perturbation(img: GrayImage, spec: PerturbationSpec) -> GrayImage:
    """I'(u) = V(u) * (gain * I(u) + offset) + n(u).

    V is the vignette map and n is iid Gaussian noise seeded by
    spec.rng_seed. The output is not clamped; an identity spec returns the
    input values bit for bit.
    """
    if not (0.0 <= spec.vignette_strength <= 1.0):
        raise ParamError(f"vignette_strength must be in [0,1], got {spec.vignette_strength}")
    if spec.noise_sigma < 0.0:
        raise ParamError("noise_sigma must be >= 0")
    out = img.data
    if spec.exposure_gain != 1.0 or spec.exposure_offset != 0.0:
        out = spec.exposure_gain * out + spec.exposure_offset
    if spec.vignette_strength != 0.0:
        out = vignette_map(img.width, img.height, spec.vignette_strength, spec.vignette_radius) * out
    if spec.noise_sigma > 0.0:
        rng = np.random.default_rng(spec.rng_seed)
        out = out + rng.normal(0.0, spec.noise_sigma, size=img.shape)
    return GrayImage(out)
