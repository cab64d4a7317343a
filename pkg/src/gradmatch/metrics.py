"""Dissimilarity metrics between pixels of two grayscale images.

Fourteen metric kinds are supported, built from three field families:
raw intensity, raw gradient, and the regularized gradient (gradient
scaled by 1/sqrt(norm^2 + eps) with a per-image eps). The scaled
gradient-field metrics (sgf, sgf2, sgf3) compare gradient orientation
while penalizing magnitude mismatch, which keeps weak edges from locking
onto stronger ones and makes the costs robust to affine brightness
changes (sgf exactly, sgf2/sgf3 up to a uniform cost scaling).

Analytic Jacobians with respect to the first pixel coordinate are
provided for photo/ugf/sgf/sgf2/sgf3 and are validated against a central
finite-difference oracle over bilinearly resampled fields. At subpixel
coordinates the regularized gradient is derived from the bilinearly
sampled raw gradient using the image's fixed eps, so the analytic chain
rule and the resampled residual describe the same function.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .errors import BorderError, DimensionError, KindError, OutOfBoundsError, ParamError
from .image import (
    GradientField,
    GradientOperator,
    GrayImage,
    IntensityHessian,
    RegularizedGradientField,
    bilinear_many,
    compute_gradient,
    compute_hessian,
    regularize_gradient,
)

# Guard against division by a vanishing raw-gradient norm in Jacobians;
# well below the norms the Jacobian contract samples (> 0.01).
_NORM_FLOOR = 1e-12


class MetricKind(enum.Enum):
    PHOTO = "photo"
    SAD = "sad"
    GM = "gm"
    AGM = "agm"
    GN = "gn"
    PM = "pm"
    NCC = "ncc"
    MAG = "mag"
    GOM = "gom"
    NGF = "ngf"
    UGF = "ugf"
    SGF = "sgf"
    SGF2 = "sgf2"
    SGF3 = "sgf3"


#: Kinds defined only over a window (no per-pixel residual).
WINDOW_ONLY_KINDS = frozenset({MetricKind.NCC, MetricKind.GOM})
#: Kinds with an analytic Jacobian w.r.t. the first pixel coordinate.
JACOBIAN_KINDS = frozenset(
    {MetricKind.PHOTO, MetricKind.UGF, MetricKind.SGF, MetricKind.SGF2, MetricKind.SGF3}
)


@dataclass(frozen=True)
class MetricParams:
    """Shared metric parameters.

    alpha blends photometric against gradient terms in pm; tau guards
    divisions in sgf/ncc/gom; window is the odd side length of the
    aggregation patch.
    """

    alpha: float = 0.9
    tau: float = 1e-6
    window: int = 5

    def __post_init__(self):
        if not (0.0 <= self.alpha <= 1.0):
            raise ParamError(f"alpha must be in [0,1], got {self.alpha}")
        if self.tau <= 0.0:
            raise ParamError(f"tau must be > 0, got {self.tau}")
        if self.window < 1 or self.window % 2 == 0:
            raise ParamError(f"window must be odd and >= 1, got {self.window}")


@dataclass(frozen=True)
class FieldSample:
    """Field values at a set of coordinates (or a whole grid).

    All array members share one shape. ``qden`` is sqrt(gnorm^2 + eps);
    the regularized gradient is (gx, gy) / qden.
    """

    intensity: np.ndarray
    gx: np.ndarray
    gy: np.ndarray
    gnorm: np.ndarray
    qden: np.ndarray
    ax: np.ndarray
    ay: np.ndarray
    anorm: np.ndarray
    eps: float


class ImageFields:
    """Immutable per-image field bundle; the Hessian is built on demand."""

    def __init__(self, image: GrayImage, operator: GradientOperator = GradientOperator.CENTRAL):
        self.image = image
        self.operator = operator
        self.grad: GradientField = compute_gradient(image, operator)
        self.reg: RegularizedGradientField = regularize_gradient(self.grad)
        self._hessian: IntensityHessian | None = None
        self._plane: FieldSample | None = None

    @property
    def epsilon(self) -> float:
        return self.reg.epsilon

    @property
    def hessian(self) -> IntensityHessian:
        if self._hessian is None:
            self._hessian = compute_hessian(self.image)
        return self._hessian

    def plane(self) -> FieldSample:
        """Whole-grid field sample (views, no copies)."""
        if self._plane is None:
            qden = np.sqrt(self.grad.norm**2 + self.epsilon)
            self._plane = FieldSample(
                intensity=self.image.data,
                gx=self.grad.gx,
                gy=self.grad.gy,
                gnorm=self.grad.norm,
                qden=qden,
                ax=self.reg.rgx,
                ay=self.reg.rgy,
                anorm=self.reg.rnorm,
                eps=self.epsilon,
            )
        return self._plane

    def sample(self, xs: np.ndarray, ys: np.ndarray) -> FieldSample:
        """Bilinear field values at continuous coordinates.

        Intensity and raw gradient are interpolated; the regularized
        gradient is recomputed from the interpolated gradient with the
        image's fixed eps (ε is a whole-image constant, not resampled).
        """
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        intensity = bilinear_many(self.image.data, xs, ys)
        gx = bilinear_many(self.grad.gx, xs, ys)
        gy = bilinear_many(self.grad.gy, xs, ys)
        gnorm = np.hypot(gx, gy)
        qden = np.sqrt(gnorm**2 + self.epsilon)
        return FieldSample(
            intensity=intensity,
            gx=gx,
            gy=gy,
            gnorm=gnorm,
            qden=qden,
            ax=gx / qden,
            ay=gy / qden,
            anorm=gnorm / qden,
            eps=self.epsilon,
        )

    def sample_hessian(self, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        h = self.hessian
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        return (
            bilinear_many(h.ixx, xs, ys),
            bilinear_many(h.ixy, xs, ys),
            bilinear_many(h.iyy, xs, ys),
        )

    def in_domain(self, x: float, y: float) -> bool:
        return 0.0 <= x <= self.image.width - 1 and 0.0 <= y <= self.image.height - 1


@dataclass(frozen=True)
class MetricContext:
    """Field bundles for the two images being compared.

    eps is estimated per image, so the regularized gradients of the two
    sides use their own constants.
    """

    i: ImageFields
    j: ImageFields

    @classmethod
    def from_images(
        cls,
        img_i: GrayImage,
        img_j: GrayImage,
        operator: GradientOperator = GradientOperator.CENTRAL,
    ) -> "MetricContext":
        return cls(i=ImageFields(img_i, operator), j=ImageFields(img_j, operator))


def _dot_reg(fi: FieldSample, fj: FieldSample) -> np.ndarray:
    return fi.ax * fj.ax + fi.ay * fj.ay


def _dot_raw(fi: FieldSample, fj: FieldSample) -> np.ndarray:
    return fi.gx * fj.gx + fi.gy * fj.gy


def _sgf2_terms(fi: FieldSample, fj: FieldSample) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Division-free rewrites of the cross norm terms:
    #   nij = (|b|/|a|)*|g_i|^2 = |g_j| * |g_i| * q_i / q_j
    #   nji = (|a|/|b|)*|g_j|^2 = |g_i| * |g_j| * q_j / q_i
    # both well defined at zero gradients since q > 0.
    nij = fj.gnorm * fi.gnorm * fi.qden / fj.qden
    nji = fi.gnorm * fj.gnorm * fj.qden / fi.qden
    return nij, nji, _dot_raw(fi, fj)


def l1_residual_values(
    kind: MetricKind, fi: FieldSample, fj: FieldSample, params: MetricParams
) -> np.ndarray:
    """Nonnegative per-pixel residual used for l1 window aggregation.

    Signed kinds (photo, gm, gn) contribute their absolute value; the
    gradient-field kinds are nonnegative by construction.
    """
    if kind in (MetricKind.PHOTO, MetricKind.SAD):
        return np.abs(fi.intensity - fj.intensity)
    if kind in (MetricKind.GM, MetricKind.AGM, MetricKind.MAG):
        return np.abs(fi.gnorm - fj.gnorm)
    if kind is MetricKind.GN:
        return np.abs(fi.gx - fj.gx) + np.abs(fi.gy - fj.gy)
    if kind is MetricKind.PM:
        photo = np.abs(fi.intensity - fj.intensity)
        gn = np.abs(fi.gx - fj.gx) + np.abs(fi.gy - fj.gy)
        return (1.0 - params.alpha) * photo + params.alpha * gn
    if kind is MetricKind.NGF:
        return 1.0 - _dot_reg(fi, fj) ** 2
    if kind is MetricKind.UGF:
        return 1.0 - _dot_reg(fi, fj)
    if kind is MetricKind.SGF:
        denom = np.maximum(np.maximum(fi.anorm**2, fj.anorm**2), params.tau)
        return 1.0 - _dot_reg(fi, fj) / denom
    if kind is MetricKind.SGF2:
        nij, nji, n = _sgf2_terms(fi, fj)
        return np.maximum(np.maximum(nij, nji) - n, 0.0)
    if kind is MetricKind.SGF3:
        return np.maximum(fi.gnorm * fj.gnorm - _dot_raw(fi, fj), 0.0)
    raise KindError(f"{kind.value} has no per-pixel residual; it is window-only")


def signed_residual_values(
    kind: MetricKind, fi: FieldSample, fj: FieldSample, params: MetricParams
) -> np.ndarray:
    """Signed per-pixel residual for the scalar kinds (photo/gm keep sign)."""
    if kind is MetricKind.PHOTO:
        return fi.intensity - fj.intensity
    if kind is MetricKind.GM:
        return fi.gnorm - fj.gnorm
    return l1_residual_values(kind, fi, fj, params)


def _require_point(fields: ImageFields, u: tuple[float, float], label: str) -> None:
    if not fields.in_domain(float(u[0]), float(u[1])):
        raise OutOfBoundsError(f"{label}={tuple(float(v) for v in u)} outside image domain")


def _sample_point(fields: ImageFields, u: tuple[float, float]) -> FieldSample:
    return fields.sample(np.asarray([float(u[0])]), np.asarray([float(u[1])]))


def residual(
    kind: MetricKind,
    ctx: MetricContext,
    ui: tuple[float, float],
    uj: tuple[float, float],
    params: MetricParams = MetricParams(),
) -> float | np.ndarray:
    """Per-pixel residual between ui in image i and uj in image j.

    gn returns the 2-vector gradient difference; all other kinds return a
    scalar. ncc and gom are window-only and raise KindError here.
    Non-integer coordinates sample the fields bilinearly.
    """
    if kind in WINDOW_ONLY_KINDS:
        raise KindError(f"{kind.value} is defined over a window; use windowed_cost")
    _require_point(ctx.i, ui, "ui")
    _require_point(ctx.j, uj, "uj")
    fi = _sample_point(ctx.i, ui)
    fj = _sample_point(ctx.j, uj)
    if kind is MetricKind.GN:
        return np.asarray([float(fi.gx[0] - fj.gx[0]), float(fi.gy[0] - fj.gy[0])])
    return float(signed_residual_values(kind, fi, fj, params)[0])


def _window_offsets(
    ctx: MetricContext, ui: tuple[float, float], uj: tuple[float, float], window: int
) -> tuple[np.ndarray, np.ndarray]:
    """Integer offsets of a window clipped so the same offsets stay inside
    both image domains."""
    r = window // 2
    xi, yi = float(ui[0]), float(ui[1])
    xj, yj = float(uj[0]), float(uj[1])
    wi, hi = ctx.i.image.width, ctx.i.image.height
    wj, hj = ctx.j.image.width, ctx.j.image.height
    ox_lo = max(-r, -math.floor(min(xi, xj)))
    ox_hi = min(r, math.floor(min(wi - 1 - xi, wj - 1 - xj)))
    oy_lo = max(-r, -math.floor(min(yi, yj)))
    oy_hi = min(r, math.floor(min(hi - 1 - yi, hj - 1 - yj)))
    oxs = np.arange(ox_lo, ox_hi + 1)
    oys = np.arange(oy_lo, oy_hi + 1)
    gx, gy = np.meshgrid(oxs, oys)
    return gx.ravel().astype(np.float64), gy.ravel().astype(np.float64)


def ncc_cost(pi: np.ndarray, pj: np.ndarray, tau: float) -> float:
    """1 - zero-mean normalized cross-correlation of two patches.

    A denominator at or below tau yields the maximal-ambiguity cost 1.
    """
    ci = pi - pi.mean()
    cj = pj - pj.mean()
    denom = math.sqrt(float(np.sum(ci**2)) * float(np.sum(cj**2)))
    if denom <= tau:
        return 1.0
    return 1.0 - float(np.sum(ci * cj)) / denom


def gom_cost(
    gxi: np.ndarray, gyi: np.ndarray, gxj: np.ndarray, gyj: np.ndarray, tau: float
) -> float:
    """Window gradient-orientation cost: 1 - sum|gi.gj| / sum(|gi||gj|).

    Uses raw gradients; the absolute value makes it blind to gradient
    sign. A denominator at or below tau yields cost 1.
    """
    num = float(np.sum(np.abs(gxi * gxj + gyi * gyj)))
    den = float(np.sum(np.hypot(gxi, gyi) * np.hypot(gxj, gyj)))
    if den <= tau:
        return 1.0
    return 1.0 - num / den


def windowed_cost(
    kind: MetricKind,
    ctx: MetricContext,
    ui: tuple[float, float],
    uj: tuple[float, float],
    params: MetricParams = MetricParams(),
) -> float:
    """Window-aggregated cost centered on (ui, uj).

    Pixel-wise kinds sum the absolute residual over the clipped window;
    ncc and gom apply their window-level formulas.
    """
    _require_point(ctx.i, ui, "ui")
    _require_point(ctx.j, uj, "uj")
    ox, oy = _window_offsets(ctx, ui, uj, params.window)
    fi = ctx.i.sample(float(ui[0]) + ox, float(ui[1]) + oy)
    fj = ctx.j.sample(float(uj[0]) + ox, float(uj[1]) + oy)
    if kind is MetricKind.NCC:
        return ncc_cost(fi.intensity, fj.intensity, params.tau)
    if kind is MetricKind.GOM:
        return gom_cost(fi.gx, fi.gy, fj.gx, fj.gy, params.tau)
    return float(np.sum(l1_residual_values(kind, fi, fj, params)))


def jacobian_rows(
    kind: MetricKind,
    fi: FieldSample,
    hess: tuple[np.ndarray, np.ndarray, np.ndarray],
    fj: FieldSample,
    params: MetricParams,
) -> np.ndarray:
    """Analytic d(residual)/d(ui) rows, shape (..., 2).

    The chain rule runs through the 2x2 intensity Hessian of image i:
    the raw gradient moves as H du, the regularized gradient as
    (1/q)(I - a a^T) H du with q = sqrt(|g|^2 + eps). At max() branch
    boundaries the derivative is one-sided; ties resolve to the branch
    whose denominator depends on image i.
    """
    ixx, ixy, iyy = hess
    if kind is MetricKind.PHOTO:
        return np.stack([fi.gx, fi.gy], axis=-1)
    if kind is MetricKind.UGF:
        dot = _dot_reg(fi, fj)
        wx = (fj.ax - dot * fi.ax) / fi.qden
        wy = (fj.ay - dot * fi.ay) / fi.qden
        return np.stack([-(wx * ixx + wy * ixy), -(wx * ixy + wy * iyy)], axis=-1)
    if kind is MetricKind.SGF:
        dot = _dot_reg(fi, fj)
        na2 = fi.anorm**2
        nb2 = fj.anorm**2
        denom = np.maximum(np.maximum(na2, nb2), params.tau)
        own_branch = (na2 >= nb2) & (na2 >= params.tau)
        kappa = np.where(own_branch, 2.0 * dot / np.maximum(na2, params.tau), 0.0)
        coef = dot + kappa * (1.0 - na2)
        scale = denom * fi.qden
        wx = (fj.ax - coef * fi.ax) / scale
        wy = (fj.ay - coef * fi.ay) / scale
        return np.stack([-(wx * ixx + wy * ixy), -(wx * ixy + wy * iyy)], axis=-1)
    if kind is MetricKind.SGF2:
        m = np.maximum(fi.gnorm, _NORM_FLOOR)
        nij, nji, _ = _sgf2_terms(fi, fj)
        s_own = (fj.gnorm / fj.qden) * (2.0 * m**2 + fi.eps) / (m * fi.qden)
        s_other = fj.gnorm * fi.eps * fj.qden / (m * fi.qden**3)
        s = np.where(nij >= nji, s_own, s_other)
        ux = s * fi.gx - fj.gx
        uy = s * fi.gy - fj.gy
        return np.stack([ux * ixx + uy * ixy, ux * ixy + uy * iyy], axis=-1)
    if kind is MetricKind.SGF3:
        s = fj.gnorm / np.maximum(fi.gnorm, _NORM_FLOOR)
        ux = s * fi.gx - fj.gx
        uy = s * fi.gy - fj.gy
        return np.stack([ux * ixx + uy * ixy, ux * ixy + uy * iyy], axis=-1)
    raise KindError(f"no analytic Jacobian for kind {kind.value}")


def _require_border(fields: ImageFields, u: tuple[float, float], margin: float) -> None:
    x, y = float(u[0]), float(u[1])
    if not (
        margin <= x <= fields.image.width - 1 - margin
        and margin <= y <= fields.image.height - 1 - margin
    ):
        raise BorderError(f"coordinate {(x, y)} closer than {margin} px to the border")


def jacobian_ui(
    kind: MetricKind,
    ctx: MetricContext,
    ui: tuple[float, float],
    uj: tuple[float, float],
    params: MetricParams = MetricParams(),
) -> np.ndarray:
    """Analytic residual Jacobian w.r.t. ui as a length-2 row vector."""
    if kind not in JACOBIAN_KINDS:
        raise KindError(f"no analytic Jacobian for kind {kind.value}")
    _require_border(ctx.i, ui, 2.0)
    _require_point(ctx.j, uj, "uj")
    fi = _sample_point(ctx.i, ui)
    fj = _sample_point(ctx.j, uj)
    hess = ctx.i.sample_hessian(np.asarray([float(ui[0])]), np.asarray([float(ui[1])]))
    return jacobian_rows(kind, fi, hess, fj, params)[0]


def jacobian_fd(
    kind: MetricKind,
    ctx: MetricContext,
    ui: tuple[float, float],
    uj: tuple[float, float],
    params: MetricParams = MetricParams(),
    h: float = 0.25,
) -> np.ndarray:
    """Central finite-difference Jacobian of the residual w.r.t. ui.

    The residual is evaluated at ui +/- h along each axis with all fields
    bilinearly resampled; independent verification oracle for
    jacobian_ui.
    """
    if kind in WINDOW_ONLY_KINDS or kind is MetricKind.GN:
        raise KindError(f"finite-difference Jacobian needs a scalar residual, not {kind.value}")
    if h <= 0.0:
        raise ParamError("step h must be > 0")
    _require_border(ctx.i, ui, h + 1.0)
    _require_point(ctx.j, uj, "uj")
    x, y = float(ui[0]), float(ui[1])
    fj = _sample_point(ctx.j, uj)
    xs = np.asarray([x + h, x - h, x, x])
    ys = np.asarray([y, y, y + h, y - h])
    fi = ctx.i.sample(xs, ys)
    r = signed_residual_values(kind, fi, fj, params)
    return np.asarray([(r[0] - r[1]) / (2.0 * h), (r[2] - r[3]) / (2.0 * h)])
