"""Robust direct image alignment with parametric 2-D warps.

Estimates a translation or affine warp minimizing a metric's residuals
over selected reference points via forward-additive Gauss-Newton with
Huber (IRLS) weighting, coarse-to-fine over an image pyramid. The metric
residual compares the current image at the warped location against the
reference at the point, so its coordinate Jacobian enters the normal
equations through the warp's parameter Jacobian.

Forward-additive iteration is required here: gradient-based residuals
depend on both images' fields, which rules out the inverse-compositional
precomputation shortcut.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionError, EmptySelectionError, ParamError
from .image import GradientOperator, GrayImage, build_pyramid, compute_gradient
from .metrics import (
    JACOBIAN_KINDS,
    ImageFields,
    MetricKind,
    MetricParams,
    jacobian_rows,
    signed_residual_values,
)

# Warped points closer than this to the border are dropped for the
# iteration (bilinear Hessian sampling needs the margin).
_DOMAIN_MARGIN = 2.0
_LEVENBERG_LAMBDA = 1e-4
_MIN_DET = 1e-8


class WarpKind(enum.Enum):
    TRANSLATION2 = "translation"
    AFFINE6 = "affine"


_N_PARAMS = {WarpKind.TRANSLATION2: 2, WarpKind.AFFINE6: 6}


@dataclass(frozen=True)
class WarpModel:
    """Parametric 2-D warp.

    Parameter order: translation (tx, ty); affine (a11, a12, a21, a22,
    tx, ty) applying u' = A u + t.
    """

    kind: WarpKind
    params: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.params, dtype=np.float64).reshape(-1)
        if p.shape[0] != _N_PARAMS[self.kind]:
            raise ParamError(f"{self.kind.value} warp needs {_N_PARAMS[self.kind]} parameters, got {p.shape[0]}")
        if not np.all(np.isfinite(p)):
            raise ParamError("warp parameters must be finite")
        p.setflags(write=False)
        object.__setattr__(self, "params", p)

    @classmethod
    def identity(cls, kind: WarpKind) -> "WarpModel":
        if kind is WarpKind.TRANSLATION2:
            return cls(kind, np.zeros(2))
        return cls(kind, np.asarray([1.0, 0.0, 0.0, 1.0, 0.0, 0.0]))

    @property
    def n_params(self) -> int:
        return _N_PARAMS[self.kind]

    def apply(self, xs: np.ndarray, ys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        p = self.params
        if self.kind is WarpKind.TRANSLATION2:
            return xs + p[0], ys + p[1]
        return p[0] * xs + p[1] * ys + p[4], p[2] * xs + p[3] * ys + p[5]

    def param_jacobian(self, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
        """d(warped)/d(params), shape (N, 2, n_params)."""
        n = xs.shape[0]
        out = np.zeros((n, 2, self.n_params))
        if self.kind is WarpKind.TRANSLATION2:
            out[:, 0, 0] = 1.0
            out[:, 1, 1] = 1.0
            return out
        out[:, 0, 0] = xs
        out[:, 0, 1] = ys
        out[:, 0, 4] = 1.0
        out[:, 1, 2] = xs
        out[:, 1, 3] = ys
        out[:, 1, 5] = 1.0
        return out

    def rescaled(self, factor: float) -> "WarpModel":
        """Warp expressed in coordinates scaled by ``factor`` (pyramid
        level change): translations scale, the linear part does not."""
        p = self.params.copy()
        if self.kind is WarpKind.TRANSLATION2:
            return WarpModel(self.kind, p * factor)
        p[4] *= factor
        p[5] *= factor
        return WarpModel(self.kind, p)

    def with_params(self, params: np.ndarray) -> "WarpModel":
        return WarpModel(self.kind, params)

    def linear_determinant(self) -> float:
        if self.kind is WarpKind.TRANSLATION2:
            return 1.0
        p = self.params
        return float(p[0] * p[3] - p[1] * p[2])


@dataclass(frozen=True)
class GradientAbove:
    """Keep pixels whose gradient norm exceeds the threshold."""

    threshold: float


@dataclass(frozen=True)
class GridStride:
    """Keep every n-th pixel on a regular grid."""

    step: int


PointSelection = GradientAbove | GridStride


@dataclass(frozen=True)
class AlignConfig:
    """Alignment settings.

    huber_delta defaults per metric family when left as None: 0.03 for
    photo, 0.1 for the bounded gradient metrics. patch is the side length
    of the per-point residual patch (1 or 3).
    """

    kind: MetricKind
    params: MetricParams = field(default_factory=MetricParams)
    huber_delta: float | None = None
    max_iterations: int = 30
    convergence_epsilon: float = 1e-4
    pyramid_levels: int = 1
    point_selection: PointSelection = GradientAbove(0.02)
    patch: int = 1
    operator: GradientOperator = GradientOperator.SCHARR

    def __post_init__(self):
        if self.kind not in JACOBIAN_KINDS:
            raise ParamError(f"alignment requires an analytic Jacobian; kind {self.kind.value} has none")
        if self.huber_delta is not None and self.huber_delta <= 0.0:
            raise ParamError("huber_delta must be > 0")
        if self.max_iterations < 1:
            raise ParamError("max_iterations must be >= 1")
        if self.convergence_epsilon <= 0.0:
            raise ParamError("convergence_epsilon must be > 0")
        if self.pyramid_levels < 1:
            raise ParamError("pyramid_levels must be >= 1")
        if self.patch not in (1, 3):
            raise ParamError("patch must be 1 or 3")
        if isinstance(self.point_selection, GradientAbove):
            if self.point_selection.threshold < 0.0:
                raise ParamError("gradient threshold must be >= 0")
        elif isinstance(self.point_selection, GridStride):
            if self.point_selection.step < 1:
                raise ParamError("grid stride must be >= 1")
        else:
            raise ParamError(f"unknown point selection {self.point_selection!r}")

    def resolved_huber_delta(self) -> float:
        if self.huber_delta is not None:
            return self.huber_delta
        return 0.03 if self.kind is MetricKind.PHOTO else 0.1


@dataclass(frozen=True)
class AlignmentResult:
    """Converged warp plus the optimization record."""

    warp: WarpModel
    converged: bool
    iterations_per_level: list[int]
    final_cost: float
    inlier_fraction: float
    trace: list[list[float]]  # per level: objective after each accepted update


def huber_cost(squared_residual: np.ndarray, delta: float) -> np.ndarray:
    """Huber rho applied to squared residuals: identity up to delta^2,
    then 2*delta*sqrt(s) - delta^2."""
    s = np.asarray(squared_residual, dtype=np.float64)
    root = np.sqrt(np.maximum(s, 0.0))
    return np.where(s <= delta**2, s, 2.0 * delta * root - delta**2)


def huber_weight(abs_residual: np.ndarray, delta: float) -> np.ndarray:
    """IRLS weight min(1, delta/|e|)."""
    a = np.maximum(np.asarray(abs_residual, dtype=np.float64), 1e-300)
    return np.minimum(1.0, delta / a)


def select_points(ref: GrayImage, cfg: AlignConfig) -> np.ndarray:
    """Reference point coordinates (N, 2) as (x, y), excluding a 3-pixel
    border. Raises EmptySelectionError below 12 points."""
    b = 3
    w, h = ref.width, ref.height
    if w <= 2 * b or h <= 2 * b:
        raise EmptySelectionError(f"image {w}x{h} has no interior after border exclusion")
    sel = cfg.point_selection
    if isinstance(sel, GridStride):
        xs = np.arange(b, w - b, sel.step)
        ys = np.arange(b, h - b, sel.step)
        gx, gy = np.meshgrid(xs, ys)
        pts = np.stack([gx.ravel(), gy.ravel()], axis=1).astype(np.float64)
    else:
        grad = compute_gradient(ref, cfg.operator)
        mask = grad.norm > sel.threshold
        mask[:b, :] = False
        mask[-b:, :] = False
        mask[:, :b] = False
        mask[:, -b:] = False
        ys_i, xs_i = np.nonzero(mask)
        pts = np.stack([xs_i, ys_i], axis=1).astype(np.float64)
    if pts.shape[0] < 12:
        raise EmptySelectionError(f"only {pts.shape[0]} points selected; need at least 12")
    return pts


def _patch_points(points: np.ndarray, patch: int) -> np.ndarray:
    if patch == 1:
        return points
    offs = np.array([(ox, oy) for oy in (-1, 0, 1) for ox in (-1, 0, 1)], dtype=np.float64)
    return (points[:, None, :] + offs[None, :, :]).reshape(-1, 2)


def _domain_mask(fields: ImageFields, xs: np.ndarray, ys: np.ndarray, margin: float) -> np.ndarray:
    w, h = fields.image.width, fields.image.height
    return (xs >= margin) & (xs <= w - 1 - margin) & (ys >= margin) & (ys <= h - 1 - margin)


def _objective_on_points(
    fields_ref: ImageFields,
    fields_cur: ImageFields,
    pts: np.ndarray,
    warp: WarpModel,
    kind: MetricKind,
    params: MetricParams,
    delta: float,
) -> tuple[float, float, int]:
    """Robust objective at a fixed warp over the in-domain subset.

    Returns (objective, inlier fraction, points used).
    """
    wx, wy = warp.apply(pts[:, 0], pts[:, 1])
    keep = _domain_mask(fields_cur, wx, wy, _DOMAIN_MARGIN)
    if not np.any(keep):
        return 0.0, 0.0, 0
    fj = fields_ref.sample(pts[keep, 0], pts[keep, 1])
    fi = fields_cur.sample(wx[keep], wy[keep])
    e = signed_residual_values(kind, fi, fj, params)
    obj = float(np.sum(huber_cost(e**2, delta)))
    inliers = float(np.mean(np.abs(e) <= delta))
    return obj, inliers, int(np.count_nonzero(keep))


def evaluate_objective(
    ref: GrayImage, cur: GrayImage, cfg: AlignConfig, warp: WarpModel
) -> float:
    """Sum of Huber-robustified squared residuals at a fixed warp, over
    the full-resolution point selection."""
    if ref.shape != cur.shape:
        raise DimensionError(f"image shapes differ: {ref.shape} vs {cur.shape}")
    fields_ref = ImageFields(ref, cfg.operator)
    fields_cur = ImageFields(cur, cfg.operator)
    pts = _patch_points(select_points(ref, cfg), cfg.patch)
    obj, _, _ = _objective_on_points(
        fields_ref, fields_cur, pts, warp, cfg.kind, cfg.params, cfg.resolved_huber_delta()
    )
    return obj


def _solve_normal_equations(H: np.ndarray, g: np.ndarray) -> np.ndarray | None:
    """Solve H x = -g; on failure retry once with Levenberg damping."""
    for damped in (False, True):
        A = H + _LEVENBERG_LAMBDA * np.eye(H.shape[0]) if damped else H
        try:
            x = np.linalg.solve(A, -g)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(x)):
            return x
    return None


def align(
    ref: GrayImage,
    cur: GrayImage,
    cfg: AlignConfig,
    init: WarpModel | None = None,
) -> AlignmentResult:
    """Estimate the warp aligning ``cur`` to ``ref`` coarse-to-fine.

    Per iteration, residuals and their chain-rule Jacobians are
    accumulated into Huber-weighted normal equations over the selected
    points; points warped outside the current image are dropped for that
    iteration. Terminates per level on update norm below
    convergence_epsilon or on the iteration cap.
    """
    if ref.shape != cur.shape:
        raise DimensionError(f"image shapes differ: {ref.shape} vs {cur.shape}")
    if init is None:
        init = WarpModel.identity(WarpKind.TRANSLATION2)
    delta = cfg.resolved_huber_delta()
    ref_pyr = build_pyramid(ref, cfg.pyramid_levels)
    cur_pyr = build_pyramid(cur, cfg.pyramid_levels)
    levels = cfg.pyramid_levels
    warp = init.rescaled(1.0 / 2.0 ** (levels - 1))
    iterations_per_level: list[int] = []
    trace: list[list[float]] = []
    converged = False
    healthy = True
    last_inliers = 0.0
    for level in range(levels - 1, -1, -1):
        fields_ref = ImageFields(ref_pyr[level], cfg.operator)
        fields_cur = ImageFields(cur_pyr[level], cfg.operator)
        pts = _patch_points(select_points(ref_pyr[level], cfg), cfg.patch)
        fj_all = fields_ref.sample(pts[:, 0], pts[:, 1])
        level_trace: list[float] = []
        iters = 0
        converged = False
        for _ in range(cfg.max_iterations):
            wx, wy = warp.apply(pts[:, 0], pts[:, 1])
            keep = _domain_mask(fields_cur, wx, wy, _DOMAIN_MARGIN)
            if np.count_nonzero(keep) < max(warp.n_params, 6):
                healthy = False
                break
            fi = fields_cur.sample(wx[keep], wy[keep])
            hess = fields_cur.sample_hessian(wx[keep], wy[keep])
            fj = _take_sample(fj_all, keep)
            e = signed_residual_values(cfg.kind, fi, fj, cfg.params)
            ju = jacobian_rows(cfg.kind, fi, hess, fj, cfg.params)
            jw = warp.param_jacobian(pts[keep, 0], pts[keep, 1])
            J = np.einsum("ni,nip->np", ju, jw)
            w = huber_weight(np.abs(e), delta)
            H = np.einsum("np,nq,n->pq", J, J, w)
            g = J.T @ (w * e)
            step = _solve_normal_equations(H, g)
            if step is None:
                healthy = False
                break
            candidate = warp.with_params(warp.params + step)
            if abs(candidate.linear_determinant()) < _MIN_DET:
                healthy = False
                break
            warp = candidate
            iters += 1
            obj, last_inliers, _ = _objective_on_points(
                fields_ref, fields_cur, pts, warp, cfg.kind, cfg.params, delta
            )
            level_trace.append(obj)
            if float(np.linalg.norm(step)) < cfg.convergence_epsilon:
                converged = True
                break
        iterations_per_level.append(iters)
        trace.append(level_trace)
        if level > 0:
            warp = warp.rescaled(2.0)
    final_cost, final_inliers, used = _objective_on_points(
        ImageFields(ref_pyr[0], cfg.operator),
        ImageFields(cur_pyr[0], cfg.operator),
        _patch_points(select_points(ref_pyr[0], cfg), cfg.patch),
        warp,
        cfg.kind,
        cfg.params,
        delta,
    )
    if used == 0:
        healthy = False
    return AlignmentResult(
        warp=warp,
        converged=converged and healthy,
        iterations_per_level=iterations_per_level,
        final_cost=final_cost,
        inlier_fraction=final_inliers if used else last_inliers,
        trace=trace,
    )


def _take_sample(f, keep: np.ndarray):
    from .metrics import FieldSample

    return FieldSample(
        intensity=f.intensity[keep],
        gx=f.gx[keep],
        gy=f.gy[keep],
        gnorm=f.gnorm[keep],
        qden=f.qden[keep],
        ax=f.ax[keep],
        ay=f.ay[keep],
        anorm=f.anorm[keep],
        eps=f.eps,
    )
