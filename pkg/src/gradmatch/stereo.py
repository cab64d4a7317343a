"""Winner-takes-all stereo block matching with pluggable dissimilarity.

For each left pixel the integer disparity minimizing the window
aggregated cost is selected (ties toward the smaller disparity), with
optional uniqueness filtering, left-right consistency checking, and
parabolic subpixel refinement. No smoothing beyond the window is
applied, so the disparity map reflects the metric alone.

Matching convention: a left pixel u matches the right pixel u - (d, 0),
d >= 0 moving content leftward in the right image of a rectified pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, DimensionError, OutOfBoundsError
from .image import GradientOperator, GrayImage
from .metrics import (
    FieldSample,
    ImageFields,
    MetricContext,
    MetricKind,
    MetricParams,
    gom_cost,
    l1_residual_values,
    ncc_cost,
    windowed_cost,
)


@dataclass(frozen=True)
class StereoConfig:
    """Disparity search parameters.

    Candidates run over the inclusive range [min_disparity,
    max_disparity]. uniqueness_ratio = 1 disables the uniqueness filter;
    larger values require the winner to beat every candidate more than
    one step away by that factor.
    """

    kind: MetricKind
    max_disparity: int
    min_disparity: int = 0
    params: MetricParams = field(default_factory=MetricParams)
    subpixel: bool = False
    uniqueness_ratio: float = 1.15
    lr_check: bool = False
    lr_threshold: float = 1.0
    operator: GradientOperator = GradientOperator.CENTRAL

    def __post_init__(self):
        if self.min_disparity >= self.max_disparity:
            raise ConfigError(
                f"min_disparity ({self.min_disparity}) must be < max_disparity ({self.max_disparity})"
            )
        if self.uniqueness_ratio < 1.0:
            raise ConfigError(f"uniqueness_ratio must be >= 1, got {self.uniqueness_ratio}")
        if self.lr_threshold < 0.0:
            raise ConfigError("lr_threshold must be >= 0")

    @property
    def disparities(self) -> range:
        return range(self.min_disparity, self.max_disparity + 1)


@dataclass(frozen=True)
class DisparityMap:
    """Per-pixel disparity in the left-image frame.

    Invalid pixels carry NaN in ``values`` and False in ``valid``.
    """

    values: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        valid = np.asarray(self.valid, dtype=bool)
        if values.shape != valid.shape or values.ndim != 2:
            raise DimensionError("values and valid must be equal-shaped 2-D arrays")
        values = np.where(valid, values, np.nan)
        if not np.all(np.isfinite(values[valid])):
            raise DimensionError("valid pixels must hold finite disparities")
        values.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "valid", valid)

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @classmethod
    def constant(cls, width: int, height: int, value: float) -> "DisparityMap":
        return cls(np.full((height, width), value), np.ones((height, width), dtype=bool))


@dataclass(frozen=True)
class CostVolume:
    """Materialized per-pixel, per-candidate costs, shape (H, W, D).

    Entries are +inf where the candidate match leaves the right image.
    """

    values: np.ndarray
    min_disparity: int

    @property
    def num_disparities(self) -> int:
        return self.values.shape[2]

    def slice(self, d: int) -> np.ndarray:
        idx = d - self.min_disparity
        if not (0 <= idx < self.num_disparities):
            raise OutOfBoundsError(f"disparity {d} outside volume range")
        return self.values[:, :, idx]


def box_sum(arr: np.ndarray, radius: int) -> np.ndarray:
    """Sum over the window clipped to the array bounds, per pixel."""
    if radius == 0:
        return arr.astype(np.float64, copy=True)
    h, w = arr.shape
    p = np.zeros((h + 1, w + 1))
    p[1:, 1:] = np.cumsum(np.cumsum(arr, axis=0), axis=1)
    ys = np.arange(h)
    xs = np.arange(w)
    y0 = np.maximum(ys - radius, 0)
    y1 = np.minimum(ys + radius, h - 1) + 1
    x0 = np.maximum(xs - radius, 0)
    x1 = np.minimum(xs + radius, w - 1) + 1
    return p[np.ix_(y1, x1)] - p[np.ix_(y0, x1)] - p[np.ix_(y1, x0)] + p[np.ix_(y0, x0)]


def _slice_fields(f: FieldSample, x0: int, x1: int) -> FieldSample:
    sl = np.s_[:, x0 : x1 + 1]
    return FieldSample(
        intensity=f.intensity[sl],
        gx=f.gx[sl],
        gy=f.gy[sl],
        gnorm=f.gnorm[sl],
        qden=f.qden[sl],
        ax=f.ax[sl],
        ay=f.ay[sl],
        anorm=f.anorm[sl],
        eps=f.eps,
    )


def _ncc_plane(fi: FieldSample, fj: FieldSample, radius: int, tau: float) -> np.ndarray:
    n = box_sum(np.ones_like(fi.intensity), radius)
    si = box_sum(fi.intensity, radius)
    sj = box_sum(fj.intensity, radius)
    sii = box_sum(fi.intensity**2, radius)
    sjj = box_sum(fj.intensity**2, radius)
    sij = box_sum(fi.intensity * fj.intensity, radius)
    cov = sij - si * sj / n
    vi = np.maximum(sii - si**2 / n, 0.0)
    vj = np.maximum(sjj - sj**2 / n, 0.0)
    den = np.sqrt(vi * vj)
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = 1.0 - cov / den
    return np.where(den > tau, cost, 1.0)


def _gom_plane(fi: FieldSample, fj: FieldSample, radius: int, tau: float) -> np.ndarray:
    num = box_sum(np.abs(fi.gx * fj.gx + fi.gy * fj.gy), radius)
    den = box_sum(fi.gnorm * fj.gnorm, radius)
    with np.errstate(divide="ignore", invalid="ignore"):
        cost = 1.0 - num / den
    return np.where(den > tau, cost, 1.0)


def cost_plane(
    kind: MetricKind,
    fa: FieldSample,
    fb: FieldSample,
    offset: int,
    params: MetricParams,
) -> np.ndarray:
    """Windowed cost of matching pixel x of plane A against x+offset of
    plane B, +inf where the match leaves B; window clipped to the overlap
    strip (equivalently, to both image domains)."""
    h, w = fa.intensity.shape
    out = np.full((h, w), np.inf)
    x0 = max(0, -offset)
    x1 = min(w - 1, w - 1 - offset)
    if x1 < x0:
        return out
    sa = _slice_fields(fa, x0, x1)
    sb = _slice_fields(fb, x0 + offset, x1 + offset)
    radius = params.window // 2
    if kind is MetricKind.NCC:
        strip = _ncc_plane(sa, sb, radius, params.tau)
    elif kind is MetricKind.GOM:
        strip = _gom_plane(sa, sb, radius, params.tau)
    else:
        strip = box_sum(l1_residual_values(kind, sa, sb, params), radius)
    out[:, x0 : x1 + 1] = strip
    return out


def _check_pair(left: GrayImage, right: GrayImage, cfg: StereoConfig) -> None:
    if left.shape != right.shape:
        raise DimensionError(f"image shapes differ: {left.shape} vs {right.shape}")
    if cfg.max_disparity >= left.width or -cfg.min_disparity >= left.width:
        raise ConfigError(
            f"disparity range [{cfg.min_disparity}, {cfg.max_disparity}] exceeds image width {left.width}"
        )


def _wta_pass(fa: FieldSample, fb: FieldSample, cfg: StereoConfig, sign: int):
    """Streaming winner-takes-all over the disparity range.

    sign=-1 matches A(x) to B(x-d) (left disparity); sign=+1 matches
    A(x) to B(x+d) (right-image pass of the left-right check). Returns
    (best cost, integer winner, cost at winner-1, cost at winner+1).
    """
    h, w = fa.intensity.shape
    best = np.full((h, w), np.inf)
    best_d = np.full((h, w), cfg.min_disparity - 2, dtype=np.int64)
    c_minus = np.full((h, w), np.inf)
    c_plus = np.full((h, w), np.inf)
    prev = None
    for d in cfg.disparities:
        plane = cost_plane(cfg.kind, fa, fb, sign * d, cfg.params)
        follow = best_d == d - 1
        c_plus[follow] = plane[follow]
        upd = plane < best
        if prev is not None:
            c_minus[upd] = prev[upd]
        else:
            c_minus[upd] = np.inf
        best[upd] = plane[upd]
        best_d[upd] = d
        prev = plane
    return best, best_d, c_minus, c_plus


def _uniqueness_mask(
    fa: FieldSample, fb: FieldSample, cfg: StereoConfig, sign: int, best: np.ndarray, best_d: np.ndarray
) -> np.ndarray:
    """True where the winner is sufficiently unique: best * ratio stays
    below every candidate more than 1 disparity step away."""
    second = np.full_like(best, np.inf)
    for d in cfg.disparities:
        plane = cost_plane(cfg.kind, fa, fb, sign * d, cfg.params)
        away = np.abs(best_d - d) > 1
        np.minimum(second, np.where(away, plane, np.inf), out=second)
    with np.errstate(invalid="ignore"):
        reject = best * cfg.uniqueness_ratio >= second
    return ~(reject & np.isfinite(second))


def _subpixel_offset(best: np.ndarray, c_minus: np.ndarray, c_plus: np.ndarray) -> np.ndarray:
    """Parabola vertex offset from costs at winner-1, winner, winner+1,
    clamped to [-0.5, 0.5]; zero where a neighbor cost is missing."""
    ok = np.isfinite(c_minus) & np.isfinite(c_plus)
    den = c_minus - 2.0 * best + c_plus
    num = c_minus - c_plus
    with np.errstate(divide="ignore", invalid="ignore"):
        off = 0.5 * num / den
    off = np.where(ok & (den > 0), off, 0.0)
    return np.clip(off, -0.5, 0.5)


def match(left: GrayImage, right: GrayImage, cfg: StereoConfig) -> DisparityMap:
    """Disparity map of the rectified pair under the configured metric."""
    _check_pair(left, right, cfg)
    ctx = MetricContext.from_images(left, right, cfg.operator)
    fl = ctx.i.plane()
    fr = ctx.j.plane()
    best, best_d, c_minus, c_plus = _wta_pass(fl, fr, cfg, sign=-1)
    valid = np.isfinite(best)
    if cfg.uniqueness_ratio > 1.0:
        valid &= _uniqueness_mask(fl, fr, cfg, -1, best, best_d)
    values = best_d.astype(np.float64)
    if cfg.subpixel:
        values = values + _subpixel_offset(best, c_minus, c_plus)
    if cfg.lr_check:
        rbest, rbest_d, _, _ = _wta_pass(fr, fl, cfg, sign=+1)
        h, w = left.shape
        xs = np.arange(w)[None, :].repeat(h, axis=0)
        xr = xs - best_d
        in_range = (xr >= 0) & (xr < w) & valid
        ys = np.arange(h)[:, None].repeat(w, axis=1)
        xr_c = np.clip(xr, 0, w - 1)
        d_r = np.where(np.isfinite(rbest[ys, xr_c]), rbest_d[ys, xr_c].astype(np.float64), np.nan)
        with np.errstate(invalid="ignore"):
            consistent = np.abs(values - d_r) <= cfg.lr_threshold
        valid &= in_range & np.nan_to_num(consistent, nan=False)
    return DisparityMap(values=np.where(valid, values, np.nan), valid=valid)


def compute_cost_volume(left: GrayImage, right: GrayImage, cfg: StereoConfig) -> CostVolume:
    """Materialize the full cost volume (H, W, D); deterministic."""
    _check_pair(left, right, cfg)
    ctx = MetricContext.from_images(left, right, cfg.operator)
    fl = ctx.i.plane()
    fr = ctx.j.plane()
    planes = [cost_plane(cfg.kind, fl, fr, -d, cfg.params) for d in cfg.disparities]
    return CostVolume(values=np.stack(planes, axis=2), min_disparity=cfg.min_disparity)


def select_from_volume(volume: CostVolume, cfg: StereoConfig) -> DisparityMap:
    """Winner-takes-all selection over a materialized volume (no filters);
    ties resolve to the smallest disparity."""
    vals = volume.values
    idx = np.argmin(vals, axis=2)
    best = np.take_along_axis(vals, idx[:, :, None], axis=2)[:, :, 0]
    valid = np.isfinite(best)
    values = np.where(valid, idx.astype(np.float64) + volume.min_disparity, np.nan)
    return DisparityMap(values=values, valid=valid)


def cost_curve(
    left: GrayImage, right: GrayImage, cfg: StereoConfig, u: tuple[int, int]
) -> list[tuple[int, float]]:
    """Windowed cost profile over the disparity range at one left pixel;
    +inf where the candidate leaves the right image."""
    _check_pair(left, right, cfg)
    x, y = int(u[0]), int(u[1])
    if not (0 <= x < left.width and 0 <= y < left.height):
        raise OutOfBoundsError(f"pixel {(x, y)} outside image")
    ctx = MetricContext.from_images(left, right, cfg.operator)
    out: list[tuple[int, float]] = []
    for d in cfg.disparities:
        xr = x - d
        if 0 <= xr < right.width:
            c = windowed_cost(cfg.kind, ctx, (x, y), (xr, y), cfg.params)
        else:
            c = float("inf")
        out.append((d, c))
    return out
