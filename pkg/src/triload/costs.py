"""Cost functions on the triangle, their rotations, and numerical checkers.

A cost model evaluates the cost of serving a point from the bin at B1; the
costs toward the bins at B2 and B3 are the rotations c2(x) = c(j^2 x) and
c3(x) = c(j x).  Built-in families: monotone radial profiles, constants,
and the inverse signal-to-interference-plus-noise cost with path-loss
exponent alpha, noise a and near-field cap b.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry, quadrature
from .errors import InvalidParamsError, OutsideTriangleError

_FR = geometry.frame()


@dataclass(eq=False, frozen=True)
class CostModel:
    fn: callable
    sup_norm: float             # certified sup of the cost over the whole triangle
    label: str
    center_value: float         # cost at the origin (max over cell 1)
    vertex_value: float         # cost at B1 (min over cell 1)
    kink_circles: tuple = ()    # circles where the integrand loses smoothness

    def __call__(self, z):
        return self.fn(np.asarray(z, dtype=complex))


def eval_l(model: CostModel, l: int, x):
    """Cost toward bin l: c1(x) = c(x), c2(x) = c(j^2 x), c3(x) = c(j x)."""
    z = np.asarray(x, dtype=complex)
    if not np.all(geometry.in_triangle(_FR, z)):
        raise OutsideTriangleError("cost models are defined on the closed triangle")
    if l == 1:
        return model.fn(z)
    if l == 2:
        return model.fn(geometry.J2 * z)
    if l == 3:
        return model.fn(geometry.J * z)
    raise ValueError(f"bin index must be 1, 2 or 3, got {l}")


def eval_l_unchecked(model: CostModel, l: int, x):
    """eval_l for hot loops on points already known to lie in the triangle."""
    z = np.asarray(x, dtype=complex)
    if l == 1:
        return model.fn(z)
    if l == 2:
        return model.fn(geometry.J2 * z)
    return model.fn(geometry.J * z)


def cost_matrix(model: CostModel, z) -> np.ndarray:
    """(n, 3) matrix of the three rotated costs, no domain re-validation."""
    z = np.asarray(z, dtype=complex)
    return np.stack(
        [model.fn(z), model.fn(geometry.J2 * z), model.fn(geometry.J * z)], axis=-1
    )


def radial_cost(profile, label=None) -> CostModel:
    """Cost f(|x - B1|) for a nondecreasing vectorized profile f."""
    grid = np.linspace(0.0, _FR.side, 257)
    vals = np.asarray(profile(grid), dtype=float)
    if np.any(np.diff(vals) < 0):
        raise InvalidParamsError("radial profile must be nondecreasing on [0, side]")

    def fn(z):
        return np.asarray(profile(np.abs(np.asarray(z, dtype=complex) - _FR.b1)), dtype=float)

    at = lambda r: float(np.asarray(profile(np.asarray([r])), dtype=float)[0])
    return CostModel(
        fn=fn,
        sup_norm=at(_FR.side),             # profile is nondecreasing; max distance is one side
        label=label or "radial:<profile>",
        center_value=at(_FR.lam),
        vertex_value=at(0.0),
    )


def linear_radial(scale: float) -> CostModel:
    """The round-trip-time style cost scale * |x - B1|."""
    if scale <= 0:
        raise InvalidParamsError("radial scale must be positive")
    return radial_cost(lambda r: scale * r, label=f"radial:{scale:g}")


def const_cost(kappa: float) -> CostModel:
    """Constant cost; deliberately violates the strict nearest-bin inequality."""
    if kappa < 0:
        raise InvalidParamsError("constant cost must be nonnegative")

    def fn(z):
        return np.full(np.shape(z), float(kappa))

    return CostModel(
        fn=fn, sup_norm=float(kappa), label=f"const:{kappa:g}",
        center_value=float(kappa), vertex_value=float(kappa),
    )


@dataclass(frozen=True)
class SinrParams:
    alpha: float
    a: float
    b: float

    def __post_init__(self):
        if self.alpha < 2:
            raise InvalidParamsError(f"path-loss exponent must be >= 2, got {self.alpha}")
        if self.a <= 0:
            raise InvalidParamsError(f"noise must be positive, got {self.a}")
        if self.b <= self.threshold():
            raise InvalidParamsError(
                f"near-field cap {self.b} must exceed (side/2)^(-alpha) = {self.threshold():.6g}"
            )

    def threshold(self) -> float:
        return (_FR.side / 2.0) ** (-self.alpha)


def sinr_cost(params: SinrParams) -> CostModel:
    """Inverse signal-to-interference-plus-noise cost.

    c(x) = (a + min(b,|x-B2|^-alpha) + min(b,|x-B3|^-alpha)) / min(b,|x-B1|^-alpha).
    The cost peaks at the far corners: sup over the triangle is
    side^alpha * (a + b) + 1, attained at B2 and B3; on cell 1 the extremes
    are c(0) = lam^alpha * a + 2 and c(B1).
    """
    alpha, a, b = params.alpha, params.a, params.b

    def capped(r):
        with np.errstate(divide="ignore"):
            return np.minimum(b, r ** (-alpha))

    def fn(z):
        z = np.asarray(z, dtype=complex)
        num = a + capped(np.abs(z - _FR.b2)) + capped(np.abs(z - _FR.b3))
        return num / capped(np.abs(z - _FR.b1))

    radius = b ** (-1.0 / alpha)
    center = _FR.lam**alpha * a + 2.0
    vertex = (a + 2.0 * min(b, _FR.side ** (-alpha))) / b
    return CostModel(
        fn=fn,
        sup_norm=_FR.side**alpha * (a + b) + 1.0,
        label=f"sinr:{alpha:g},{a:g},{b:g}",
        center_value=center,
        vertex_value=vertex,
        kink_circles=tuple((v, radius) for v in _FR.vertices()),
    )


def parse_model_spec(spec: str) -> CostModel:
    """Parse a model selection string: radial:<scale>, sinr:<alpha>,<a>,<b>, const:<kappa>."""
    try:
        kind, _, args = spec.partition(":")
        if kind == "radial":
            return linear_radial(float(args))
        if kind == "const":
            return const_cost(float(args))
        if kind == "sinr":
            alpha, a, b = (float(v) for v in args.split(","))
            return sinr_cost(SinrParams(alpha, a, b))
    except InvalidParamsError:
        raise
    except (ValueError, TypeError) as exc:
        raise ValueError(f"malformed model spec {spec!r}") from exc
    raise ValueError(f"unknown model kind in spec {spec!r}")


def pooled_load_profile(model: CostModel, z) -> np.ndarray:
    """The equal-split load c1 c2 c3 / (c1 c2 + c1 c3 + c2 c3) at each point.

    This is the per-object load when a point's unit mass is split so the
    three bins see identical load; it peaks at the origin with value
    c(0)/3.
    """
    c = cost_matrix(model, z)
    prod = c[..., 0] * c[..., 1] * c[..., 2]
    pairs = (
        c[..., 0] * c[..., 1] + c[..., 0] * c[..., 2] + c[..., 1] * c[..., 2]
    )
    with np.errstate(invalid="ignore", divide="ignore"):
        out = prod / pairs
    return np.where(pairs > 0.0, out, 0.0)


# --- assumption checking ----------------------------------------------------

_CHECKS = (
    "nearest_bin_cheapest",    # strictly closer bin is strictly cheaper
    "mirror_symmetry",         # c(t e^{i th}) = c(t e^{-i th - i pi/3}), Lipschitz near the axis rays
    "level_sets_null",         # surrogate: cost strictly monotone along rays
    "continuity",              # local oscillation shrinks under grid refinement
    "cost_extremes",           # c(B1) < c(x) < c(0) on cell 1
    "pooled_load_peak",        # equal-split load < c(0)/3 away from the origin
    "offcell_mass",            # c(0)/3 < integral of c over cell 2
)


@dataclass(frozen=True)
class AssumptionStatus:
    name: str
    status: str                 # "pass" | "fail" | "indeterminate"
    margin: float
    witness: complex | None = None
    detail: dict = field(default_factory=dict)


@dataclass(frozen=True)
class AssumptionReport:
    statuses: tuple

    def __getitem__(self, name) -> AssumptionStatus:
        for st in self.statuses:
            if st.name == name:
                return st
        raise KeyError(name)

    @property
    def passed(self) -> bool:
        return all(st.status != "fail" for st in self.statuses)

    def to_dict(self):
        return {
            st.name: {
                "status": st.status,
                "margin": st.margin,
                "witness": None if st.witness is None else [st.witness.real, st.witness.imag],
                "detail": st.detail,
            }
            for st in self.statuses
        }

    def to_json(self, **kw):
        return json.dumps(self.to_dict(), sort_keys=True, **kw)


def _interior_grid(fr, resolution):
    i, j = np.meshgrid(np.arange(resolution), np.arange(resolution), indexing="ij")
    u = (i + 0.5) / resolution
    v = (j + 0.5) / resolution
    keep = u + v < 1.0 - 0.25 / resolution
    u, v = u[keep], v[keep]
    return fr.b1 + u * (fr.b2 - fr.b1) + v * (fr.b3 - fr.b1)


def _dist_to_axis_rays(z):
    """Distance to the union of the boundary rays at angles pi/6 and 3*pi/2."""
    out = np.full(np.shape(z), np.inf)
    for ang in (math.pi / 6.0, -math.pi / 2.0):
        d = np.exp(1j * ang)
        along = geometry.dot(d, z)
        perp = np.abs(geometry.cross(d, z))
        out = np.minimum(out, np.where(along > 0, perp, np.abs(z)))
    return out


def _local_oscillation(model, fr, resolution):
    i, j = np.meshgrid(np.arange(resolution + 1), np.arange(resolution + 1), indexing="ij")
    keep = i + j <= resolution
    u = i[keep] / resolution
    v = j[keep] / resolution
    z = fr.b1 + u * (fr.b2 - fr.b1) + v * (fr.b3 - fr.b1)
    c = np.asarray(model(z), dtype=float)
    idx = -np.ones((resolution + 1, resolution + 1), dtype=int)
    idx[i[keep], j[keep]] = np.arange(c.size)
    osc = 0.0
    for di, dj in ((1, 0), (0, 1), (1, -1)):
        a = idx[: resolution + 1 - max(di, 0), max(-dj, 0) : resolution + 1 - max(dj, 0)]
        b = idx[max(di, 0) :, max(dj, 0) : resolution + 1 + min(dj, 0)]
        ok = (a >= 0) & (b >= 0)
        if ok.any():
            osc = max(osc, float(np.max(np.abs(c[a[ok]] - c[b[ok]]))))
    return osc


def check_assumptions(model: CostModel, fr=None, grid_resolution: int = 300) -> AssumptionReport:
    """Evaluate the model contract inequalities on an interior grid.

    Strict inequalities are tested with margin > 1e-12 on grids excluding
    the known equality points; the level-set condition is only probed by
    the monotone-ray scan, so a clean scan reports "pass" as a surrogate
    and an inconclusive one "indeterminate" rather than certifying the
    analytic property.
    """
    if grid_resolution < 100:
        raise ValueError("grid_resolution must be at least 100")
    fr = fr or geometry.frame()
    z = _interior_grid(fr, grid_resolution)
    c = cost_matrix(model, z)
    d = np.stack([np.abs(z - fr.vertex(l)) for l in (1, 2, 3)], axis=1)
    scale = max(1.0, model.sup_norm)
    strict = 1e-12
    statuses = []

    # nearest bin is strictly cheaper; points numerically on a bisector are
    # equality points of the inequality and are excluded from the strict test
    margin = math.inf
    witness = None
    bisector_pad = 1e-9 * fr.side
    for l in range(3):
        for m in range(3):
            if l == m:
                continue
            mask = d[:, l] < d[:, m] - bisector_pad
            if not mask.any():
                continue
            gaps = c[mask, m] - c[mask, l]
            k = int(np.argmin(gaps))
            if gaps[k] < margin:
                margin = float(gaps[k])
                witness = complex(z[mask][k])
    statuses.append(
        AssumptionStatus(
            "nearest_bin_cheapest",
            "pass" if margin > strict else "fail",
            margin,
            witness if margin <= strict else None,
        )
    )

    # mirror symmetry across the 0-B1 axis, plus a Lipschitz estimate near the rays
    refl = np.asarray(model(geometry.reflect_axis1(z)), dtype=float)
    resid = np.abs(c[:, 0] - refl)
    k = int(np.argmax(resid))
    sym_margin = float(1e-10 * scale - resid[k])
    band = _dist_to_axis_rays(z) <= fr.side / 20.0
    lip = 0.0
    if band.any():
        zb = z[band]
        h = 1e-5 * fr.side
        for step in (h, 1j * h):
            inside = geometry.in_triangle(fr, zb + step)
            if inside.any():
                dc = np.abs(
                    np.asarray(model(zb[inside] + step), dtype=float)
                    - c[band][inside, 0]
                )
                lip = max(lip, float(np.max(dc)) / h)
    statuses.append(
        AssumptionStatus(
            "mirror_symmetry",
            "pass" if sym_margin > 0 else "fail",
            sym_margin,
            complex(z[k]) if sym_margin <= 0 else None,
            detail={"max_residual": float(resid[k]), "lipschitz_estimate": lip},
        )
    )

    # level sets: monotone-ray surrogate
    scan = check_level_sets_monotone(model, fr, ray_count=120, steps=600)
    if scan.flat_segments:
        lstat, lmargin, lwit = "fail", 0.0, scan.witness
    elif scan.mixed_segments:
        lstat, lmargin, lwit = "indeterminate", 0.0, None
    else:
        lstat, lmargin, lwit = "pass", math.inf, None
    statuses.append(
        AssumptionStatus(
            "level_sets_null", lstat, lmargin, lwit,
            detail={"flat": scan.flat_segments, "mixed": scan.mixed_segments,
                    "segments": scan.segment_count},
        )
    )

    # continuity: oscillation between neighbouring lattice points must shrink
    osc1 = _local_oscillation(model, fr, grid_resolution // 2)
    osc2 = _local_oscillation(model, fr, grid_resolution)
    cont_ok = osc2 <= 0.75 * osc1 + 1e-9 * scale
    statuses.append(
        AssumptionStatus(
            "continuity",
            "pass" if cont_ok else "indeterminate",
            float(0.75 * osc1 + 1e-9 * scale - osc2),
            detail={"oscillation_coarse": osc1, "oscillation_fine": osc2},
        )
    )

    # extremes of the cost on cell 1
    cell1 = (d[:, 0] <= d[:, 1]) & (d[:, 0] <= d[:, 2])
    c1v = c[cell1, 0]
    lo = float(np.min(c1v - model.vertex_value))
    hi = float(np.max(c1v - model.center_value))
    margin_ext = min(lo, -hi)
    k = int(np.argmin(c1v - model.vertex_value)) if lo <= strict else int(np.argmax(c1v))
    statuses.append(
        AssumptionStatus(
            "cost_extremes",
            "pass" if margin_ext > strict else "fail",
            margin_ext,
            complex(z[cell1][k]) if margin_ext <= strict else None,
        )
    )

    # the equal-split load peaks only at the origin
    away = np.abs(z) > 0.05
    load = pooled_load_profile(model, z[away])
    k = int(np.argmax(load))
    margin_peak = float(model.center_value / 3.0 - load[k])
    statuses.append(
        AssumptionStatus(
            "pooled_load_peak",
            "pass" if margin_peak > strict else "fail",
            margin_peak,
            complex(z[away][k]) if margin_peak <= strict else None,
            detail={"exclusion_radius": 0.05},
        )
    )

    # centre load below the neighbouring-cell integral
    t2 = quadrature.integral_t2(model, fr)
    margin_mass = float(t2 - model.center_value / 3.0)
    statuses.append(
        AssumptionStatus(
            "offcell_mass",
            "pass" if margin_mass > strict else "fail",
            margin_mass,
            0j if margin_mass <= strict else None,
            detail={"cell2_integral": t2, "center_third": model.center_value / 3.0},
        )
    )

    return AssumptionReport(statuses=tuple(statuses))


@dataclass(frozen=True)
class RayScanReport:
    segment_count: int
    monotone_segments: int
    flat_segments: int
    mixed_segments: int
    witness: complex | None
    region_breakdown: dict

    @property
    def all_monotone(self) -> bool:
        return self.flat_segments == 0 and self.mixed_segments == 0


def check_level_sets_monotone(
    model: CostModel, fr=None, ray_count: int = 360, steps: int = 10_000, center=0j
) -> RayScanReport:
    """Scan the cost along rays, split at the cap circles, and grade monotonicity.

    Within each maximal run where the min-cap regime is constant, the cost
    should be strictly monotone in the radius; a flat run is a genuine
    level set of positive length, a mixed run is merely inconclusive.
    """
    fr = fr or geometry.frame()
    center = complex(center)
    circles = getattr(model, "kink_circles", ()) or ()
    seg = mono = flat = mixed = 0
    witness = None
    breakdown: dict = {}
    for k in range(ray_count):
        ang = 2.0 * math.pi * (k + 0.5) / ray_count
        direction = complex(math.cos(ang), math.sin(ang))
        try:
            rmax = geometry.ray_exit_distance(fr, center, direction)
        except OutsideTriangleError:
            continue
        r = np.linspace(0.0, rmax, steps)[1:-1]
        z = center + r * direction
        region = np.zeros(r.size, dtype=int)
        for idx, (cc, rad) in enumerate(circles, start=1):
            region[np.abs(z - cc) < rad] = idx
        c = np.asarray(model(z), dtype=float)
        bounds = np.flatnonzero(np.diff(region) != 0) + 1
        for lo, hi in zip(np.r_[0, bounds], np.r_[bounds, r.size]):
            if hi - lo < 3:
                continue
            seg += 1
            key = int(region[lo])
            dcur = np.diff(c[lo:hi])
            if float(np.max(c[lo:hi]) - np.min(c[lo:hi])) == 0.0:
                flat += 1
                witness = witness or complex(z[lo])
                verdict = "flat"
            elif np.all(dcur > 0) or np.all(dcur < 0):
                mono += 1
                verdict = "monotone"
            else:
                mixed += 1
                verdict = "mixed"
            d = breakdown.setdefault(key, {"monotone": 0, "flat": 0, "mixed": 0})
            d[verdict] += 1
    return RayScanReport(
        segment_count=seg,
        monotone_segments=mono,
        flat_segments=flat,
        mixed_segments=mixed,
        witness=witness,
        region_breakdown=breakdown,
    )


def scan_b_threshold(alpha: float, a: float, b_candidates) -> float | None:
    """Smallest candidate cap for which c(0)/3 < integral of c over cell 2.

    Candidates at or below the admissibility threshold are skipped; returns
    None when no candidate passes.
    """
    for b in sorted(float(v) for v in b_candidates):
        try:
            model = sinr_cost(SinrParams(alpha, a, b))
        except InvalidParamsError:
            continue
        if quadrature.integral_t2(model, rel_tol=1e-8) > model.center_value / 3.0:
            return b
    return None
