"""Adaptive integration of cost functionals over the cell polygons.

A fixed symmetric 7-point interior rule (degree 5) is applied per triangle;
triangles are bisected along their longest edge until the two-level
estimate difference meets the tolerance, allocated per unit area.  All
array reductions happen in a fixed order, so results are deterministic.
Exponential integrands are evaluated in shifted form so that tilt
parameters far beyond the overflow guard remain usable through the
log-moment accessors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import BudgetExceededError, OverflowGuardError

# degree-5 rule: centroid + two symmetric orbits (weights sum to 1)
_SQ15 = math.sqrt(15.0)
_BETA1 = (6.0 + _SQ15) / 21.0
_BETA2 = (6.0 - _SQ15) / 21.0
_W0 = 9.0 / 40.0
_W1 = (155.0 + _SQ15) / 1200.0
_W2 = (155.0 - _SQ15) / 1200.0

_BARY = np.array(
    [[1 / 3, 1 / 3, 1 / 3]]
    + [np.roll([1.0 - 2.0 * _BETA1, _BETA1, _BETA1], k) for k in range(3)]
    + [np.roll([1.0 - 2.0 * _BETA2, _BETA2, _BETA2], k) for k in range(3)]
)
_WEIGHTS = np.array([_W0, _W1, _W1, _W1, _W2, _W2, _W2])

OVERFLOW_GUARD = 700.0
DEFAULT_ABS_TOL = 1e-10
DEFAULT_REL_TOL = 1e-8
DEFAULT_MAX_TRIANGLES = 1_000_000


@dataclass(frozen=True)
class IntegrationResult:
    value: float
    error_estimate: float
    cells_used: int


@dataclass(frozen=True)
class MomentSet:
    """Exponential moments over cell 1: m0=int e^{t c}, m1=int c e^{t c}, m2=int c^2 e^{t c}."""

    m0: float
    m1: float
    m2: float
    theta: float


@dataclass(frozen=True)
class ExpMomentStats:
    """Overflow-safe form of the exponential moments.

    log_m0 is log(int_{cell 1} e^{theta c}); ratio1 = m1/m0 and
    ratio2 = m2/m0 are the tilted mean and second moment of the cost.
    """

    log_m0: float
    ratio1: float
    ratio2: float
    theta: float


def _rule_values(tris, f):
    """Rule estimates for a stack of triangles, shape (N, 3) complex vertices."""
    pts = tris @ _BARY.T.astype(float)          # (N, 7) complex
    vals = np.asarray(f(pts.ravel()), dtype=float).reshape(pts.shape)
    areas = 0.5 * np.abs(geometry.cross(tris[:, 1] - tris[:, 0], tris[:, 2] - tris[:, 0]))
    return areas * (vals @ _WEIGHTS), areas


def _bisect_longest(tris, anchors=()):
    """Split each triangle at the midpoint of its longest admissible edge.

    Anchor points that sit on a triangle vertex must end up in exactly one
    child, otherwise a spike pinned at that vertex doubles its covering
    triangles every level.  Edges not touching an anchored vertex are
    excluded from the choice (unless the edge joins two anchors, which
    separates them).
    """
    n = tris.shape[0]
    e = np.stack(
        [
            np.abs(tris[:, 1] - tris[:, 0]),
            np.abs(tris[:, 2] - tris[:, 1]),
            np.abs(tris[:, 0] - tris[:, 2]),
        ],
        axis=1,
    )
    if len(anchors):
        hit = np.zeros((n, 3), dtype=bool)
        for p in anchors:
            hit |= tris == p
        # splitting edge (k, k+1) keeps the opposite vertex (k+2) in both
        # children, so edges opposite an anchored vertex are excluded
        edge_ok = ~hit[:, [2, 0, 1]]
        edge_ok[~edge_ok.any(axis=1)] = True
        e = np.where(edge_ok, e, -1.0)
    k = np.argmax(e, axis=1)
    i0 = k                      # edge (k, k+1) is split
    i1 = (k + 1) % 3
    rows = np.arange(n)
    a = tris[rows, i0]
    b = tris[rows, i1]
    c = tris[rows, (k + 2) % 3]
    m = 0.5 * (a + b)
    child1 = np.stack([a, m, c], axis=1)
    child2 = np.stack([m, b, c], axis=1)
    return child1, child2


def _contains(tris, point, pad=1e-12):
    """Mask of triangles containing the point (closed, orientation-free)."""
    s1 = geometry.cross(tris[:, 1] - tris[:, 0], point - tris[:, 0])
    s2 = geometry.cross(tris[:, 2] - tris[:, 1], point - tris[:, 1])
    s3 = geometry.cross(tris[:, 0] - tris[:, 2], point - tris[:, 2])
    eps = pad * geometry.SIDE**2
    inside_pos = (s1 >= -eps) & (s2 >= -eps) & (s3 >= -eps)
    inside_neg = (s1 <= eps) & (s2 <= eps) & (s3 <= eps)
    return inside_pos | inside_neg


def _longest_edge(tris):
    return np.max(
        [
            np.abs(tris[:, 1] - tris[:, 0]),
            np.abs(tris[:, 2] - tris[:, 1]),
            np.abs(tris[:, 0] - tris[:, 2]),
        ],
        axis=0,
    )


def _fan_triangulate(vertices):
    verts = np.asarray(vertices, dtype=complex)
    if verts.size < 3:
        raise ValueError("polygon needs at least three vertices")
    tris = [
        np.array([verts[0], verts[i], verts[i + 1]]) for i in range(1, verts.size - 1)
    ]
    return np.stack(tris)


def _circle_edge_hits(a, b, center, radius):
    """Parameters t in (0,1) where segment a->b crosses the circle."""
    d = b - a
    f = a - center
    qa = (d * d.conjugate()).real
    qb = 2.0 * (f * d.conjugate()).real
    qc = (f * f.conjugate()).real - radius * radius
    disc = qb * qb - 4.0 * qa * qc
    if disc <= 0.0 or qa == 0.0:
        return []
    r = math.sqrt(disc)
    out = []
    for t in ((-qb - r) / (2.0 * qa), (-qb + r) / (2.0 * qa)):
        if 1e-9 < t < 1.0 - 1e-9:
            out.append(t)
    return out


def _insert_circle_chords(tris, circles):
    """Split triangles along the chords of the kink circles they straddle.

    Only the clean two-edge crossing is handled; anything else is left to
    adaptive refinement.
    """
    for center, radius in circles:
        out = []
        for tri in tris:
            hits = []
            for k in range(3):
                a, b = tri[k], tri[(k + 1) % 3]
                for t in _circle_edge_hits(a, b, center, radius):
                    hits.append((k, a + t * (b - a)))
            edges = {k for k, _ in hits}
            if len(hits) != 2 or len(edges) != 2:
                out.append(tri)
                continue
            (k1, p1), (k2, p2) = hits
            if (k2 - k1) % 3 == 2:      # make the two cut edges consecutive
                k1, p1, k2, p2 = k2, p2, k1, p1
            shared = tri[(k1 + 1) % 3]   # vertex between the two cut edges
            other1 = tri[k1]
            other2 = tri[(k2 + 1) % 3]
            out.append(np.array([shared, p2, p1]))
            out.append(np.array([p1, p2, other2]))
            out.append(np.array([p1, other2, other1]))
        tris = np.stack(out)
    return tris


def integrate_triangles(
    f,
    tris,
    abs_tol=DEFAULT_ABS_TOL,
    rel_tol=DEFAULT_REL_TOL,
    max_triangles=DEFAULT_MAX_TRIANGLES,
    forced_points=(),
    forced_scale=math.inf,
) -> IntegrationResult:
    """Adaptive integral of f over a stack of triangles.

    forced_points/forced_scale pre-split every triangle containing a listed
    point until its longest edge drops below forced_scale; this pins down
    sharply peaked integrands whose peak location is known, which the
    two-level error estimate alone can miss on coarse meshes.
    """
    tris = np.asarray(tris, dtype=complex)
    processed = tris.shape[0]

    if forced_points and math.isfinite(forced_scale):
        for _ in range(128):
            need = np.zeros(tris.shape[0], dtype=bool)
            long_enough = _longest_edge(tris) > forced_scale
            for p in forced_points:
                need |= _contains(tris, p) & long_enough
            if not need.any():
                break
            c1, c2 = _bisect_longest(tris[need], forced_points)
            tris = np.concatenate([tris[~need], c1, c2])
            processed += int(2 * need.sum())
            if processed > max_triangles:
                raise BudgetExceededError(
                    f"forced refinement exceeded {max_triangles} triangles"
                )

    q_parent, areas = _rule_values(tris, f)
    total_area = float(np.sum(areas))
    coarse = float(np.sum(q_parent))
    tol_total = max(abs_tol, rel_tol * abs(coarse))
    # error budget split half by area share, half by contribution share, so
    # integrands concentrated on a tiny patch still get a usable allowance
    scale = max(abs(coarse), 1e-300)

    value = 0.0
    err_total = 0.0
    cells = 0
    while tris.shape[0]:
        c1, c2 = _bisect_longest(tris, forced_points)
        q1, _ = _rule_values(c1, f)
        q2, _ = _rule_values(c2, f)
        refined = q1 + q2
        err = np.abs(q_parent - refined)
        processed += 2 * tris.shape[0]
        if processed > max_triangles:
            raise BudgetExceededError(
                f"subdivision budget of {max_triangles} triangles exceeded"
            )
        share = 0.5 * (areas / total_area) + 0.5 * (np.abs(refined) / scale)
        # absolute floor: once a triangle's error is negligible against the
        # whole budget it is accepted regardless of its vanishing area share
        np.maximum(share, 1.0 / (8.0 * max_triangles), out=share)
        ok = err <= tol_total * share
        value += float(np.sum(refined[ok]))
        err_total += float(np.sum(err[ok]))
        cells += int(2 * np.count_nonzero(ok))
        keep = ~ok
        tris = np.concatenate([c1[keep], c2[keep]])
        q_parent = np.concatenate([q1[keep], q2[keep]])
        areas_child = 0.5 * areas[keep]
        areas = np.concatenate([areas_child, areas_child])
    return IntegrationResult(value=value, error_estimate=err_total, cells_used=cells)


def integrate_polygon(
    f,
    vertices,
    abs_tol=DEFAULT_ABS_TOL,
    rel_tol=DEFAULT_REL_TOL,
    max_triangles=DEFAULT_MAX_TRIANGLES,
    kink_circles=(),
    forced_points=(),
    forced_scale=math.inf,
) -> IntegrationResult:
    """Adaptive integral of a vectorized integrand over a simple polygon."""
    tris = _fan_triangulate(vertices)
    if kink_circles:
        tris = _insert_circle_chords(tris, kink_circles)
    return integrate_triangles(
        f,
        tris,
        abs_tol=abs_tol,
        rel_tol=rel_tol,
        max_triangles=max_triangles,
        forced_points=forced_points,
        forced_scale=forced_scale,
    )


def _cell_args(model, fr):
    return dict(kink_circles=getattr(model, "kink_circles", ()) or ())


def gamma(model, fr=None, abs_tol=1e-10, rel_tol=1e-10) -> float:
    """Mean cost over cell 1 (the law-of-large-numbers constant)."""
    fr = fr or geometry.frame()
    res = integrate_polygon(
        model, geometry.cell_polygon(fr, 1), abs_tol=abs_tol, rel_tol=rel_tol,
        **_cell_args(model, fr),
    )
    return res.value


def sigma2(model, fr=None, abs_tol=1e-10, rel_tol=1e-10) -> float:
    """Second moment of the cost over cell 1."""
    fr = fr or geometry.frame()
    res = integrate_polygon(
        lambda z: np.asarray(model(z)) ** 2,
        geometry.cell_polygon(fr, 1),
        abs_tol=abs_tol,
        rel_tol=rel_tol,
        **_cell_args(model, fr),
    )
    return res.value


def integral_t2(model, fr=None, abs_tol=1e-10, rel_tol=1e-10) -> float:
    """Integral of the (unrotated) cost over cell 2."""
    fr = fr or geometry.frame()
    res = integrate_polygon(
        model, geometry.cell_polygon(fr, 2), abs_tol=abs_tol, rel_tol=rel_tol,
        **_cell_args(model, fr),
    )
    return res.value


def _exp_integrals(model, theta, fr, rel_tol):
    """Shifted integrals (I0, I1, I2) of (1, c, c^2) * e^{theta(c - shift)} over cell 1."""
    fr = fr or geometry.frame()
    shift = model.center_value if theta > 0 else model.vertex_value
    lip = 4.0 * max(model.center_value - model.vertex_value, 1e-30) / fr.lam
    scale = 30.0 / (max(abs(theta), 1.0) * lip)
    forced = (0j, fr.b1) if abs(theta) * lip * fr.side > 30.0 else ()
    kw = dict(
        abs_tol=0.0,
        rel_tol=rel_tol,
        forced_points=forced,
        forced_scale=scale,
        **_cell_args(model, fr),
    )
    poly = geometry.cell_polygon(fr, 1)

    def weighted(power):
        def f(z):
            c = np.asarray(model(z), dtype=float)
            w = np.exp(theta * (c - shift))
            return w if power == 0 else (c**power) * w

        return f

    i0 = integrate_polygon(weighted(0), poly, **kw).value
    i1 = integrate_polygon(weighted(1), poly, **kw).value
    i2 = integrate_polygon(weighted(2), poly, **kw).value
    return i0, i1, i2, theta * shift


def exp_moment_stats(model, theta, fr=None, rel_tol=1e-10) -> ExpMomentStats:
    """Overflow-safe exponential moments of the cost over cell 1."""
    i0, i1, i2, log_shift = _exp_integrals(model, float(theta), fr, rel_tol)
    return ExpMomentStats(
        log_m0=math.log(i0) + log_shift,
        ratio1=i1 / i0,
        ratio2=i2 / i0,
        theta=float(theta),
    )


def moments(model, theta, fr=None, rel_tol=1e-10) -> MomentSet:
    """Absolute exponential moments; guarded so e^{theta c} stays representable."""
    theta = float(theta)
    if abs(theta) * model.sup_norm > OVERFLOW_GUARD:
        raise OverflowGuardError(
            f"|theta|*sup_norm = {abs(theta) * model.sup_norm:.3g} exceeds {OVERFLOW_GUARD}"
        )
    i0, i1, i2, log_shift = _exp_integrals(model, theta, fr, rel_tol)
    s = math.exp(log_shift)
    return MomentSet(m0=i0 * s, m1=i1 * s, m2=i2 * s, theta=theta)
