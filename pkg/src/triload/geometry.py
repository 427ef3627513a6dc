"""Exact geometry of the unit-area equilateral triangle with corner bins.

The plane is identified with the complex numbers.  The triangle has
vertices ``B2 = LAMBDA*1j``, ``B1 = J**2 * B2`` and ``B3 = J * B2`` with
``LAMBDA = 2/(3*sqrt(3))**0.5``, giving side length ``LAMBDA*sqrt(3)`` and
area exactly 1.  All classification routines use exact sign tests on cross
products (zero tolerance): uniform samples are almost surely off the
boundary rays, and half-open tie rules make classification total.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegenerateConeError, OutOfRangeError, OutsideTriangleError

LAMBDA = 2.0 / math.sqrt(3.0 * math.sqrt(3.0))
SIDE = LAMBDA * math.sqrt(3.0)
J = complex(-0.5, math.sqrt(3.0) / 2.0)   # exp(2i*pi/3)
J2 = J * J

# slack for "is the point inside the closed triangle" checks only;
# cell/cone classification itself uses exact signs
_EDGE_TOL = 1e-9


def cross(a, b):
    """z-component of the planar cross product a x b (works on arrays)."""
    return np.real(a) * np.imag(b) - np.imag(a) * np.real(b)


def dot(a, b):
    return np.real(a) * np.real(b) + np.imag(a) * np.imag(b)


@dataclass(frozen=True)
class TriangleFrame:
    lam: float
    b1: complex
    b2: complex
    b3: complex
    side: float

    def vertices(self):
        return (self.b1, self.b2, self.b3)

    def vertex(self, l: int) -> complex:
        return self.vertices()[l - 1]

    def midpoint(self, l: int, m: int) -> complex:
        return 0.5 * (self.vertex(l) + self.vertex(m))


@lru_cache(maxsize=1)
def frame() -> TriangleFrame:
    """The fixed triangle frame (deterministic singleton)."""
    b2 = LAMBDA * 1j
    return TriangleFrame(lam=LAMBDA, b1=J2 * b2, b2=b2, b3=J * b2, side=SIDE)


def polygon_area(points) -> float:
    """Unsigned shoelace area of a polygon given as complex vertices."""
    pts = np.asarray(points, dtype=complex)
    nxt = np.roll(pts, -1)
    return abs(0.5 * np.sum(cross(pts, nxt)))


def in_triangle(fr: TriangleFrame, z, tol: float = _EDGE_TOL):
    """True where z lies in the closed triangle (within tol of the edges)."""
    z = np.asarray(z, dtype=complex)
    ok = np.ones(z.shape, dtype=bool)
    for a, b in ((fr.b1, fr.b2), (fr.b2, fr.b3), (fr.b3, fr.b1)):
        ok &= cross(b - a, z - a) >= -tol * fr.side
    return ok


def _require_inside(fr, p):
    if not np.all(in_triangle(fr, p)):
        raise OutsideTriangleError(f"point {p!r} lies outside the closed triangle")


def voronoi_cells(fr: TriangleFrame, z) -> np.ndarray:
    """Vectorized cell index (1, 2 or 3) for points of the closed triangle.

    Half-open convention: the bisector ray at angle pi/6 belongs to cell 2,
    the one at 5*pi/6 to cell 3, the one at 3*pi/2 to cell 1, and the
    origin to cell 1.
    """
    z = np.asarray(z, dtype=complex)
    d1 = fr.midpoint(1, 2)
    d2 = fr.midpoint(2, 3)
    d3 = fr.midpoint(3, 1)
    s1 = cross(d1, z)
    s2 = cross(d2, z)
    s3 = cross(d3, z)
    cell = np.select(
        [(s3 >= 0.0) & (s1 < 0.0), (s1 >= 0.0) & (s2 < 0.0), (s2 >= 0.0) & (s3 < 0.0)],
        [1, 2, 3],
        default=0,
    ).astype(np.int8)
    cell[z == 0] = 1
    if np.any(cell == 0):
        raise RuntimeError("cell classification failed; this should be unreachable")
    return cell


def voronoi_cell(fr: TriangleFrame, p) -> int:
    """Cell index of a single point; raises OutsideTriangleError off the triangle."""
    _require_inside(fr, p)
    return int(voronoi_cells(fr, np.asarray([p], dtype=complex))[0])


def cell_polygon(fr: TriangleFrame, l: int):
    """The kite (0, M_{l,next}, B_l, M_{prev,l}) of cell l; area exactly 1/3."""
    if l not in (1, 2, 3):
        raise OutOfRangeError(f"cell index must be 1, 2 or 3, got {l}")
    nxt = 1 + (l % 3)
    prv = 1 + ((l + 1) % 3)
    return (0j, fr.midpoint(l, nxt), fr.vertex(l), fr.midpoint(prv, l))


# --- boundary sweep --------------------------------------------------------
#
# edge_point(l, m, t) walks the triangle perimeter: for t in
# [-side/2, side/2] it is the point of segment B_l B_m at distance
# t + side/2 from B_l; outside that range it continues along the adjacent
# edges (continuous arclength extension, covering [-side, side]).

_VERTEX_ARC = {1: 0.0, 2: 1.0, 3: 2.0}   # perimeter coordinate of B_l in units of side


def edge_point(fr: TriangleFrame, l: int, m: int, t: float) -> complex:
    if l == m or l not in (1, 2, 3) or m not in (1, 2, 3):
        raise OutOfRangeError(f"need two distinct cell indices, got ({l}, {m})")
    if not abs(t) <= fr.side * (1 + 1e-12):
        raise OutOfRangeError(f"sweep parameter {t} outside [-side, side]")
    forward = (m - l) % 3 == 1
    # arclength from B_1 along B1->B2->B3->B1, in units of side
    s = _VERTEX_ARC[l] + (t + fr.side / 2.0) / fr.side * (1.0 if forward else -1.0)
    s %= 3.0
    k = min(int(s), 2)
    verts = fr.vertices()
    a = verts[k]
    b = verts[(k + 1) % 3]
    return a + (s - k) * (b - a)


def sweep_params(fr: TriangleFrame, l: int, m: int, z) -> np.ndarray:
    """Inverse of edge_point along rays from the origin.

    For each point z (strictly inside, nonzero) returns the parameter t with
    edge_point(l, m, t) on the ray from 0 through z, or nan when the ray
    exits the perimeter outside the swept two-thirds.
    """
    if l == m or l not in (1, 2, 3) or m not in (1, 2, 3):
        raise OutOfRangeError(f"need two distinct cell indices, got ({l}, {m})")
    z = np.asarray(z, dtype=complex)
    verts = fr.vertices()
    s = np.full(z.shape, np.nan)
    taken = np.zeros(z.shape, dtype=bool)
    for k in range(3):
        a = verts[k]
        b = verts[(k + 1) % 3]
        denom = cross(z, a - b)
        with np.errstate(divide="ignore", invalid="ignore"):
            beta = cross(z, a) / denom
        q = a + beta * (b - a)
        valid = (
            ~taken
            & np.isfinite(beta)
            & (beta >= 0.0)
            & (beta < 1.0)
            & (dot(q, z) > 0.0)
        )
        s[valid] = k + beta[valid]
        taken |= valid
    forward = (m - l) % 3 == 1
    if forward:
        t = (s - _VERTEX_ARC[l]) * fr.side - fr.side / 2.0
    else:
        t = (_VERTEX_ARC[l] - s) * fr.side - fr.side / 2.0
    half_perim = 1.5 * fr.side
    t = np.mod(t + half_perim, 3.0 * fr.side) - half_perim
    t[np.abs(t) > fr.side] = np.nan
    return t


@dataclass(frozen=True)
class ConeShift:
    """Arclength shifts (t1, t2, t3) of the 1-2, 2-3 and 3-1 boundary rays."""

    t1: float
    t2: float
    t3: float

    def __post_init__(self):
        for v in (self.t1, self.t2, self.t3):
            if not abs(v) <= SIDE * (1 + 1e-12):
                raise OutOfRangeError(f"shift component {v} outside [-side, side]")

    def as_tuple(self):
        return (self.t1, self.t2, self.t3)


ZERO_SHIFT = ConeShift(0.0, 0.0, 0.0)

# boundary index -> the (l, m) pair whose shared ray it moves
_BOUNDARY_PAIR = {1: (1, 2), 2: (2, 3), 3: (3, 1)}


def shift_rays(fr: TriangleFrame, shift) -> tuple[complex, complex, complex]:
    t1, t2, t3 = shift.as_tuple() if isinstance(shift, ConeShift) else tuple(shift)
    return (
        edge_point(fr, 1, 2, t1),
        edge_point(fr, 2, 3, t2),
        edge_point(fr, 3, 1, t3),
    )


def cone_regions(fr: TriangleFrame, shift, z) -> np.ndarray:
    """Vectorized swept-region index (1, 2 or 3) under a cone shift.

    Region boundaries are the rays from the origin through the shifted
    edge points; each ray belongs to its own region (ray i to region i)
    and the origin to region 1.  With the shifts in their operating range
    the three regions partition the triangle.
    """
    z = np.asarray(z, dtype=complex)
    u1, u2, u3 = shift_rays(fr, shift)
    a1 = cross(u1, z)
    a2 = cross(u2, z)
    a3 = cross(u3, z)
    region = np.select(
        [(a1 <= 0.0) & (a3 > 0.0), (a1 > 0.0) & (a2 <= 0.0), (a2 > 0.0) & (a3 <= 0.0)],
        [1, 2, 3],
        default=0,
    ).astype(np.int8)
    region[z == 0] = 1
    if np.any(region == 0):
        raise DegenerateConeError(
            "shift puts the boundary rays out of circular order; no region claims a point"
        )
    return region


def cone_region(fr: TriangleFrame, shift, p) -> int:
    _require_inside(fr, p)
    return int(cone_regions(fr, shift, np.asarray([p], dtype=complex))[0])


def sliver_area(fr: TriangleFrame, s: float) -> float:
    """Area of the region swept from cell 1 into cell 2 by a shift of s.

    Equals the triangle (0, edge_point(1,2,0), edge_point(1,2,s)), which is
    lam*s/4 exactly for 0 <= s <= side/2.
    """
    if not 0.0 <= s <= fr.side / 2.0 + 1e-12:
        raise OutOfRangeError(f"sliver parameter {s} outside [0, side/2]")
    p1 = edge_point(fr, 1, 2, 0.0)
    p2 = edge_point(fr, 1, 2, s)
    return abs(0.5 * cross(p1, p2))


def sample_points(fr: TriangleFrame, rng: np.random.Generator, n: int) -> np.ndarray:
    """n points uniform on the triangle (affine map of two uniforms with fold)."""
    u = rng.random(n)
    v = rng.random(n)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    return fr.b1 + u * (fr.b2 - fr.b1) + v * (fr.b3 - fr.b1)


def sample_point(fr: TriangleFrame, rng: np.random.Generator) -> complex:
    return complex(sample_points(fr, rng, 1)[0])


def reflect_axis1(p):
    """Reflection across the line through 0 and B1 (an involution of the triangle)."""
    return np.conjugate(p) * complex(0.5, -math.sqrt(3.0) / 2.0)   # conj(p) * exp(-i*pi/3)


def ray_exit_distance(fr: TriangleFrame, origin, direction) -> float:
    """Distance from origin to the triangle boundary along direction (unit-free)."""
    direction = complex(direction)
    best = math.inf
    for a, b in ((fr.b1, fr.b2), (fr.b2, fr.b3), (fr.b3, fr.b1)):
        denom = cross(direction, a - b)
        if denom == 0.0:
            continue
        beta = cross(direction, a - origin) / denom
        if not 0.0 <= beta <= 1.0:
            continue
        q = a + beta * (b - a)
        alpha = dot(q - origin, direction) / dot(direction, direction)
        if alpha > 1e-15:
            best = min(best, alpha * abs(direction))
    if not math.isfinite(best):
        raise OutsideTriangleError("ray does not exit through the boundary")
    return best
