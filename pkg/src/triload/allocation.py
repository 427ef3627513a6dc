"""Allocators for n points and three corner bins, plus load evaluation.

Four allocators are provided:

* greedy          -- each point to its own cell's bin (the benchmark);
* exact           -- global min-max load by branch and bound, small n only;
* fractional      -- the linear-programming relaxation, where a point may
                     be split across bins; its optimum has equal bin loads
                     and at most three fractional rows;
* boundary sweep  -- rotates the three inter-region boundary rays, moving
                     one point per step from the fullest to the emptiest
                     region, until the loads differ by at most twice the
                     sup of the cost.

The sweep allocator is the computable stand-in for the exact optimum at
large n: its load is within an O(1) band of the fractional bound.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from . import costs, geometry
from .errors import (
    LengthMismatchError,
    NonTerminationError,
    SolverStallError,
    TieDetectedError,
    TooLargeError,
)

LP_CAP_DEFAULT = 2000
EXACT_CAP_DEFAULT = 12
FRACTIONAL_ENTRY_TOL = 1e-10


@dataclass(eq=False)
class Instance:
    """n points strictly inside the triangle plus the cost model serving them."""

    points: np.ndarray
    model: costs.CostModel
    frame: geometry.TriangleFrame | None = None
    seed: int | None = None

    def __post_init__(self):
        if self.frame is None:
            self.frame = geometry.frame()
        self.points = np.asarray(self.points, dtype=complex)
        if self.points.ndim != 1 or self.points.size < 1:
            raise ValueError("an instance needs at least one point")
        for a, b in (
            (self.frame.b1, self.frame.b2),
            (self.frame.b2, self.frame.b3),
            (self.frame.b3, self.frame.b1),
        ):
            if not np.all(geometry.cross(b - a, self.points - a) > 0.0):
                raise ValueError("all points must lie strictly inside the triangle")

    @property
    def n(self) -> int:
        return self.points.size

    @cached_property
    def cost_matrix(self) -> np.ndarray:
        return costs.cost_matrix(self.model, self.points)

    @cached_property
    def cells(self) -> np.ndarray:
        return geometry.voronoi_cells(self.frame, self.points)

    @classmethod
    def sample(cls, model, n, seed=None, rng=None, frame=None):
        frame = frame or geometry.frame()
        rng = rng if rng is not None else np.random.default_rng(seed)
        return cls(points=geometry.sample_points(frame, rng, n), model=model,
                   frame=frame, seed=seed)

    def to_json(self) -> str:
        return json.dumps(
            {
                "seed": self.seed,
                "n": self.n,
                "model": self.model.label,
                "points": [[p.real, p.imag] for p in self.points],
            }
        )

    @classmethod
    def from_json(cls, text: str):
        doc = json.loads(text)
        pts = np.array([complex(x, y) for x, y in doc["points"]])
        if len(pts) != doc["n"]:
            raise ValueError("point list does not match the declared size")
        return cls(points=pts, model=costs.parse_model_spec(doc["model"]),
                   frame=geometry.frame(), seed=doc.get("seed"))


@dataclass(frozen=True)
class Assignment:
    bins: np.ndarray            # one bin index (1..3) per point

    def __post_init__(self):
        object.__setattr__(self, "bins", np.asarray(self.bins, dtype=np.int8))


@dataclass(frozen=True)
class LoadTriple:
    load1: float
    load2: float
    load3: float

    @property
    def rho(self) -> float:
        return max(self.load1, self.load2, self.load3)

    @property
    def spread(self) -> float:
        return self.rho - min(self.load1, self.load2, self.load3)

    def as_array(self):
        return np.array([self.load1, self.load2, self.load3])


def _loads_from_bins(C, bins) -> LoadTriple:
    l = [float(C[bins == k, k - 1].sum()) for k in (1, 2, 3)]
    return LoadTriple(*l)


def load(instance: Instance, assignment: Assignment) -> LoadTriple:
    """Per-bin loads and their maximum for an integer assignment."""
    if assignment.bins.size != instance.n:
        raise LengthMismatchError(
            f"assignment has {assignment.bins.size} rows for {instance.n} points"
        )
    return _loads_from_bins(instance.cost_matrix, assignment.bins)


def allocate_greedy(instance: Instance) -> Assignment:
    """Each point to the bin of its own cell (its cheapest bin under the model contract)."""
    return Assignment(bins=instance.cells.copy())


def allocate_exact(instance: Instance, cap: int = EXACT_CAP_DEFAULT):
    """Global minimizer of the max bin load over all 3^n assignments.

    Depth-first search in point order with bins tried in index order, so
    the returned optimum is the lexicographically smallest one; pruned by
    the incumbent and by the one-third-of-total lower bound.
    """
    n = instance.n
    if n > cap:
        raise TooLargeError(f"exact search capped at n = {cap}, got {n}")
    C = instance.cost_matrix
    suffix_min = np.zeros(n + 1)
    suffix_min[:n] = np.cumsum(C.min(axis=1)[::-1])[::-1]

    best_rho = np.inf
    best_bins = None
    bins = np.zeros(n, dtype=np.int8)
    loads = [0.0, 0.0, 0.0]

    def recurse(k, cost_so_far):
        nonlocal best_rho, best_bins
        cur_max = max(loads)
        if cur_max >= best_rho or (cost_so_far + suffix_min[k]) / 3.0 >= best_rho:
            return
        if k == n:
            best_rho = cur_max
            best_bins = bins.copy()
            return
        for l in range(3):
            loads[l] += C[k, l]
            bins[k] = l + 1
            recurse(k + 1, cost_so_far + C[k, l])
            loads[l] -= C[k, l]
        bins[k] = 0

    recurse(0, 0.0)
    assignment = Assignment(bins=best_bins)
    return assignment, _loads_from_bins(C, assignment.bins)


@dataclass(frozen=True)
class FractionalAssignment:
    rows: np.ndarray            # (n, 3) row-stochastic split of each point
    objective: float            # optimal fractional max load

    def loads(self, C) -> np.ndarray:
        return np.einsum("kl,kl->l", self.rows, C)

    def fractional_rows(self, tol: float = FRACTIONAL_ENTRY_TOL) -> np.ndarray:
        frac = (self.rows > tol) & (self.rows < 1.0 - tol)
        return np.flatnonzero(frac.any(axis=1))


def solve_fractional(instance: Instance, cap: int = LP_CAP_DEFAULT) -> FractionalAssignment:
    """Linear-programming relaxation: minimize t subject to every bin load <= t.

    The optimum equalizes the three bin loads and leaves at most three
    points fractionally split.
    """
    n = instance.n
    if n > cap:
        raise TooLargeError(f"fractional solve capped at n = {cap}, got {n}")
    C = instance.cost_matrix
    nv = 3 * n + 1

    cost_vec = np.zeros(nv)
    cost_vec[-1] = 1.0
    rows = np.repeat(np.arange(n), 3)
    cols = np.arange(3 * n)
    a_eq = sparse.csr_matrix((np.ones(3 * n), (rows, cols)), shape=(n, nv))
    b_eq = np.ones(n)
    data = np.concatenate([C.T.ravel(), -np.ones(3)])
    r_ub = np.concatenate([np.repeat(np.arange(3), n), np.arange(3)])
    c_ub = np.concatenate(
        [np.concatenate([3 * np.arange(n) + l for l in range(3)]), np.full(3, nv - 1)]
    )
    a_ub = sparse.csr_matrix((data, (r_ub, c_ub)), shape=(3, nv))
    bounds = [(0.0, 1.0)] * (3 * n) + [(0.0, None)]

    res = linprog(
        cost_vec,
        A_ub=a_ub,
        b_ub=np.zeros(3),
        A_eq=a_eq,
        b_eq=b_eq,
        bounds=bounds,
        method="highs",
        options={
            "presolve": True,
            "primal_feasibility_tolerance": 1e-10,
            "dual_feasibility_tolerance": 1e-10,
        },
    )
    if not res.success:
        raise SolverStallError(f"relaxation solver failed: {res.message}")
    rows_b = np.clip(res.x[: 3 * n].reshape(n, 3), 0.0, 1.0)
    rows_b /= rows_b.sum(axis=1, keepdims=True)
    loads = np.einsum("kl,kl->l", rows_b, C)
    return FractionalAssignment(rows=rows_b, objective=float(loads.max()))


def round_fractional(instance: Instance, frac: FractionalAssignment) -> Assignment:
    """Integer rows copied; each fractional point goes to its cheapest bin.

    At most three rows are fractional at the optimum, so the rounded max
    load exceeds the fractional optimum by at most 3 * sup_norm.
    """
    C = instance.cost_matrix
    bins = np.argmax(frac.rows, axis=1) + 1
    for k in frac.fractional_rows():
        bins[k] = int(np.argmin(C[k])) + 1
    return Assignment(bins=bins.astype(np.int8))


# --- the boundary-sweep allocator -------------------------------------------

# (min region, max region) -> (shift component index, sweep direction)
_SWEEP_TABLE = {
    (1, 2): (0, +1),
    (2, 1): (0, -1),
    (2, 3): (1, +1),
    (3, 2): (1, -1),
    (3, 1): (2, +1),
    (1, 3): (2, -1),
}

_BOUNDARY_PAIRS = ((1, 2), (2, 3), (3, 1))


@dataclass(frozen=True)
class RecursionStep:
    donor: int                  # region whose load was largest (loses the point)
    receiver: int               # region whose load was smallest (gains the point)
    moved: int                  # index of the transferred point
    shift: geometry.ConeShift   # shift vector after the step


@dataclass(frozen=True)
class RecursionTrace:
    steps: tuple
    final_shift: geometry.ConeShift

    @property
    def step_count(self) -> int:
        return len(self.steps)


def allocate_recursive(instance: Instance):
    """Boundary-sweep allocation equalizing region loads one point at a time.

    Starting from the zero shift (regions = cells), each step moves the
    boundary ray shared by the currently lightest and heaviest regions just
    far enough to transfer exactly one point, and stops once the load
    spread is at most 2 * sup_norm.  Terminates in at most n steps.

    Returns (assignment, loads, trace).
    """
    fr = instance.frame
    z = instance.points
    C = instance.cost_matrix
    n = instance.n
    sup = instance.model.sup_norm

    tau = np.stack(
        [geometry.sweep_params(fr, l, m, z) for l, m in _BOUNDARY_PAIRS], axis=1
    )
    t = np.zeros(3)
    region = geometry.cone_regions(fr, t, z)
    loads = np.array([C[region == k, k - 1].sum() for k in (1, 2, 3)])
    steps = []

    for _ in range(n + 1):
        m = int(np.argmin(loads)) + 1
        big = int(np.argmax(loads)) + 1
        if loads[big - 1] - loads[m - 1] <= 2.0 * sup:
            assignment = Assignment(bins=region)
            final = _loads_from_bins(C, assignment.bins)
            return assignment, final, RecursionTrace(
                steps=tuple(steps), final_shift=geometry.ConeShift(*t)
            )
        comp, direction = _SWEEP_TABLE[(m, big)]
        mask = region == big
        cand_tau = np.where(mask, tau[:, comp], np.nan)
        if not np.any(np.isfinite(cand_tau)):
            raise NonTerminationError(
                "no crossing parameter available in the donor region",
                trace=RecursionTrace(tuple(steps), geometry.ConeShift(*t)),
            )
        if direction > 0:
            cand = int(np.nanargmin(cand_tau))
            t[comp] = max(float(cand_tau[cand]), t[comp])
        else:
            cand = int(np.nanargmax(cand_tau))
            t[comp] = min(float(cand_tau[cand]), t[comp])
        # advance in escalating arc-length quanta until the crossing point
        # actually switches side; quanta are relative to the sweep scale, not
        # to t itself, which may be denormally small
        step = float(np.spacing(fr.side))
        for _nudge in range(64):
            new_region = geometry.cone_regions(fr, t, z[cand : cand + 1])[0]
            if new_region != big:
                break
            t[comp] += step if direction > 0 else -step
            step *= 2.0
        region_new = geometry.cone_regions(fr, t, z)
        changed = np.flatnonzero(region_new != region)
        if changed.size != 1 or changed[0] != cand or region_new[cand] != m:
            raise NonTerminationError(
                f"sweep step moved points {changed.tolist()} instead of exactly "
                f"point {cand} from region {big} to region {m}",
                trace=RecursionTrace(tuple(steps), geometry.ConeShift(*t)),
            )
        loads[big - 1] -= C[cand, big - 1]
        loads[m - 1] += C[cand, m - 1]
        region = region_new
        steps.append(
            RecursionStep(donor=big, receiver=m, moved=cand,
                          shift=geometry.ConeShift(*t))
        )
    raise NonTerminationError(
        f"sweep did not terminate within {n} steps",
        trace=RecursionTrace(tuple(steps), geometry.ConeShift(*t)),
    )


def bridge_statistic(instance: Instance, gamma: float) -> np.ndarray:
    """Centered, sqrt(n)-scaled greedy bin loads (w1, w2, w3).

    w_l = (sum of own-cell costs in cell l - n * gamma) / sqrt(n).  These
    are exactly the greedy loads recentred by the mean load constant.
    """
    C = instance.cost_matrix
    cells = instance.cells
    n = instance.n
    return np.array(
        [(C[cells == l, l - 1].sum() - n * gamma) / np.sqrt(n) for l in (1, 2, 3)]
    )


def marked_greedy(points, marks, marked_cost) -> Assignment:
    """Greedy allocation when costs carry per-object random marks.

    marked_cost(z, m) evaluates the base cost at points z with mark triples
    m (shape (n, 3)); the three bin costs permute the marks cyclically the
    same way the positions rotate.
    """
    z = np.asarray(points, dtype=complex)
    marks = np.asarray(marks, dtype=float)
    if marks.shape != (z.size, 3):
        raise LengthMismatchError("marks must have shape (n, 3)")
    c = np.stack(
        [
            np.asarray(marked_cost(z, marks), dtype=float),
            np.asarray(marked_cost(geometry.J2 * z, marks[:, [1, 2, 0]]), dtype=float),
            np.asarray(marked_cost(geometry.J * z, marks[:, [2, 0, 1]]), dtype=float),
        ],
        axis=1,
    )
    part = np.sort(c, axis=1)
    ties = np.flatnonzero(part[:, 0] == part[:, 1])
    if ties.size:
        raise TieDetectedError(f"exactly equal costs at point indices {ties.tolist()}")
    return Assignment(bins=(np.argmin(c, axis=1) + 1).astype(np.int8))


def marked_load(points, marks, marked_cost, assignment: Assignment) -> LoadTriple:
    z = np.asarray(points, dtype=complex)
    marks = np.asarray(marks, dtype=float)
    c = np.stack(
        [
            np.asarray(marked_cost(z, marks), dtype=float),
            np.asarray(marked_cost(geometry.J2 * z, marks[:, [1, 2, 0]]), dtype=float),
            np.asarray(marked_cost(geometry.J * z, marks[:, [2, 0, 1]]), dtype=float),
        ],
        axis=1,
    )
    return _loads_from_bins(c, assignment.bins)


def faded_sinr(params: costs.SinrParams):
    """Marked variant of the inverse-SINR cost: marks scale the path gains."""
    alpha, a, b = params.alpha, params.a, params.b
    fr = geometry.frame()

    def capped(g, r):
        with np.errstate(divide="ignore"):
            return np.minimum(b, g * r ** (-alpha))

    def fn(z, m):
        z = np.asarray(z, dtype=complex)
        num = a + capped(m[:, 1], np.abs(z - fr.b2)) + capped(m[:, 2], np.abs(z - fr.b3))
        return num / capped(m[:, 0], np.abs(z - fr.b1))

    return fn
