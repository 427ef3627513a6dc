"""Decay-rate functions, limit-law parameters and tilted sampling.

The scaled log-moment generating functions of the cost over cell 1 are

    lmgf(t)     = log(3 * int_{cell 1} e^{t c}),
    lmgf_bar(t) = log(int_{cell 1} e^{t c} + 2/3),

and the tail decay rates of the optimal and greedy per-point loads are
their convex conjugates: rate_optimal(y) = lmgf*(3y) on
(c(B1)/3, c(0)/3), and rate_greedy(y) = lmgf*(3y) up to the mean load
constant, switching to lmgf_bar*(y) on (gamma, c(0)).  Conjugates are
computed by solving the stationarity condition with a safeguarded Newton
iteration inside an expanding bracket.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import ndtr

from . import geometry, quadrature
from .errors import (
    BracketCapReachedError,
    EnvelopeError,
    OutOfDomainError,
    SolverStallError,
)

BRACKET_CAP = 1e4
RESIDUAL_TOL = 1e-12


@dataclass(frozen=True)
class CltParams:
    gamma: float
    sigma2: float

    @property
    def var_opt(self) -> float:
        """Limit variance of the centred, sqrt(n)-scaled optimal load."""
        return self.sigma2 / 3.0 - self.gamma**2

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)

    @property
    def m(self) -> float:
        """Mean of the max of three independent N(0, sigma2) draws."""
        return self.sigma * _max3_gaussian_mean()


@lru_cache(maxsize=1)
def _max3_gaussian_mean() -> float:
    # E[max of three standard normals] = 3 * int x phi(x) Phi(x)^2 dx,
    # by 200-node Gauss-Hermite quadrature (no closed form assumed)
    nodes, weights = np.polynomial.hermite.hermgauss(200)
    x = math.sqrt(2.0) * nodes
    vals = x * ndtr(x) ** 2
    return float(3.0 / math.sqrt(math.pi) * np.sum(weights * vals))


class RateEvaluator:
    """Caches the per-model constants behind the rate-function operations."""

    def __init__(self, model, fr=None, bracket_cap=BRACKET_CAP,
                 residual_tol=RESIDUAL_TOL, quad_rel_tol=1e-10):
        self.model = model
        self.frame = fr or geometry.frame()
        self.bracket_cap = bracket_cap
        self.residual_tol = residual_tol
        self.quad_rel_tol = quad_rel_tol
        self.c0 = model.center_value
        self.cb1 = model.vertex_value
        self.gamma = quadrature.gamma(model, self.frame)
        self._stats_cache = {}

    def _stats(self, theta):
        key = float(theta)
        if key not in self._stats_cache:
            self._stats_cache[key] = quadrature.exp_moment_stats(
                self.model, key, self.frame, rel_tol=self.quad_rel_tol
            )
            if len(self._stats_cache) > 4096:
                self._stats_cache.clear()
        return self._stats_cache[key]

    # log-MGFs and their derivatives --------------------------------------
    def lmgf(self, theta) -> float:
        return math.log(3.0) + self._stats(theta).log_m0

    def lmgf_bar(self, theta) -> float:
        s = self._stats(theta)
        # log(m0 + 2/3) with m0 = e^{log_m0}, stable for large positive log_m0
        return np.logaddexp(s.log_m0, math.log(2.0 / 3.0))

    def lmgf_mean(self, theta) -> float:
        """Derivative of lmgf: the tilted mean cost, strictly increasing."""
        return self._stats(theta).ratio1

    def lmgf_var(self, theta) -> float:
        s = self._stats(theta)
        return max(s.ratio2 - s.ratio1**2, 0.0)

    def bar_mean(self, theta) -> float:
        # ratio1 * m0/(m0 + 2/3), stable for arbitrarily large log_m0
        s = self._stats(theta)
        inv = math.exp(-s.log_m0) if s.log_m0 > -700 else math.inf
        return s.ratio1 / (1.0 + (2.0 / 3.0) * inv) if math.isfinite(inv) else 0.0

    def bar_mean_derivative(self, theta) -> float:
        s = self._stats(theta)
        if s.log_m0 <= -700:
            return 0.0
        inv = math.exp(-s.log_m0)
        denom = 1.0 + (2.0 / 3.0) * inv
        return (s.ratio2 * denom - s.ratio1**2) / denom**2

    # stationarity solves ---------------------------------------------------
    def _solve_increasing(self, fun, dfun, y, what):
        lo, hi = -1.0, 1.0
        flo, fhi = fun(lo) - y, fun(hi) - y
        while flo > 0.0:
            lo *= 2.0
            if abs(lo) > self.bracket_cap:
                raise BracketCapReachedError(
                    f"{what}: bracket for target {y} exceeded |theta| = {self.bracket_cap}"
                )
            flo = fun(lo) - y
        while fhi < 0.0:
            hi *= 2.0
            if hi > self.bracket_cap:
                raise BracketCapReachedError(
                    f"{what}: bracket for target {y} exceeded |theta| = {self.bracket_cap}"
                )
            fhi = fun(hi) - y
        tol = self.residual_tol * max(1.0, self.c0)
        x = 0.5 * (lo + hi)
        fx = fun(x) - y
        for _ in range(200):
            if abs(fx) <= tol:
                return x
            if fx > 0.0:
                hi = x
            else:
                lo = x
            d = dfun(x)
            step = fx / d if d > 0.0 else math.inf
            x_newton = x - step
            x = x_newton if lo < x_newton < hi else 0.5 * (lo + hi)
            fx = fun(x) - y
        raise SolverStallError(f"{what}: no convergence for target {y}")

    def solve_theta(self, y) -> float:
        """Tilt with tilted mean cost y; unique for y in (c(B1), c(0))."""
        if not self.cb1 < y < self.c0:
            raise OutOfDomainError(
                f"target {y} outside the open interval ({self.cb1}, {self.c0})"
            )
        return self._solve_increasing(self.lmgf_mean, self.lmgf_var, y, "solve_theta")

    def solve_eta(self, y) -> float:
        """Root of the greedy-tail stationarity condition; 0 at y = gamma."""
        if not self.cb1 < y < self.c0:
            raise OutOfDomainError(
                f"target {y} outside the open interval ({self.cb1}, {self.c0})"
            )
        return self._solve_increasing(
            self.bar_mean, self.bar_mean_derivative, y, "solve_eta"
        )

    def conjugate(self, y) -> float:
        """Fenchel-Legendre transform of lmgf at y in (c(B1), c(0))."""
        th = self.solve_theta(y)
        return y * th - self.lmgf(th)

    def conjugate_bar(self, y) -> float:
        eta = self.solve_eta(y)
        return y * eta - self.lmgf_bar(eta)

    def rate_optimal(self, y) -> float:
        """Tail decay rate of the optimal per-point load at level y."""
        if not self.cb1 / 3.0 < y < self.c0 / 3.0:
            return math.inf
        return self.conjugate(3.0 * y)

    def rate_greedy(self, y) -> float:
        """Tail decay rate of the greedy per-point load at level y."""
        if not self.cb1 / 3.0 < y < self.c0:
            return math.inf
        if y <= self.gamma:
            return self.conjugate(3.0 * y)
        return self.conjugate_bar(y)


_EVALUATORS: dict = {}


def evaluator(model, fr=None) -> RateEvaluator:
    key = id(model)
    if key not in _EVALUATORS or _EVALUATORS[key].model is not model:
        _EVALUATORS[key] = RateEvaluator(model, fr)
    return _EVALUATORS[key]


def log_mgf(model, theta) -> float:
    return evaluator(model).lmgf(theta)


def log_mgf_bar(model, theta) -> float:
    return evaluator(model).lmgf_bar(theta)


def solve_theta(model, y) -> float:
    return evaluator(model).solve_theta(y)


def solve_eta(model, y) -> float:
    return evaluator(model).solve_eta(y)


def rate_optimal(model, y) -> float:
    return evaluator(model).rate_optimal(y)


def rate_greedy(model, y) -> float:
    return evaluator(model).rate_greedy(y)


def clt_params(model) -> CltParams:
    return CltParams(
        gamma=quadrature.gamma(model), sigma2=quadrature.sigma2(model)
    )


@dataclass(frozen=True)
class LimitLawSamples:
    suboptimal: np.ndarray      # max{G_l} - mean{G_l} + G
    difference: np.ndarray      # max{G_l} - mean{G_l}
    centered: np.ndarray        # (size, 3) centred triple G_l - mean{G_l}


def sample_limit_laws(params: CltParams, rng, size: int) -> LimitLawSamples:
    """Draws from the limit law of the centred greedy load and its pieces.

    G_1, G_2, G_3 are independent N(0, sigma2); G is independent
    N(0, sigma2/3 - gamma^2).  A degenerate sigma = 0 yields zero draws.
    """
    g = rng.normal(0.0, params.sigma, size=(size, 3)) if params.sigma > 0 else np.zeros((size, 3))
    var_g = max(params.var_opt, 0.0)
    g0 = rng.normal(0.0, math.sqrt(var_g), size=size) if var_g > 0 else np.zeros(size)
    mean = g.mean(axis=1)
    diff = g.max(axis=1) - mean
    return LimitLawSamples(
        suboptimal=diff + g0, difference=diff, centered=g - mean[:, None]
    )


def _sample_uniform_cell1(fr, rng, size):
    # cell 1 is the kite (0, M12, B1, M31); fan it into two equal triangles
    tri_choice = rng.random(size) < 0.5
    u = rng.random(size)
    v = rng.random(size)
    flip = u + v > 1.0
    u[flip] = 1.0 - u[flip]
    v[flip] = 1.0 - v[flip]
    m12 = fr.midpoint(1, 2)
    m31 = fr.midpoint(3, 1)
    z_a = u * m12 + v * fr.b1
    z_b = u * fr.b1 + v * m31
    return np.where(tri_choice, z_a, z_b)


def tilted_sampler(model, theta, rng, size, fr=None) -> np.ndarray:
    """Rejection sampler for the tilted law on cell 1 with density e^{theta c}.

    Proposals are uniform on cell 1; the envelope is the certified sup of
    e^{theta c} there, so acceptance ratios above one indicate a wrong
    certified extreme and raise EnvelopeError.
    """
    fr = fr or geometry.frame()
    theta = float(theta)
    shift = model.center_value if theta > 0 else model.vertex_value
    out = np.empty(size, dtype=complex)
    got = 0
    batch = max(2048, size)
    while got < size:
        z = _sample_uniform_cell1(fr, rng, batch)
        ratio = np.exp(theta * (np.asarray(model(z), dtype=float) - shift))
        if np.any(ratio > 1.0 + 1e-9):
            raise EnvelopeError(
                "tilted density exceeds its envelope; certified extremes are wrong"
            )
        accept = rng.random(batch) < ratio
        take = min(size - got, int(accept.sum()))
        out[got : got + take] = z[accept][:take]
        got += take
    return out


@dataclass(frozen=True)
class EndpointReport:
    upper_y: tuple
    upper_rate: tuple
    upper_saturation_distance: float | None
    lower_y: tuple
    lower_rate: tuple
    lower_saturation_distance: float | None

    @property
    def upper_monotone(self) -> bool:
        vals = [v for v in self.upper_rate if math.isfinite(v)]
        return all(a < b for a, b in zip(vals, vals[1:]))

    @property
    def lower_monotone(self) -> bool:
        vals = [v for v in self.lower_rate if math.isfinite(v)]
        return all(a < b for a, b in zip(vals, vals[1:]))


def endpoint_divergence_report(model, decades=8) -> EndpointReport:
    """Diagnostic: rate growth and solver saturation near the domain endpoints.

    Purely observational; the rate is infinite at the exact endpoints by
    convention, and the bracket cap is expected to be hit once the target
    comes within roughly 1e-6 of an endpoint.
    """
    ev = evaluator(model)
    span = ev.c0 - ev.cb1

    def probe(side):
        ys, rates, sat = [], [], None
        for k in range(1, decades + 1):
            d = span / 3.0 * 10.0**-k
            y = (ev.c0 / 3.0 - d) if side == "upper" else (ev.cb1 / 3.0 + d)
            ys.append(y)
            try:
                rates.append(ev.rate_optimal(y))
            except BracketCapReachedError:
                rates.append(math.inf)
                if sat is None:
                    sat = d * 3.0 / span
        return tuple(ys), tuple(rates), sat

    uy, ur, us = probe("upper")
    ly, lr, ls = probe("lower")
    return EndpointReport(
        upper_y=uy, upper_rate=ur, upper_saturation_distance=us,
        lower_y=ly, lower_rate=lr, lower_saturation_distance=ls,
    )


@dataclass(frozen=True)
class RateRow:
    y: float
    rate_optimal: float
    rate_greedy: float
    theta: float
    eta: float


def rate_table(model, y_values) -> list[RateRow]:
    """Rate-function table rows; infinities mark values outside the domains."""
    ev = evaluator(model)
    rows = []
    for y in y_values:
        y = float(y)
        j = ev.rate_optimal(y)
        jb = ev.rate_greedy(y)
        theta = ev.solve_theta(3.0 * y) if ev.cb1 / 3.0 < y < ev.c0 / 3.0 else math.inf
        eta = ev.solve_eta(y) if ev.cb1 < y < ev.c0 else math.inf
        rows.append(RateRow(y=y, rate_optimal=j, rate_greedy=jb, theta=theta, eta=eta))
    return rows
