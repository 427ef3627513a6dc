"""Seeded Monte Carlo campaigns validating the asymptotic laws at desk scale.

Every random quantity is drawn from a counter-based Philox stream keyed by
(seed, experiment tag, n, trial-or-batch index), so outputs are bit-stable
and independent of the degree of parallelism; reductions always happen in
trial-index order.
"""

from __future__ import annotations

import hashlib
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from . import allocation, asymptotics, costs, geometry, quadrature
from .errors import InsufficientTailHitsError

NAIVE_MIN_HITS = 50
TILTED_MAX_REL_SE = 0.10


def stream(seed: int, *key) -> np.random.Generator:
    """Philox generator for a (seed, key...) slot; str components are hashed."""
    parts = []
    for k in key:
        if isinstance(k, str):
            parts.append(int.from_bytes(hashlib.sha256(k.encode()).digest()[:4], "big"))
        else:
            parts.append(int(k))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(parts))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ExperimentConfig:
    model: str
    n_values: tuple
    replications: int
    seed: int
    alpha_recursion: float = 0.3
    threshold: float | None = None          # tail level t for the decay experiment
    estimator: str = "naive"                # "naive" | "tilted"
    threads: int = 1
    lp_cap: int = allocation.LP_CAP_DEFAULT

    def __post_init__(self):
        object.__setattr__(self, "n_values", tuple(int(n) for n in self.n_values))
        if not all(n >= 1 for n in self.n_values) or not self.n_values:
            raise ValueError("n_values must be a nonempty list of positive sizes")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if not 0.25 < self.alpha_recursion < 0.5:
            raise ValueError("alpha_recursion must lie in (1/4, 1/2)")
        if self.estimator not in ("naive", "tilted"):
            raise ValueError(f"unknown estimator {self.estimator!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")

    def resolved(self) -> dict:
        return asdict(self)

    def config_hash(self) -> str:
        text = json.dumps(self.resolved(), sort_keys=True)
        return hashlib.sha1(text.encode()).hexdigest()


@dataclass(frozen=True)
class SummaryStats:
    mean: float
    variance: float
    stderr: float
    count: int
    quantiles: dict = field(default_factory=dict)

    @classmethod
    def from_samples(cls, x, quantile_levels=()):
        x = np.asarray(x, dtype=float)
        var = float(np.var(x, ddof=1)) if x.size > 1 else 0.0
        qs = {f"q{int(100 * q):02d}": float(np.quantile(x, q)) for q in quantile_levels}
        return cls(
            mean=float(np.mean(x)),
            variance=var,
            stderr=math.sqrt(var / x.size) if x.size else math.nan,
            count=int(x.size),
            quantiles=qs,
        )


@dataclass(frozen=True)
class TrialRecord:
    trial: int
    n: int
    rho_bar: float
    rho_hat: float
    rho_lp: float
    w1: float
    w2: float
    w3: float


def _map_ordered(fn, items, threads):
    if threads <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def run_trial(model, n, rng, gamma, want_recursive=True, want_lp=False) -> dict:
    """One seeded replication: greedy and sweep loads plus the bridge statistic."""
    fr = geometry.frame()
    inst = allocation.Instance(points=geometry.sample_points(fr, rng, n), model=model)
    greedy = allocation.allocate_greedy(inst)
    loads = allocation.load(inst, greedy)
    w = allocation.bridge_statistic(inst, gamma)
    rho_hat = math.nan
    if want_recursive:
        _, hat_loads, trace = allocation.allocate_recursive(inst)
        rho_hat = hat_loads.rho
    rho_lp = math.nan
    if want_lp:
        rho_lp = allocation.solve_fractional(inst).objective
    return {
        "rho_bar": loads.rho,
        "rho_hat": rho_hat,
        "rho_lp": rho_lp,
        "w": w,
    }


def _records(model, config, n, tag, gamma, want_lp=False):
    def one(trial):
        rng = stream(config.seed, tag, n, trial)
        out = run_trial(model, n, rng, gamma, want_lp=want_lp)
        return TrialRecord(
            trial=trial, n=n, rho_bar=out["rho_bar"], rho_hat=out["rho_hat"],
            rho_lp=out["rho_lp"], w1=out["w"][0], w2=out["w"][1], w3=out["w"][2],
        )

    return _map_ordered(one, range(config.replications), config.threads)


# --- law of large numbers ----------------------------------------------------

@dataclass(frozen=True)
class LlnRow:
    n: int
    rho_bar_per_n: float
    rho_hat_per_n: float
    rho_lp_per_n: float
    gap_bar: float
    gap_hat: float


@dataclass(frozen=True)
class LlnResult:
    gamma: float
    rows: tuple
    records: tuple


def run_lln(config: ExperimentConfig) -> LlnResult:
    """Single-run per-point loads against the mean load constant."""
    model = costs.parse_model_spec(config.model)
    g = quadrature.gamma(model)
    rows, recs = [], []
    for n in config.n_values:
        rng = stream(config.seed, "lln", n, 0)
        out = run_trial(model, n, rng, g, want_lp=n <= config.lp_cap)
        recs.append(
            TrialRecord(0, n, out["rho_bar"], out["rho_hat"], out["rho_lp"],
                        out["w"][0], out["w"][1], out["w"][2])
        )
        rows.append(
            LlnRow(
                n=n,
                rho_bar_per_n=out["rho_bar"] / n,
                rho_hat_per_n=out["rho_hat"] / n,
                rho_lp_per_n=out["rho_lp"] / n,
                gap_bar=abs(out["rho_bar"] / n - g),
                gap_hat=abs(out["rho_hat"] / n - g),
            )
        )
    return LlnResult(gamma=g, rows=tuple(rows), records=tuple(recs))


# --- fluctuations -------------------------------------------------------------

@dataclass(frozen=True)
class CltResult:
    gamma: float
    var_opt_target: float
    m_target: float
    oracle_var_suboptimal: float
    per_n: dict
    records: tuple


def run_clt(config: ExperimentConfig, oracle_draws: int = 1_000_000) -> CltResult:
    """Replicated centred, sqrt(n)-scaled loads versus their limit laws.

    The sweep allocation stands in for the exact optimum; its statistic
    targets variance sigma2/3 - gamma^2, while the greedy statistic targets
    the max-minus-mean-plus-Gaussian limit with mean m.
    """
    model = costs.parse_model_spec(config.model)
    params = asymptotics.clt_params(model)
    g = params.gamma
    per_n = {}
    all_records = []
    for n in config.n_values:
        recs = _records(model, config, n, "clt", g)
        all_records.extend(recs)
        opt_stat = np.array([(r.rho_hat - n * g) / math.sqrt(n) for r in recs])
        sub_stat = np.array([(r.rho_bar - n * g) / math.sqrt(n) for r in recs])
        diff_stat = np.array(
            [(r.rho_bar - r.rho_hat) / math.sqrt(n) for r in recs]
        )
        oracle = asymptotics.sample_limit_laws(
            params, stream(config.seed, "clt-oracle", n), oracle_draws
        )
        per_n[n] = {
            "optimal": SummaryStats.from_samples(opt_stat),
            "suboptimal": SummaryStats.from_samples(sub_stat),
            "difference": SummaryStats.from_samples(diff_stat),
            "oracle_var_suboptimal": float(np.var(oracle.suboptimal, ddof=1)),
            "oracle_mean_difference": float(np.mean(oracle.difference)),
        }
    last = per_n[config.n_values[-1]]
    return CltResult(
        gamma=g,
        var_opt_target=params.var_opt,
        m_target=params.m,
        oracle_var_suboptimal=last["oracle_var_suboptimal"],
        per_n=per_n,
        records=tuple(all_records),
    )


# --- concentration of the sweep allocation ------------------------------------

@dataclass(frozen=True)
class ConcentrationRow:
    n: int
    bound: float
    violations: int
    frequency: float


@dataclass(frozen=True)
class ConcentrationResult:
    alpha: float
    rows: tuple
    records: tuple


def run_prop31(config: ExperimentConfig) -> ConcentrationResult:
    """Frequency of |3 (rho_hat - n gamma)/sqrt(n) - sum w_l| exceeding n^(1/2 - 2 alpha)."""
    model = costs.parse_model_spec(config.model)
    g = quadrature.gamma(model)
    a = config.alpha_recursion
    rows, all_records = [], []
    for n in config.n_values:
        recs = _records(model, config, n, "prop31", g)
        all_records.extend(recs)
        bound = n ** (0.5 - 2.0 * a)
        stat = np.array(
            [
                abs(3.0 * (r.rho_hat - n * g) / math.sqrt(n) - (r.w1 + r.w2 + r.w3))
                for r in recs
            ]
        )
        viol = int(np.sum(stat > bound))
        rows.append(
            ConcentrationRow(n=n, bound=bound, violations=viol,
                             frequency=viol / len(recs))
        )
    return ConcentrationResult(alpha=a, rows=tuple(rows), records=tuple(all_records))


# --- mean drift ----------------------------------------------------------------

@dataclass(frozen=True)
class DriftRow:
    n: int
    drift_suboptimal: SummaryStats
    drift_optimal: SummaryStats


@dataclass(frozen=True)
class DriftResult:
    gamma: float
    m_target: float
    rows: tuple
    records: tuple


def run_mean_drift(config: ExperimentConfig) -> DriftResult:
    """Centred mean loads: the greedy drifts to m*sqrt(n), the sweep to o(sqrt(n))."""
    model = costs.parse_model_spec(config.model)
    params = asymptotics.clt_params(model)
    g = params.gamma
    rows, all_records = [], []
    for n in config.n_values:
        recs = _records(model, config, n, "drift", g)
        all_records.extend(recs)
        sub = np.array([(r.rho_bar - n * g) / math.sqrt(n) for r in recs])
        opt = np.array([(r.rho_hat - n * g) / math.sqrt(n) for r in recs])
        rows.append(
            DriftRow(
                n=n,
                drift_suboptimal=SummaryStats.from_samples(sub),
                drift_optimal=SummaryStats.from_samples(opt),
            )
        )
    return DriftResult(gamma=g, m_target=params.m, rows=tuple(rows),
                       records=tuple(all_records))


# --- tail decay ------------------------------------------------------------------

@dataclass(frozen=True)
class TailEstimate:
    n: int
    estimate: float
    stderr: float
    hits: int
    usable: bool


@dataclass(frozen=True)
class LdpFit:
    threshold: float
    reference_rate: float
    estimator: str
    estimates: tuple
    slope: float
    slope_stderr: float
    intercept: float

    def ci(self, n):
        for e in self.estimates:
            if e.n == n:
                return (e.estimate - 1.96 * e.stderr, e.estimate + 1.96 * e.stderr)
        raise KeyError(n)


def _naive_batch_size(n):
    return max(1, min(4096, 2_000_000 // max(n, 1)))


def _greedy_loads_batch(model, fr, pts):
    """(B, 3) own-cell greedy loads for a batch of point sets, shape (B, n)."""
    cells = geometry.voronoi_cells(fr, pts.ravel()).reshape(pts.shape)
    loads = np.empty(pts.shape[:1] + (3,))
    for l in (1, 2, 3):
        cl = np.asarray(costs.eval_l_unchecked(model, l, pts.ravel()), dtype=float)
        loads[:, l - 1] = np.sum(cl.reshape(pts.shape) * (cells == l), axis=1)
    return loads


def _tail_naive(model, n, level, R, seed, threads) -> TailEstimate:
    fr = geometry.frame()
    B = _naive_batch_size(n)
    n_batches = (R + B - 1) // B

    def one(b):
        rng = stream(seed, "ldp-naive", n, b)
        size = B if (b + 1) * B <= R else R - b * B
        u = rng.random((B, n))
        v = rng.random((B, n))
        flip = u + v > 1.0
        u[flip] = 1.0 - u[flip]
        v[flip] = 1.0 - v[flip]
        pts = fr.b1 + u * (fr.b2 - fr.b1) + v * (fr.b3 - fr.b1)
        loads = _greedy_loads_batch(model, fr, pts)
        return int(np.sum(loads.max(axis=1) >= n * level, where=np.arange(B) < size,
                          initial=0))

    hits = sum(_map_ordered(one, range(n_batches), threads))
    p = hits / R
    se = math.sqrt(max(p * (1.0 - p), 0.0) / R)
    return TailEstimate(n=n, estimate=p, stderr=se, hits=hits,
                        usable=hits >= NAIVE_MIN_HITS)


def _tail_tilted(model, n, level, R, seed, threads) -> TailEstimate:
    fr = geometry.frame()
    ev = asymptotics.evaluator(model)
    eta = ev.solve_eta(level)
    stats = quadrature.exp_moment_stats(model, eta)
    m0 = math.exp(stats.log_m0)
    lbar = float(np.logaddexp(stats.log_m0, math.log(2.0 / 3.0)))
    q = m0 / (m0 + 2.0 / 3.0)
    B = max(1, min(1024, 500_000 // max(n, 1)))
    n_batches = (R + B - 1) // B

    def one(b):
        rng = stream(seed, "ldp-tilted", n, b)
        size = B if (b + 1) * B <= R else R - b * B
        counts = rng.binomial(n, q, size=B)
        total = int(counts.sum())
        tilted = asymptotics.tilted_sampler(model, eta, rng, total, fr)
        ct = np.asarray(model(tilted), dtype=float)
        bounds = np.r_[0, np.cumsum(counts)]
        s1 = np.add.reduceat(np.r_[ct, 0.0], bounds[:-1])
        s1[counts == 0] = 0.0
        # remaining points are uniform on the other two cells; their own-cell
        # cost is the base cost of an independent uniform cell-1 representative
        rest = n - counts
        total_rest = int(rest.sum())
        which = rng.random(total_rest) < 0.5
        reps = asymptotics._sample_uniform_cell1(fr, rng, total_rest)
        cr = np.asarray(model(reps), dtype=float)
        rb = np.r_[0, np.cumsum(rest)]
        s2 = np.add.reduceat(np.r_[np.where(which, cr, 0.0), 0.0], rb[:-1])
        s3 = np.add.reduceat(np.r_[np.where(~which, cr, 0.0), 0.0], rb[:-1])
        s2[rest == 0] = 0.0
        s3[rest == 0] = 0.0
        loads = np.stack([s1, s2, s3], axis=1)
        log_lr = (
            math.log(3.0)
            + n * lbar
            - _logsumexp_rows(eta * loads)
        )
        vals = np.exp(log_lr) * (loads.max(axis=1) >= n * level)
        return vals[:size]

    chunks = _map_ordered(one, range(n_batches), threads)
    vals = np.concatenate(chunks)
    p = float(np.mean(vals))
    se = float(np.std(vals, ddof=1) / math.sqrt(vals.size)) if vals.size > 1 else math.nan
    rel = se / p if p > 0 else math.inf
    return TailEstimate(n=n, estimate=p, stderr=se, hits=int(np.sum(vals > 0)),
                        usable=rel <= TILTED_MAX_REL_SE)


def _logsumexp_rows(x):
    mx = x.max(axis=1, keepdims=True)
    return (mx + np.log(np.sum(np.exp(x - mx), axis=1, keepdims=True))).ravel()


def run_ldp(config: ExperimentConfig) -> LdpFit:
    """Tail probabilities of the greedy load and their fitted decay slope.

    Regresses -log(p_n) on n with an intercept absorbing the subexponential
    prefactor; only estimates with enough tail mass (naive) or small enough
    relative error (tilted) enter the fit.
    """
    model = costs.parse_model_spec(config.model)
    ev = asymptotics.evaluator(model)
    t = config.threshold
    if t is None or not ev.gamma < t < ev.c0:
        raise ValueError("tail level must lie strictly between gamma and c(0)")
    reference = ev.rate_greedy(t)
    estimates = []
    for n in config.n_values:
        if config.estimator == "naive":
            est = _tail_naive(model, n, t, config.replications, config.seed,
                              config.threads)
        else:
            est = _tail_tilted(model, n, t, config.replications, config.seed,
                               config.threads)
        estimates.append(est)
    usable = [e for e in estimates if e.usable and e.estimate > 0.0]
    if len(usable) < 2:
        raise InsufficientTailHitsError(
            f"only {len(usable)} usable tail estimates; need at least 2 for a slope"
        )
    x = np.array([e.n for e in usable], dtype=float)
    y = np.array([-math.log(e.estimate) for e in usable])
    xc = x - x.mean()
    slope = float(np.sum(xc * (y - y.mean())) / np.sum(xc**2))
    intercept = float(y.mean() - slope * x.mean())
    if x.size > 2:
        resid = y - (intercept + slope * x)
        s2 = float(np.sum(resid**2) / (x.size - 2))
        slope_se = math.sqrt(s2 / float(np.sum(xc**2)))
    else:
        slope_se = math.nan
    return LdpFit(
        threshold=t,
        reference_rate=reference,
        estimator=config.estimator,
        estimates=tuple(estimates),
        slope=slope,
        slope_stderr=slope_se,
        intercept=intercept,
    )


# --- output helpers ---------------------------------------------------------------

def records_to_csv(records) -> str:
    """Samples table with shortest-roundtrip float formatting and LF endings."""
    lines = ["trial,n,rho_bar,rho_hat,rho_lp,w1,w2,w3"]
    for r in records:
        lines.append(
            ",".join(
                [str(r.trial), str(r.n)]
                + [repr(float(v)) for v in (r.rho_bar, r.rho_hat, r.rho_lp, r.w1, r.w2, r.w3)]
            )
        )
    return "\n".join(lines) + "\n"


def summary_json(config: ExperimentConfig, stats: dict) -> str:
    doc = {
        "config": config.resolved(),
        "config_hash": config.config_hash(),
        "stats": stats,
    }
    return json.dumps(doc, sort_keys=True, indent=2, default=_json_default) + "\n"


def _json_default(obj):
    if isinstance(obj, SummaryStats):
        return asdict(obj)
    if isinstance(obj, (TailEstimate, LlnRow, ConcentrationRow)):
        return asdict(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj)!r}")
