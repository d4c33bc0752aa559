"""Truth generation, error metrics and replicated simulation grids.

A grid cell is one (n, prior, signal) combination. Replication ``r`` of a
cell draws its truth and data from stream ``(master_seed, r)`` under a
substream keyed by (n, signal), so every prior in the grid sees the same data
sets; the chain gets a further substream keyed by the prior label. Results
therefore do not depend on how replications are scheduled across workers.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .distributions import RngStream
from .errors import ChainFailure, NumericError, ParameterError
from .priors import (GlobalShrinkage, PriorFamily, TauSchedule, lower_exponent,
                     resolve_tau, sharp_exponent)
from .sampler import ChainConfig, iter_chain

RADIUS_FACTOR = 2.2
UNRELIABLE_FAIL_FRACTION = 0.10
INTERVAL_Z = 1.96


# ---------------------------------------------------------------------------
# prior specification strings


@dataclass(frozen=True)
class PriorSpec:
    """A prior family plus how its tau is chosen.

    Exactly one of ``schedule`` (deterministic tau resolved per (n, s)) and
    ``shrinkage`` (fixed or random tau) is set.
    """

    label: str
    prior: PriorFamily
    schedule: TauSchedule = None
    shrinkage: GlobalShrinkage = None

    def shrinkage_for(self, n, s):
        if self.schedule is not None:
            return GlobalShrinkage.deterministic(resolve_tau(self.schedule, n, s))
        return self.shrinkage


def parse_prior(text):
    """``t:<alpha>``, ``hs``, or the calibration hooks ``normal`` / ``zero``."""
    parts = text.strip().split(":")
    head = parts[0].lower()
    if head == "t" and len(parts) == 2:
        return PriorFamily.student_t(float(parts[1]))
    if head in ("hs", "horseshoe") and len(parts) == 1:
        return PriorFamily.horseshoe()
    if head == "normal" and len(parts) == 1:
        return PriorFamily.normal()
    if head == "zero" and len(parts) == 1:
        return PriorFamily.point_zero()
    raise ParameterError(f"cannot parse prior {text!r}")


def _exponent(token, prior):
    if token == "sharp":
        return sharp_exponent(prior.alpha)
    if token == "lower":
        return lower_exponent(prior.alpha)
    return float(token)


def parse_global(text, prior):
    """Parse the tau part of a spec; returns a TauSchedule or a GlobalShrinkage.

    Forms: ``sparsity:<c>``, ``n:<c>``, ``hs-oracle``, ``fixed:<tau>``,
    ``beta:<c>``, ``tbeta:<c>[:<lo>:<hi>]``, ``halfcauchy[:<lo>:<hi>]``.
    ``<c>`` may be ``sharp`` ((alpha+0.05)/(alpha-1)) or ``lower`` (1/(alpha-1)).
    """
    parts = text.strip().split(":")
    head, args = parts[0].lower(), parts[1:]
    try:
        if head == "sparsity" and len(args) == 1:
            return TauSchedule.power_of_sparsity(_exponent(args[0], prior))
        if head == "n" and len(args) == 1:
            return TauSchedule.power_of_n(_exponent(args[0], prior))
        if head == "hs-oracle" and not args:
            return TauSchedule.horseshoe_oracle()
        if head == "fixed" and len(args) == 1:
            return GlobalShrinkage.deterministic(float(args[0]))
        if head == "beta" and len(args) == 1:
            return GlobalShrinkage.beta_adaptive(_exponent(args[0], prior))
        if head == "tbeta" and len(args) in (1, 3):
            bounds = [float(a) for a in args[1:]] or [None, None]
            return GlobalShrinkage.truncated_beta_adaptive(_exponent(args[0], prior), *bounds)
        if head == "halfcauchy" and len(args) in (0, 2):
            bounds = [float(a) for a in args] or [None, None]
            return GlobalShrinkage.truncated_half_cauchy(*bounds)
    except ValueError as exc:
        raise ParameterError(f"cannot parse shrinkage {text!r}: {exc}") from exc
    raise ParameterError(f"cannot parse shrinkage {text!r}")


def parse_prior_spec(text):
    """``<prior>/<tau part>``, e.g. ``t:1.1/sparsity:sharp`` or ``hs/halfcauchy``."""
    text = text.strip()
    if "/" not in text:
        raise ParameterError(f"prior spec {text!r} needs the form <prior>/<tau>")
    prior_text, global_text = text.split("/", 1)
    prior = parse_prior(prior_text)
    g = parse_global(global_text, prior)
    if isinstance(g, TauSchedule):
        return PriorSpec(text, prior, schedule=g)
    return PriorSpec(text, prior, shrinkage=g)


# ---------------------------------------------------------------------------
# signals and configuration


@dataclass(frozen=True)
class Signal:
    """Active coordinates equal sqrt(t log(n/s)); t fixed or drawn U(lo, hi) per coordinate."""

    t: float = None
    lo: float = None
    hi: float = None

    @classmethod
    def constant(cls, t):
        return cls(t=float(t))

    @classmethod
    def uniform(cls, lo, hi):
        if not 0 <= lo < hi:
            raise ParameterError("uniform signal needs 0 <= lo < hi")
        return cls(lo=float(lo), hi=float(hi))

    @property
    def is_uniform(self):
        return self.t is None

    @property
    def label(self):
        return f"U({self.lo:g},{self.hi:g})" if self.is_uniform else f"{self.t:g}"


def parse_signal(text):
    text = text.strip()
    if text.lower().startswith("uniform"):
        parts = text.split(":")
        if len(parts) != 3:
            raise ParameterError("uniform signal form is uniform:<lo>:<hi>")
        return Signal.uniform(float(parts[1]), float(parts[2]))
    return Signal.constant(float(text))


@dataclass(frozen=True)
class ExperimentConfig:
    n_values: tuple
    signals: tuple
    prior_specs: tuple
    replications: int = 100
    master_seed: int = 0
    chain: ChainConfig = field(default_factory=ChainConfig)
    s_values: tuple = None
    radius_factor: float = RADIUS_FACTOR

    def __post_init__(self):
        if self.replications < 1:
            raise ParameterError("replications must be at least 1")
        if not self.n_values or not self.signals or not self.prior_specs:
            raise ParameterError("n_values, signals and prior_specs must be non-empty")
        if self.s_values is not None and len(self.s_values) != len(self.n_values):
            raise ParameterError("s_values must match n_values in length")
        for n in self.n_values:
            s = self.sparsity(n)
            if not 1 <= s < n:
                raise ParameterError(f"need 1 <= s < n, got s={s} for n={n}")

    def sparsity(self, n):
        if self.s_values is not None:
            return int(self.s_values[list(self.n_values).index(n)])
        return int(round(math.sqrt(n)))

    def to_dict(self):
        return {
            "n_values": list(self.n_values),
            "s_values": [self.sparsity(n) for n in self.n_values],
            "signals": [s.label for s in self.signals],
            "priors": [p.label for p in self.prior_specs],
            "replications": self.replications,
            "seed": self.master_seed,
            "radius_factor": self.radius_factor,
            "chain": asdict(self.chain),
        }


def preset(name, **overrides):
    """Built-in experiment designs: sim1, sim2, varying, inference."""
    name = name.lower()
    n_values = (50, 100, 500, 1000)
    ts = (1.2, 2.2, 4.2, 6.2)
    if name == "sim1":
        specs = ["t:1.1/sparsity:sharp", "t:2.1/sparsity:sharp", "t:3.1/sparsity:sharp",
                 "t:2.1/sparsity:lower", "t:3.1/sparsity:lower", "hs/hs-oracle"]
        signals = tuple(Signal.constant(t) for t in ts)
    elif name == "sim2":
        specs = ["t:1.1/beta:sharp", "hs/halfcauchy"]
        signals = tuple(Signal.constant(t) for t in ts)
    elif name == "varying":
        specs = ["t:1.1/sparsity:sharp", "t:2.1/sparsity:sharp", "t:2.1/sparsity:lower", "hs/hs-oracle"]
        signals = (Signal.uniform(0, 5),)
    elif name == "inference":
        specs = ["t:1.1/sparsity:sharp", "hs/hs-oracle"]
        signals = tuple(Signal.constant(t) for t in ts[:3])
    else:
        raise ParameterError(f"unknown preset {name!r}")
    base = ExperimentConfig(n_values=n_values, signals=signals,
                            prior_specs=tuple(parse_prior_spec(s) for s in specs), replications=100)
    return replace(base, **overrides)


# ---------------------------------------------------------------------------
# truth, data and metrics


def generate_truth(n, s, signal, rng):
    if not 0 <= s < n:
        raise ParameterError("need s < n")
    theta = np.zeros(n)
    log_ratio = math.log(n / s) if s > 0 else 0.0
    if signal.is_uniform:
        t = signal.lo + (signal.hi - signal.lo) * rng.uniform(s)
    else:
        t = np.full(s, signal.t)
    theta[:s] = np.sqrt(t * log_ratio)
    return theta


def simulate_data(theta_star, rng):
    theta_star = np.asarray(theta_star, dtype=float)
    return theta_star + rng.standard_normal(theta_star.shape)


def contraction_probability(draws, theta_star, radius_sq):
    """Fraction of draws with ||theta - theta*||^2 >= radius_sq."""
    d = np.asarray(draws, dtype=float) - theta_star
    return float(np.mean(np.sum(d * d, axis=1) >= radius_sq))


@dataclass
class ErrorSummary:
    l2_sq: float
    l1: float
    l2_sq_active: float
    l2_sq_inactive: float
    l1_active: float
    l1_inactive: float


def posterior_error_summaries(draws, theta_star, active):
    """Posterior means of squared L2 and of L1 error, with active/inactive splits."""
    d = np.asarray(draws, dtype=float) - theta_star
    sq, ab = d * d, np.abs(d)
    active = np.asarray(active, dtype=bool)
    return ErrorSummary(
        l2_sq=float(np.mean(sq.sum(axis=1))),
        l1=float(np.mean(ab.sum(axis=1))),
        l2_sq_active=float(np.mean(sq[:, active].sum(axis=1))),
        l2_sq_inactive=float(np.mean(sq[:, ~active].sum(axis=1))),
        l1_active=float(np.mean(ab[:, active].sum(axis=1))),
        l1_inactive=float(np.mean(ab[:, ~active].sum(axis=1))),
    )


def minimax_reference(n, s):
    """(2 s log(n/s), s sqrt(2 log(n/s))): minimax squared-L2 and L1 errors."""
    if not 1 <= s < n:
        raise ParameterError("need 1 <= s < n")
    L = math.log(n / s)
    return 2.0 * s * L, s * math.sqrt(2.0 * L)


def select_by_shrinkage(post_means, y):
    """|E(theta_i | D)| / |y_i| > 1/2; coordinates with y_i = 0 are never selected."""
    post_means = np.asarray(post_means, dtype=float)
    y = np.asarray(y, dtype=float)
    if post_means.shape != y.shape:
        raise ParameterError("post_means and y must have the same shape")
    nz = y != 0
    out = np.zeros(y.shape, dtype=bool)
    out[nz] = np.abs(post_means[nz]) > 0.5 * np.abs(y[nz])
    return out


@dataclass
class IntervalSummary:
    mean: np.ndarray
    sd: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    selected: np.ndarray      # interval excludes 0
    covered: np.ndarray = None

    @classmethod
    def from_moments(cls, mean, sd, theta_star=None):
        lower, upper = mean - INTERVAL_Z * sd, mean + INTERVAL_Z * sd
        selected = (lower > 0) | (upper < 0)
        covered = None
        if theta_star is not None:
            covered = (lower <= theta_star) & (theta_star <= upper)
        return cls(mean, sd, lower, upper, selected, covered)


def credible_intervals(draws, theta_star=None):
    """Marginal intervals mean ± 1.96 sd per coordinate."""
    draws = np.asarray(draws, dtype=float)
    return IntervalSummary.from_moments(draws.mean(axis=0), draws.std(axis=0), theta_star)


class PosteriorAccumulator:
    """Streaming version of the draw-matrix metrics.

    Draws are buffered in blocks and folded through the same functions used
    on full draw matrices, so the two routes agree exactly up to summation
    order.
    """

    def __init__(self, theta_star=None, active=None, radius_sq=None, block=256):
        self.theta_star = None if theta_star is None else np.asarray(theta_star, dtype=float)
        self.active = None if active is None else np.asarray(active, dtype=bool)
        self.radius_sq = radius_sq
        self.block = block
        self._buf = []
        self.count = 0
        self._shift = None
        self._sum = None
        self._sumsq = None
        self._exceed = 0.0
        self._err = np.zeros(6)
        self.tau_sum = 0.0

    def add(self, theta, tau=None):
        self._buf.append(np.array(theta, dtype=float))
        if tau is not None:
            self.tau_sum += tau
        if len(self._buf) >= self.block:
            self._flush()

    def _flush(self):
        if not self._buf:
            return
        block = np.vstack(self._buf)
        self._buf = []
        k = block.shape[0]
        if self._shift is None:
            self._shift = block[0].copy()
            self._sum = np.zeros_like(self._shift)
            self._sumsq = np.zeros_like(self._shift)
        centred = block - self._shift
        self._sum += centred.sum(axis=0)
        self._sumsq += (centred * centred).sum(axis=0)
        if self.theta_star is not None:
            if self.radius_sq is not None:
                self._exceed += k * contraction_probability(block, self.theta_star, self.radius_sq)
            e = posterior_error_summaries(block, self.theta_star, self.active)
            self._err += k * np.array([e.l2_sq, e.l1, e.l2_sq_active, e.l2_sq_inactive,
                                       e.l1_active, e.l1_inactive])
        self.count += k

    def _ready(self):
        self._flush()
        if self.count == 0:
            raise ParameterError("no draws accumulated")

    def mean(self):
        self._ready()
        return self._shift + self._sum / self.count

    def sd(self):
        self._ready()
        m = self._sum / self.count
        return np.sqrt(np.maximum(self._sumsq / self.count - m * m, 0.0))

    def contraction_probability(self):
        self._ready()
        return self._exceed / self.count

    def errors(self):
        self._ready()
        return ErrorSummary(*(self._err / self.count))

    def intervals(self):
        return IntervalSummary.from_moments(self.mean(), self.sd(), self.theta_star)


# ---------------------------------------------------------------------------
# replications and grids

METRICS = ("contraction_prob", "l2_sq", "l1", "l2_sq_active", "l2_sq_inactive", "l1_active",
           "l1_inactive", "coverage_active", "coverage_inactive", "shrink_select_active",
           "shrink_select_inactive", "interval_select_active", "interval_select_inactive", "tau_mean")


@dataclass
class ReplicationResult:
    n: int
    s: int
    t: str
    prior_label: str
    replication: int
    failed: bool = False
    error: str = ""
    metrics: dict = field(default_factory=dict)
    selected_shrink: list = None
    selected_interval: list = None

    def to_dict(self):
        return asdict(self)


def _fraction(mask, where):
    return float(np.mean(mask[where])) if np.any(where) else math.nan


def run_replication(config, n, signal, spec, r):
    s = config.sparsity(n)
    root = RngStream(config.master_seed, r)
    data_rng = root.child("data", n, signal.label)
    theta_star = generate_truth(n, s, signal, data_rng)
    y = simulate_data(theta_star, data_rng)
    active = np.zeros(n, dtype=bool)
    active[:s] = True
    radius_sq = config.radius_factor * s * math.log(n / s)
    result = ReplicationResult(n=n, s=s, t=signal.label, prior_label=spec.label, replication=r)
    acc = PosteriorAccumulator(theta_star, active, radius_sq)
    try:
        shrinkage = spec.shrinkage_for(n, s)
        for _, state in iter_chain(y, spec.prior, shrinkage, config.chain, root.child("chain", n, signal.label, spec.label)):
            acc.add(state.theta, state.tau)
    except (ChainFailure, NumericError) as exc:
        result.failed = True
        result.error = str(exc)
        return result
    err = acc.errors()
    iv = acc.intervals()
    shrink_sel = select_by_shrinkage(iv.mean, y)
    inactive = ~active
    result.metrics = {
        "contraction_prob": acc.contraction_probability(),
        "l2_sq": err.l2_sq,
        "l1": err.l1,
        "l2_sq_active": err.l2_sq_active,
        "l2_sq_inactive": err.l2_sq_inactive,
        "l1_active": err.l1_active,
        "l1_inactive": err.l1_inactive,
        "coverage_active": _fraction(iv.covered, active),
        "coverage_inactive": _fraction(iv.covered, inactive),
        "shrink_select_active": _fraction(shrink_sel, active),
        "shrink_select_inactive": _fraction(shrink_sel, inactive),
        "interval_select_active": _fraction(iv.selected, active),
        "interval_select_inactive": _fraction(iv.selected, inactive),
        "tau_mean": acc.tau_sum / acc.count,
    }
    result.selected_shrink = shrink_sel.tolist()
    result.selected_interval = iv.selected.tolist()
    return result


def _run_task(task):
    return run_replication(*task)


@dataclass
class CellAggregate:
    n: int
    s: int
    prior_label: str
    t: str
    n_ok: int
    n_fail: int
    stats: dict                 # metric -> (mean, se or None)

    @property
    def unreliable(self):
        total = self.n_ok + self.n_fail
        return total > 0 and self.n_fail / total > UNRELIABLE_FAIL_FRACTION

    def mean(self, metric):
        return self.stats[metric][0]

    def se(self, metric):
        return self.stats[metric][1]

    def to_dict(self):
        d = asdict(self)
        d["stats"] = {k: {"mean": m, "se": s} for k, (m, s) in self.stats.items()}
        d["unreliable"] = self.unreliable
        return d


@dataclass
class GridResult:
    config: ExperimentConfig
    cells: list
    replications: list

    def cell(self, n, prior_label, t):
        t = t if isinstance(t, str) else f"{t:g}"
        for c in self.cells:
            if c.n == n and c.prior_label == prior_label and c.t == t:
                return c
        raise KeyError((n, prior_label, t))

    def to_dict(self):
        return {"config": self.config.to_dict(),
                "cells": [c.to_dict() for c in self.cells],
                "replications": [r.to_dict() for r in self.replications]}


def _mean_se(values):
    vals = np.asarray([v for v in values if not math.isnan(v)], dtype=float)
    if vals.size == 0:
        return math.nan, None
    if vals.size == 1:
        return float(vals[0]), None
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(vals.size))


def aggregate(config, results):
    """Per-cell mean and standard error across replications, in sorted cell order."""
    groups = {}
    for r in results:
        groups.setdefault((r.n, r.prior_label, r.t), []).append(r)
    cells = []
    for key in sorted(groups):
        reps = sorted(groups[key], key=lambda r: r.replication)
        ok = [r for r in reps if not r.failed]
        n, label, t = key
        s = config.sparsity(n)
        stats = {m: _mean_se([r.metrics[m] for r in ok]) for m in METRICS}
        l2_ref, l1_ref = minimax_reference(n, s)
        stats["l2_sq_minimax"] = (l2_ref, None)
        stats["l1_minimax"] = (l1_ref, None)
        cells.append(CellAggregate(n=n, s=s, prior_label=label, t=t, n_ok=len(ok),
                                   n_fail=len(reps) - len(ok), stats=stats))
    return cells


def grid_tasks(config):
    return [(config, n, sig, spec, r)
            for n in config.n_values
            for sig in config.signals
            for spec in config.prior_specs
            for r in range(config.replications)]


def run_grid(config, parallelism=1, progress=None):
    """Run every (n, signal, prior, replication) task and aggregate per cell.

    Output is identical for any ``parallelism``: tasks own their streams and
    aggregation sorts by cell key and replication index.
    """
    if parallelism < 1:
        raise ParameterError("parallelism must be positive")
    tasks = grid_tasks(config)
    results = []
    if parallelism == 1:
        for i, task in enumerate(tasks):
            results.append(_run_task(task))
            if progress:
                progress(i + 1, len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            for i, res in enumerate(pool.map(_run_task, tasks, chunksize=1)):
                results.append(res)
                if progress:
                    progress(i + 1, len(tasks))
    results.sort(key=lambda r: (r.n, r.prior_label, r.t, r.replication))
    return GridResult(config=config, cells=aggregate(config, results), replications=results)


def naive_zero_spec():
    """Calibration hook: a 'prior' whose posterior is the point mass at 0."""
    return PriorSpec("zero/fixed:1", PriorFamily.point_zero(),
                     shrinkage=GlobalShrinkage.deterministic(1.0))
