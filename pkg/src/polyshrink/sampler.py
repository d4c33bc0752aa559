"""Gibbs samplers for the sparse normal-means posterior.

One sweep updates, in order, the local scales (plus the horseshoe auxiliaries),
then theta, then the global scale when it is random. Every update is exact:

* t prior:    lambda_i^2 | theta_i ~ IG(alpha/2, (alpha-1)/2 + theta_i^2 / (2 tau^2))
* horseshoe:  lambda_i^2 | nu_i, theta_i ~ IG(1, 1/nu_i + theta_i^2 / (2 tau^2)),
              nu_i | lambda_i^2 ~ IG(1, 1 + 1/lambda_i^2)
* theta_i | rest ~ N(kappa_i y_i, kappa_i),  kappa_i = (1 + 1/(lambda_i^2 tau^2))^-1
* tau0 (Beta modes) and tau (truncated half-Cauchy) by inverse-CDF sampling of
  their one-dimensional conditionals on the log scale.
"""

import contextlib
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, stats
from scipy.special import expit

from .distributions import RngStream, DEFAULT_GRID_POINTS, zoomed_inverse_cdf_sample
from .errors import ChainFailure, ParameterError
from .priors import GlobalShrinkage, PriorKind, ShrinkageMode

KAPPA_FLOOR = 1e-300
_LOG_KAPPA_FLOOR = math.log(KAPPA_FLOOR)
_LOG_TAU_FLOOR = math.log(1e-150)

# names of deliberately broken updates, switched on only by negative-control checks
_FAULTS = set()


@contextlib.contextmanager
def inject_fault(name):
    """Temporarily break one update (negative controls for the check suite).

    ``"rate"`` replaces the (alpha-1)/2 term of the t local-scale rate by alpha/2.
    """
    _FAULTS.add(name)
    try:
        yield
    finally:
        _FAULTS.discard(name)


@dataclass
class GibbsState:
    theta: np.ndarray
    lambda_sq: np.ndarray
    nu: np.ndarray
    tau: float
    tau0: float = None
    clamp_count: int = 0


@dataclass(frozen=True)
class ChainConfig:
    n_iter: int = 12000
    burn_in: int = 2000
    thin: int = 1
    seed: int = 0
    stream_id: int = 0
    init: str = "data"
    grid_points: int = DEFAULT_GRID_POINTS

    def __post_init__(self):
        if self.n_iter < 1 or self.thin < 1:
            raise ParameterError("n_iter and thin must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise ParameterError("burn_in must lie in [0, n_iter)")
        if self.init not in ("data", "zeros"):
            raise ParameterError("init must be 'data' or 'zeros'")

    @property
    def retained(self):
        return (self.n_iter - self.burn_in) // self.thin

    def stream(self):
        return RngStream(self.seed, self.stream_id)


@dataclass
class ChainResult:
    theta: np.ndarray           # (retained, n)
    tau: np.ndarray             # (retained,)
    tau0: np.ndarray = None     # (retained,) for Beta modes
    clamp_count: int = 0


# ---------------------------------------------------------------------------
# single updates


def update_local_scales_t(state, prior, rng):
    """Fresh lambda^2 draws under the t prior."""
    a = prior.alpha
    base = a / 2 if "rate" in _FAULTS else (a - 1) / 2
    z = state.theta / state.tau
    rate = base + 0.5 * z * z
    return rate / rng.standard_gamma(a / 2, state.theta.shape)


def update_local_scales_hs(state, rng):
    """One auxiliary-variable sweep for half-Cauchy local scales; returns (lambda^2, nu)."""
    z = state.theta / state.tau
    size = state.theta.shape
    lam_sq = (1.0 / state.nu + 0.5 * z * z) / rng.standard_exponential(size)
    nu = (1.0 + 1.0 / lam_sq) / rng.standard_exponential(size)
    return lam_sq, nu


def shrinkage_factor(lambda_sq, tau):
    """kappa = v / (1 + v) with v = lambda^2 tau^2, evaluated through log v.

    Returns ``(kappa, n_clamped)``; log v is floored at log(1e-300).
    """
    log_v = np.log(lambda_sq) + 2.0 * math.log(tau)
    low = log_v < _LOG_KAPPA_FLOOR
    n_clamped = int(np.count_nonzero(low))
    if n_clamped:
        log_v = np.maximum(log_v, _LOG_KAPPA_FLOOR)
    return expit(log_v), n_clamped


def update_theta(state, y, rng):
    kappa, n_clamped = shrinkage_factor(state.lambda_sq, state.tau)
    state.clamp_count += n_clamped
    return kappa * y + np.sqrt(kappa) * rng.standard_normal(y.shape)


def scaled_sum_of_squares(theta, lambda_sq):
    """sum_i theta_i^2 / lambda_i^2."""
    return float(np.sum(theta * theta / lambda_sq))


def tau0_log_conditional(n, c, ssq):
    """Log conditional of u = log tau0 under tau = tau0^c, tau0 ~ Beta(1, n).

    Includes the Jacobian of tau0 = e^u; ``ssq`` is sum theta_i^2 / lambda_i^2.
    """
    log_half_ssq = math.log(ssq) - math.log(2.0) if ssq > 0 else -math.inf

    def logf(u):
        with np.errstate(over="ignore", divide="ignore"):
            out = -c * n * u - np.exp(log_half_ssq - 2.0 * c * u) + u
            if n > 1:
                out = out + (n - 1) * np.log(-np.expm1(u))
        return out

    return logf


def half_cauchy_log_conditional(n, ssq):
    """Log conditional of u = log tau under a half-Cauchy prior (Jacobian included)."""
    log_half_ssq = math.log(ssq) - math.log(2.0) if ssq > 0 else -math.inf

    def logf(u):
        with np.errstate(over="ignore"):
            return -n * u - np.exp(log_half_ssq - 2.0 * u) - np.logaddexp(0.0, 2.0 * u) + u

    return logf


def tau0_support(shrinkage, n):
    """Support of log tau0, keeping tau = tau0^c above 1e-150."""
    lo, hi = shrinkage.bounds(n)
    u_floor = _LOG_TAU_FLOOR / max(shrinkage.c, 1.0)
    u_lo = u_floor if lo <= 0 else max(math.log(lo), u_floor)
    return u_lo, math.log(hi)


def update_tau_adaptive(state, shrinkage, rng, grid_points=DEFAULT_GRID_POINTS):
    """Draw tau0 from its conditional and return ``(tau0, tau0**c)``."""
    if shrinkage.mode not in (ShrinkageMode.BETA_ADAPTIVE, ShrinkageMode.TRUNCATED_BETA_ADAPTIVE):
        raise ParameterError("update_tau_adaptive needs a Beta-adaptive shrinkage mode")
    n = state.theta.size
    ssq = scaled_sum_of_squares(state.theta, state.lambda_sq)
    logf = tau0_log_conditional(n, shrinkage.c, ssq)
    u = zoomed_inverse_cdf_sample(logf, tau0_support(shrinkage, n), grid_points, rng)
    tau0 = math.exp(u)
    return tau0, math.exp(shrinkage.c * u)


def update_tau_half_cauchy(state, shrinkage, rng, grid_points=DEFAULT_GRID_POINTS):
    if shrinkage.mode is not ShrinkageMode.TRUNCATED_HALF_CAUCHY:
        raise ParameterError("update_tau_half_cauchy needs truncated half-Cauchy shrinkage")
    n = state.theta.size
    lo, hi = shrinkage.bounds(n)
    ssq = scaled_sum_of_squares(state.theta, state.lambda_sq)
    u = zoomed_inverse_cdf_sample(half_cauchy_log_conditional(n, ssq), (math.log(lo), math.log(hi)),
                                  grid_points, rng)
    return math.exp(u)


# ---------------------------------------------------------------------------
# chains


def initial_state(y, prior, shrinkage, init="data"):
    n = y.size
    theta = y.astype(float).copy() if init == "data" else np.zeros(n)
    if prior.kind is PriorKind.POINT_ZERO:
        theta = np.zeros(n)
    state = GibbsState(theta=theta, lambda_sq=np.ones(n), nu=np.ones(n), tau=1.0)
    mode = shrinkage.mode
    if mode is ShrinkageMode.DETERMINISTIC:
        state.tau = shrinkage.tau
    elif mode is ShrinkageMode.TRUNCATED_HALF_CAUCHY:
        lo, hi = shrinkage.bounds(n)
        state.tau = min(max(0.5, lo), hi)
    else:
        lo, hi = shrinkage.bounds(n)
        state.tau0 = min(max(0.5, lo), hi) if lo > 0 else 0.5
        state.tau = state.tau0 ** shrinkage.c
    return state


def gibbs_sweep(state, y, prior, shrinkage, rng, grid_points=DEFAULT_GRID_POINTS):
    """One systematic-scan sweep, in place."""
    kind = prior.kind
    if kind is PriorKind.POINT_ZERO:
        return state
    if kind is PriorKind.STUDENT_T:
        state.lambda_sq = update_local_scales_t(state, prior, rng)
    elif kind is PriorKind.HORSESHOE:
        state.lambda_sq, state.nu = update_local_scales_hs(state, rng)
    state.theta = update_theta(state, y, rng)
    mode = shrinkage.mode
    if mode is ShrinkageMode.BETA_ADAPTIVE or mode is ShrinkageMode.TRUNCATED_BETA_ADAPTIVE:
        state.tau0, state.tau = update_tau_adaptive(state, shrinkage, rng, grid_points)
    elif mode is ShrinkageMode.TRUNCATED_HALF_CAUCHY:
        state.tau = update_tau_half_cauchy(state, shrinkage, rng, grid_points)
    return state


def _check_finite(state, sweep):
    if not (np.isfinite(state.theta).all() and np.isfinite(state.lambda_sq).all()
            and np.all(state.lambda_sq > 0) and math.isfinite(state.tau) and state.tau > 0):
        bad = ~(np.isfinite(state.theta) & np.isfinite(state.lambda_sq) & (state.lambda_sq > 0))
        coord = int(np.flatnonzero(bad)[0]) if bad.any() else -1
        raise ChainFailure(sweep, coord)


def iter_chain(y, prior, shrinkage, config, rng=None):
    """Yield ``(sweep, state)`` after every retained sweep.

    The yielded state is live and is mutated by the next sweep; copy what you
    keep. Raises :class:`ChainFailure` on the first non-finite sweep.
    """
    y = np.asarray(y, dtype=float)
    if y.ndim != 1 or not np.isfinite(y).all():
        raise ParameterError("y must be a finite 1-D vector")
    rng = config.stream() if rng is None else rng
    state = initial_state(y, prior, shrinkage, config.init)
    burn, thin = config.burn_in, config.thin
    for sweep in range(config.n_iter):
        gibbs_sweep(state, y, prior, shrinkage, rng, config.grid_points)
        _check_finite(state, sweep)
        if sweep >= burn and (sweep - burn + 1) % thin == 0:
            yield sweep, state


def run_chain(y, prior, shrinkage, config, rng=None):
    """Run one chain and keep every retained sweep of theta and tau."""
    y = np.asarray(y, dtype=float)
    m = config.retained
    theta = np.empty((m, y.size))
    tau = np.empty(m)
    tau0 = np.empty(m) if shrinkage.mode in (ShrinkageMode.BETA_ADAPTIVE,
                                             ShrinkageMode.TRUNCATED_BETA_ADAPTIVE) else None
    k = 0
    state = None
    for _, state in iter_chain(y, prior, shrinkage, config, rng):
        theta[k] = state.theta
        tau[k] = state.tau
        if tau0 is not None:
            tau0[k] = state.tau0
        k += 1
    return ChainResult(theta=theta[:k], tau=tau[:k], tau0=None if tau0 is None else tau0[:k],
                       clamp_count=0 if state is None else state.clamp_count)


def batch_means_se(x, n_batches=None):
    """Monte Carlo standard error of the mean of a correlated series (batch means).

    Works along axis 0; uses floor(sqrt(m)) batches unless told otherwise.
    """
    x = np.asarray(x, dtype=float)
    m = x.shape[0]
    b = n_batches or max(2, int(math.isqrt(m)))
    size = m // b
    if size < 1:
        raise ParameterError("too few draws for batch means")
    means = x[: b * size].reshape((b, size) + x.shape[1:]).mean(axis=1)
    return means.std(axis=0, ddof=1) / math.sqrt(b)


# ---------------------------------------------------------------------------
# joint-distribution (Geweke-style) test


@dataclass
class MomentCheck:
    name: str
    expected: float
    estimate: float
    se: float
    tolerance_se: float = 4.0
    passed: bool = field(init=False)

    def __post_init__(self):
        self.estimate = float(self.estimate)
        self.se = float(self.se)
        self.passed = bool(abs(self.estimate - self.expected) <= self.tolerance_se * self.se)

    @property
    def z(self):
        return (self.estimate - self.expected) / self.se if self.se > 0 else math.inf


def _prob_abs_y_below(df, tau, bound=1.0):
    """P(|y| <= bound) when theta/tau ~ t_df and y | theta ~ N(theta, 1)."""
    def integrand(theta):
        return (stats.t.pdf(theta / tau, df) / tau
                * (stats.norm.cdf(bound - theta) - stats.norm.cdf(-bound - theta)))
    pts = [tau, 1.0, bound + 5.0]
    val = integrate.quad(integrand, 0.0, bound + 40.0, points=pts, limit=500)[0]
    return 2.0 * val


def geweke_joint_test(alpha=1.1, tau=0.1, n=5, total_sweeps=200_000, chains=2000, seed=20190101,
                      tolerance_se=4.0):
    """Successive-conditional check that the t-prior Gibbs kernel preserves the joint law.

    Each chain starts from an exact draw of (lambda^2, theta, y) from the prior
    predictive and then alternates the sampler's lambda and theta updates with
    a fresh y ~ N(theta, 1). If the kernel is correct every visited state is a
    draw from the joint, so fractions of sweeps falling below known prior
    quantiles must match those quantile levels. Standard errors come from the
    spread of per-chain averages, which are independent.
    """
    from .priors import PriorFamily

    prior = PriorFamily.student_t(alpha)
    df = prior.df
    rng = RngStream(seed, 0)
    sweeps = total_sweeps // chains
    if sweeps < 1:
        raise ParameterError("total_sweeps must be at least the number of chains")
    size = n * chains
    lam_sq = (df / 2) / rng.standard_gamma(df / 2, size)
    theta = tau * np.sqrt(lam_sq) * rng.standard_normal(size)
    y = theta + rng.standard_normal(size)
    state = GibbsState(theta=theta, lambda_sq=lam_sq, nu=np.ones(size), tau=tau)

    levels = (0.25, 0.5, 0.75, 0.9)
    theta_q = [stats.t.ppf(0.5 + p / 2, df) * tau for p in levels]
    lam_q = [stats.invgamma.ppf(p, df / 2, scale=df / 2) for p in levels]
    p_y = _prob_abs_y_below(df, tau)

    names = ([f"P(|theta| <= q{p:g})" for p in levels] + [f"P(lambda^2 <= q{p:g})" for p in levels]
             + ["P(|y| <= 1)"])
    expected = list(levels) + list(levels) + [p_y]
    sums = np.zeros((len(names), chains))
    for _ in range(sweeps):
        state.lambda_sq = update_local_scales_t(state, prior, rng)
        state.theta = update_theta(state, y, rng)
        y = state.theta + rng.standard_normal(size)
        abs_theta = np.abs(state.theta)
        rows = [abs_theta <= q for q in theta_q] + [state.lambda_sq <= q for q in lam_q]
        rows.append(np.abs(y) <= 1.0)
        for j, r in enumerate(rows):
            sums[j] += r.reshape(chains, n).mean(axis=1)
    per_chain = sums / sweeps
    est = per_chain.mean(axis=1)
    se = per_chain.std(axis=1, ddof=1) / math.sqrt(chains)
    return [MomentCheck(nm, e, m, s, tolerance_se) for nm, e, m, s in zip(names, expected, est, se)]
