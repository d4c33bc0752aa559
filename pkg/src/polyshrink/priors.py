"""Prior families, global-shrinkage settings and the diagnostics built on them.

The local-global hierarchy is ``theta_i ~ N(0, lambda_i^2 tau^2)``. For the
Student-t family ``lambda_i^2 ~ IG((alpha-1)/2, (alpha-1)/2)``, which makes the
marginal of ``theta_i / tau`` a t distribution with ``alpha - 1`` degrees of
freedom and a tail of polynomial order ``alpha``. The horseshoe uses
half-Cauchy local scales and has tail order 2.

All logarithms are natural.
"""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import integrate
from scipy.special import gammaln

from .errors import NoThresholdError, ParameterError

HORSESHOE_K = 1.0 / math.sqrt(2.0 * math.pi**3)
THRESHOLD_BRACKET = (1.0, 200.0)


class PriorKind(str, Enum):
    STUDENT_T = "t"
    HORSESHOE = "hs"
    # calibration hooks: conjugate N(0, tau^2) prior and the naive estimator theta = 0
    NORMAL = "normal"
    POINT_ZERO = "zero"


@dataclass(frozen=True)
class PriorFamily:
    kind: PriorKind
    alpha: float

    def __post_init__(self):
        object.__setattr__(self, "kind", PriorKind(self.kind))
        if self.kind is PriorKind.STUDENT_T and not self.alpha > 1:
            raise ParameterError(f"polynomial order alpha must exceed 1, got {self.alpha}")
        if self.kind is PriorKind.HORSESHOE and self.alpha != 2:
            raise ParameterError("the horseshoe has polynomial order alpha = 2")

    @classmethod
    def student_t(cls, alpha):
        return cls(PriorKind.STUDENT_T, float(alpha))

    @classmethod
    def horseshoe(cls):
        return cls(PriorKind.HORSESHOE, 2.0)

    @classmethod
    def normal(cls):
        return cls(PriorKind.NORMAL, math.inf)

    @classmethod
    def point_zero(cls):
        return cls(PriorKind.POINT_ZERO, math.inf)

    @property
    def df(self):
        """Degrees of freedom of the t marginal (alpha - 1)."""
        return self.alpha - 1.0

    @property
    def label(self):
        if self.kind is PriorKind.STUDENT_T:
            return f"t:{self.alpha:g}"
        return self.kind.value


class ShrinkageMode(str, Enum):
    DETERMINISTIC = "fixed"
    BETA_ADAPTIVE = "beta"
    TRUNCATED_BETA_ADAPTIVE = "tbeta"
    TRUNCATED_HALF_CAUCHY = "halfcauchy"


@dataclass(frozen=True)
class GlobalShrinkage:
    """How tau is set in a chain.

    ``lower``/``upper`` of ``None`` mean the default ``[1/n, 1]`` resolved
    against the data dimension when the chain starts.
    """

    mode: ShrinkageMode
    tau: float = None
    c: float = None
    lower: float = None
    upper: float = None

    def __post_init__(self):
        object.__setattr__(self, "mode", ShrinkageMode(self.mode))
        m = self.mode
        if m is ShrinkageMode.DETERMINISTIC:
            if self.tau is None or not self.tau > 0:
                raise ParameterError("deterministic shrinkage needs tau > 0")
        if m in (ShrinkageMode.BETA_ADAPTIVE, ShrinkageMode.TRUNCATED_BETA_ADAPTIVE):
            if self.c is None or not self.c > 0:
                raise ParameterError("Beta-adaptive shrinkage needs c > 0")
        if m is ShrinkageMode.TRUNCATED_BETA_ADAPTIVE:
            lo, hi = self.lower, self.upper
            if lo is not None and not 0 < lo <= 1:
                raise ParameterError("truncation lower bound must lie in (0, 1]")
            if hi is not None and not 0 < hi <= 1:
                raise ParameterError("truncation upper bound must lie in (0, 1]")
            if lo is not None and hi is not None and not lo < hi:
                raise ParameterError("truncation requires lower < upper")
        if m is ShrinkageMode.TRUNCATED_HALF_CAUCHY:
            lo, hi = self.lower, self.upper
            if lo is not None and not lo > 0:
                raise ParameterError("half-Cauchy truncation needs lower > 0")
            if lo is not None and hi is not None and not lo < hi:
                raise ParameterError("truncation requires lower < upper")

    @classmethod
    def deterministic(cls, tau):
        return cls(ShrinkageMode.DETERMINISTIC, tau=float(tau))

    @classmethod
    def beta_adaptive(cls, c):
        return cls(ShrinkageMode.BETA_ADAPTIVE, c=float(c))

    @classmethod
    def truncated_beta_adaptive(cls, c, lower=None, upper=None):
        return cls(ShrinkageMode.TRUNCATED_BETA_ADAPTIVE, c=float(c), lower=lower, upper=upper)

    @classmethod
    def truncated_half_cauchy(cls, lower=None, upper=None):
        return cls(ShrinkageMode.TRUNCATED_HALF_CAUCHY, lower=lower, upper=upper)

    @property
    def adaptive(self):
        return self.mode is not ShrinkageMode.DETERMINISTIC

    def bounds(self, n):
        """Support of the sampled variable (tau0 for Beta modes, tau for half-Cauchy)."""
        if self.mode is ShrinkageMode.BETA_ADAPTIVE:
            return 0.0, 1.0
        lo = 1.0 / n if self.lower is None else self.lower
        hi = 1.0 if self.upper is None else self.upper
        if not lo < hi:
            raise ParameterError(f"empty truncation interval [{lo}, {hi}] for n={n}")
        return lo, hi


class TauRule(str, Enum):
    POWER_OF_SPARSITY = "sparsity"
    POWER_OF_N = "n"
    HORSESHOE_ORACLE = "hs-oracle"


@dataclass(frozen=True)
class TauSchedule:
    """Deterministic tau as a function of (n, s)."""

    rule: TauRule
    c: float = None

    def __post_init__(self):
        object.__setattr__(self, "rule", TauRule(self.rule))
        if self.rule is not TauRule.HORSESHOE_ORACLE and (self.c is None or not self.c > 0):
            raise ParameterError("power schedules need an exponent c > 0")

    @classmethod
    def power_of_sparsity(cls, c):
        return cls(TauRule.POWER_OF_SPARSITY, float(c))

    @classmethod
    def power_of_n(cls, c):
        return cls(TauRule.POWER_OF_N, float(c))

    @classmethod
    def horseshoe_oracle(cls):
        return cls(TauRule.HORSESHOE_ORACLE)


def sharp_exponent(alpha, delta=0.05):
    """c = (alpha + delta) / (alpha - 1): the upper-bound-satisfying tau exponent."""
    return (alpha + delta) / (alpha - 1.0)


def lower_exponent(alpha):
    """c = 1 / (alpha - 1): the lower-bound-only tau exponent."""
    return 1.0 / (alpha - 1.0)


def resolve_tau(schedule, n, s):
    if not 1 <= s < n:
        raise ParameterError(f"need 1 <= s < n, got s={s}, n={n}")
    ratio = s / n
    if schedule.rule is TauRule.POWER_OF_SPARSITY:
        return math.exp(schedule.c * math.log(ratio))
    if schedule.rule is TauRule.POWER_OF_N:
        return math.exp(-schedule.c * math.log(n))
    return ratio * math.sqrt(math.log(n / s))


# ---------------------------------------------------------------------------
# marginal densities


def _check_tau(tau):
    if not tau > 0:
        raise ParameterError(f"tau must be positive, got {tau}")


def _t_log_pdf(x, df):
    x = np.abs(np.asarray(x, dtype=float))
    const = gammaln((df + 1) / 2) - gammaln(df / 2) - 0.5 * math.log(df * math.pi)
    big = x > 1e100
    xs = np.where(big, 1.0, x)
    log_kernel = np.where(
        big,
        2.0 * np.log(np.where(big, x, 1.0)) - math.log(df),
        np.log1p(xs * xs / df),
    )
    return const - 0.5 * (df + 1) * log_kernel


def _hs_integrand(w, x):
    # lambda = cot(w); density of theta/tau given lambda, times the half-Cauchy
    # density under lambda = tan(u), u = pi/2 - w, which contributes 2/pi du
    t = math.tan(w)
    z = x * t
    return math.exp(-0.5 * z * z) * t


def _hs_log_density_standard(x):
    """Log horseshoe density at x for tau = 1 by adaptive quadrature."""
    x = abs(float(x))
    if x == 0.0:
        return math.inf
    if x > 1e6:
        # exp(u) E1(u) asymptotics, u = x^2 / 2; relative error below 1e-20 here
        log_u = 2.0 * math.log(x) - math.log(2.0)
        inv_u = math.exp(-log_u)
        return math.log(HORSESHOE_K) - log_u + math.log1p(-inv_u + 2.0 * inv_u * inv_u)
    w_star = math.atan(1.0 / x)
    pts = sorted({min(max(w_star * f, 1e-300), math.pi / 2 * 0.999999) for f in (0.05, 0.3, 1.0, 3.0, 10.0, 30.0, 100.0)})
    # full_output silences roundoff warnings; accuracy is checked against exp(u)E1(u) in tests
    val = integrate.quad(_hs_integrand, 0.0, math.pi / 2, args=(x,), points=pts,
                         limit=400, epsabs=0.0, epsrel=1e-11, full_output=1)[0]
    return math.log((2.0 / math.pi) * val / math.sqrt(2.0 * math.pi))


def _hs_log_pdf(x):
    x = np.asarray(x, dtype=float)
    flat = np.abs(x).ravel()
    # evaluate once per distinct |x|
    uniq, inv = np.unique(flat, return_inverse=True)
    vals = np.array([_hs_log_density_standard(v) for v in uniq])
    return vals[inv].reshape(x.shape)


def log_marginal_prior_density(prior, theta, tau):
    """log[(1/tau) pi0(theta/tau)], elementwise in ``theta``."""
    _check_tau(tau)
    theta = np.asarray(theta, dtype=float)
    x = theta / tau
    kind = prior.kind
    if kind is PriorKind.STUDENT_T:
        out = _t_log_pdf(x, prior.df) - math.log(tau)
    elif kind is PriorKind.HORSESHOE:
        out = _hs_log_pdf(x) - math.log(tau)
    elif kind is PriorKind.NORMAL:
        out = -0.5 * x * x - 0.5 * math.log(2 * math.pi) - math.log(tau)
    else:
        raise ParameterError("the point-mass hook has no density")
    return float(out) if out.ndim == 0 else out


def marginal_prior_density(prior, theta, tau):
    return np.exp(log_marginal_prior_density(prior, theta, tau))


def tail_polynomial_check(prior, M, grid=200):
    """Min and max of pi0(theta) |theta|^alpha over |theta| in [M, 1e4 M] (tau = 1)."""
    if M < 1:
        raise ParameterError("M must be at least 1")
    thetas = np.logspace(math.log10(M), math.log10(M) + 4, grid)
    scaled = np.exp(log_marginal_prior_density(prior, thetas, 1.0) + prior.alpha * np.log(thetas))
    return float(scaled.min()), float(scaled.max())


# ---------------------------------------------------------------------------
# theorem-regime diagnostics


@dataclass
class ConditionReport:
    """Finite-n check of the tau regime conditions.

    Margins are on the log scale: positive means the inequality holds with
    that much room. ``c_required`` is the smallest exponent c for which
    tau^(alpha-1) >= (s/n)^c sqrt(log(n/s)); the lower condition asks for it
    to fall below 1 + omega/2.
    """

    lower_ok: bool
    lower_margin: float
    c_required: float
    l2_upper_ok: bool
    l2_upper_margin: float
    l1_upper_ok: bool
    l1_upper_margin: float
    degenerate: bool
    notes: str = ""


def validate_theorem_conditions(prior, tau, n, s, omega):
    if not 1 <= s < n:
        raise ParameterError(f"need 1 <= s < n, got s={s}, n={n}")
    if not omega > 0:
        raise ParameterError("omega must be positive")
    _check_tau(tau)
    a = prior.alpha
    log_ratio = math.log(n / s)           # log(n/s) > 0
    log_sn = -log_ratio                   # log(s/n) < 0
    degenerate = s >= n - 1 or log_ratio < 0.2
    lhs = (a - 1.0) * math.log(tau)       # log tau^(alpha-1)
    half_log_L = 0.5 * math.log(log_ratio)

    c_req = (lhs - half_log_L) / log_sn
    c_max = 1.0 + omega / 2.0
    lower_margin = (c_max - c_req) * log_ratio if c_req > 0 else math.inf
    lower_ok = c_req < c_max

    l2_bound = a * (log_sn + math.log(log_ratio))
    l1_bound = a * log_sn + 0.5 * (a + 1.0) * math.log(log_ratio)
    notes = "log(n/s) is close to 0; the regime conditions are not informative" if degenerate else ""
    return ConditionReport(
        lower_ok=bool(lower_ok),
        lower_margin=float(lower_margin),
        c_required=float(c_req),
        l2_upper_ok=bool(lhs < l2_bound),
        l2_upper_margin=float(l2_bound - lhs),
        l1_upper_ok=bool(lhs < l1_bound),
        l1_upper_margin=float(l1_bound - lhs),
        degenerate=bool(degenerate),
        notes=notes,
    )


def contraction_constants(omega):
    """C1(omega), C2(omega) multiplying the L2 and L1 contraction radii."""
    if omega < 0:
        raise ParameterError("omega must be non-negative")
    c1 = math.sqrt(2 + omega) + math.sqrt(omega)
    c2 = math.sqrt(2 + omega) + math.sqrt(omega**2 / 5) + math.sqrt(omega / 5)
    return c1, c2


# ---------------------------------------------------------------------------
# hard-thresholding value


def _threshold_equation(t, alpha, log_tau):
    return -0.5 * t * t + alpha * math.log(t) - (alpha - 1.0) * log_tau


def threshold_value(alpha, tau, tol=1e-10):
    """Root t >= 1 of exp(-t^2/2) = t^(-alpha) tau^(alpha-1), by bisection."""
    if not alpha > 1:
        raise ParameterError("alpha must exceed 1")
    _check_tau(tau)
    log_tau = math.log(tau)
    lo, hi = THRESHOLD_BRACKET
    f_lo = _threshold_equation(lo, alpha, log_tau)
    f_hi = _threshold_equation(hi, alpha, log_tau)
    if not (f_lo > 0 > f_hi):
        raise NoThresholdError(f"no threshold in [{lo}, {hi}] for alpha={alpha}, tau={tau:g}")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _threshold_equation(mid, alpha, log_tau) > 0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def beta_adaptive_tail_probability(c, n, a):
    """P(tau >= a) for tau = tau0^c, tau0 ~ Beta(1, n): (1 - a^(1/c))^n."""
    if not c > 0:
        raise ParameterError("c must be positive")
    if not 0 < a < 1:
        raise ParameterError("a must lie in (0, 1)")
    return math.exp(n * math.log1p(-math.exp(math.log(a) / c)))
