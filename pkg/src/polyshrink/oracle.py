"""Exact one-dimensional posterior summaries by quadrature.

With tau fixed the coordinates decouple and pi(theta | y) ∝ exp(-(y-theta)^2/2)
(1/tau) pi0(theta/tau) is a 1-D density with two modes of very different
widths: a spike of scale tau at 0 and a unit-width bump near y. The grid is
the image of a uniform grid under theta = tau * sinh(s), which is linear at
scale tau around 0 and geometric further out, so both modes are resolved even
for tau around 1e-57. Integrals use the midpoint rule in s.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import logsumexp

from .errors import NumericError, ParameterError, UndefinedRatioError
from .priors import PriorKind, log_marginal_prior_density

MIN_RESOLUTION = 2048
DEFAULT_RESOLUTION = 4096
DEFAULT_MAX_STEP = 0.01
SPAN_PAD = 12.0
SINGULAR_CELLS = 128


@dataclass
class PosteriorGrid:
    points: np.ndarray        # ascending theta values
    log_density: np.ndarray   # unnormalized log posterior at points
    log_weights: np.ndarray   # log quadrature weights (dtheta per point)
    log_norm: float
    y: float

    @property
    def density(self):
        return np.exp(self.log_density - self.log_norm)

    @property
    def cell_mass(self):
        return np.exp(self.log_density + self.log_weights - self.log_norm)


def _log_cosh(s):
    a = np.abs(s)
    return a + np.log1p(np.exp(-2.0 * a)) - math.log(2.0)


def posterior_grid(prior, tau, y, resolution=DEFAULT_RESOLUTION, max_step=DEFAULT_MAX_STEP):
    if resolution < MIN_RESOLUTION:
        raise ParameterError(f"resolution must be at least {MIN_RESOLUTION}")
    if not tau > 0:
        raise ParameterError("tau must be positive")
    y = float(y)
    lo = min(0.0, y) - SPAN_PAD
    hi = max(0.0, y) + SPAN_PAD
    s_lo, s_hi = math.asinh(lo / tau), math.asinh(hi / tau)
    span = s_hi - s_lo
    n_pts = max(resolution, math.ceil(span / max_step))
    n_pts += n_pts % 2
    ds = span / n_pts
    s = s_lo + (np.arange(n_pts) + 0.5) * ds
    theta = tau * np.sinh(s)
    log_w = math.log(tau) + _log_cosh(s) + math.log(ds)

    log_prior = log_marginal_prior_density(prior, theta, tau)
    if not np.all(np.isfinite(log_prior)):
        raise NumericError("prior log-density is not finite on the grid")
    log_post = -0.5 * (y - theta) ** 2 + log_prior
    if prior.kind is PriorKind.HORSESHOE:
        _fix_singular_cells(prior, tau, y, s, ds, log_post, log_w)
    log_norm = float(logsumexp(log_post + log_w))
    return PosteriorGrid(points=theta, log_density=log_post, log_weights=log_w, log_norm=log_norm, y=y)


def _fix_singular_cells(prior, tau, y, s, ds, log_post, log_w, cells=SINGULAR_CELLS):
    """Integrate the cells next to a log-singular prior spike adaptively.

    The midpoint rule converges only at first order across log|theta|, so
    the ``cells`` nearest 0 get their weight from quadrature instead.
    Densities at the nodes are left unchanged.
    """
    centre = np.flatnonzero(np.abs(s) < cells * ds)
    if centre.size == 0:
        return
    shift = float(np.max(log_post[centre]))

    def integrand(v):
        th = tau * math.sinh(v)
        if th == 0.0:
            return 0.0
        lp = float(log_marginal_prior_density(prior, th, tau))
        return math.exp(-0.5 * (y - th) ** 2 + lp - shift) * tau * math.cosh(v)

    for i in centre:
        a, b = s[i] - 0.5 * ds, s[i] + 0.5 * ds
        pts = [0.0] if a < 0.0 < b else None
        mass = integrate.quad(integrand, a, b, points=pts, limit=100, epsabs=0.0, epsrel=1e-10)[0]
        log_w[i] = math.log(mass) + shift - log_post[i]


def posterior_mean_1d(grid):
    return float(np.sum(grid.cell_mass * grid.points))


def posterior_variance_1d(grid):
    m = grid.cell_mass
    mean = np.sum(m * grid.points)
    return float(np.sum(m * (grid.points - mean) ** 2))


def posterior_mean(prior, tau, y, resolution=DEFAULT_RESOLUTION):
    return posterior_mean_1d(posterior_grid(prior, tau, y, resolution))


def shrinkage_coefficient(prior, tau, y, resolution=DEFAULT_RESOLUTION):
    """E(theta | y) / y."""
    if y == 0:
        raise UndefinedRatioError("shrinkage coefficient is undefined at y = 0")
    return posterior_mean(prior, tau, y, resolution) / y


def split_point(grid, y):
    """Antimode between the zero mode and the signal mode, or None.

    The lowest posterior density strictly between 0 and y. When that lowest
    point sits at either end of the interval the posterior has no dip between
    0 and y and None is returned.
    """
    a, b = sorted((0.0, y))
    idx = np.flatnonzero((grid.points > a) & (grid.points < b))
    if idx.size >= 3:
        k = int(np.argmin(grid.log_density[idx]))
        if 0 < k < idx.size - 1:
            return _parabolic_min(grid.points[idx[k - 1:k + 2]], grid.log_density[idx[k - 1:k + 2]])
    return None


def _parabolic_min(x, f):
    """Vertex of the parabola through three points, kept inside their span."""
    (x0, x1, x2), (f0, f1, f2) = x, f
    num = (x1 - x0) ** 2 * (f1 - f2) - (x1 - x2) ** 2 * (f1 - f0)
    den = (x1 - x0) * (f1 - f2) - (x1 - x2) * (f1 - f0)
    if den == 0:
        return float(x1)
    return float(min(max(x1 - 0.5 * num / den, x0), x2))


def mode_masses(grid, y):
    """(mass_zero, mass_signal): posterior mass on either side of the antimode.

    Without an antimode the posterior has one mode and all mass goes to the
    side it lies on (closer to 0 or closer to y).
    """
    y = float(y)
    if y == 0:
        return 1.0, 0.0
    split = split_point(grid, y)
    if split is None:
        mode = grid.points[int(np.argmax(grid.log_density))]
        return (1.0, 0.0) if abs(mode) <= abs(mode - y) else (0.0, 1.0)
    # cumulative mass at cell edges, interpolated at the split
    pts = grid.points
    edges = np.concatenate([[pts[0]], 0.5 * (pts[1:] + pts[:-1]), [pts[-1]]])
    cum = np.concatenate([[0.0], np.cumsum(grid.cell_mass)])
    below = float(np.interp(split, edges, cum))
    total = float(cum[-1])
    mass_zero = below if y > 0 else total - below
    return mass_zero, total - mass_zero


def shrinkage_profile(prior, tau, n_over_s, c_grid, resolution=DEFAULT_RESOLUTION):
    """Rows (c, y, E(theta|y)/y) with y = sqrt(c log(n/s))."""
    if not n_over_s > 1:
        raise ParameterError("n_over_s must exceed 1")
    log_ratio = math.log(n_over_s)
    rows = []
    for c in c_grid:
        y = math.sqrt(c * log_ratio)
        rows.append((float(c), y, shrinkage_coefficient(prior, tau, y, resolution)))
    return rows


def crossing(profile, level):
    """Smallest c at which the coefficient reaches ``level`` (linear interpolation)."""
    cs = np.array([r[0] for r in profile])
    coef = np.array([r[-1] for r in profile])
    above = np.flatnonzero(coef >= level)
    if above.size == 0:
        return math.nan
    k = int(above[0])
    if k == 0:
        return float(cs[0])
    c0, c1, f0, f1 = cs[k - 1], cs[k], coef[k - 1], coef[k]
    return float(c0 + (level - f0) * (c1 - c0) / (f1 - f0))


def transition_width(profile, lo=0.1, hi=0.9):
    """c-width over which the shrinkage coefficient rises from ``lo`` to ``hi``."""
    return crossing(profile, hi) - crossing(profile, lo)
