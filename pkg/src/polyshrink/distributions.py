"""Random variates and the few density/quantile primitives the samplers need.

Every sampler takes an :class:`RngStream`. Streams are counter based
(Philox-4x64): the 128-bit key is built from ``(seed, stream_id)`` so
replication ``r`` of an experiment can be regenerated on any worker, in any
order, without touching the state of other replications.
"""

import hashlib

import numpy as np
from scipy.special import erfc, gammaincc

from .errors import DegenerateDensityError, NumericError, ParameterError

MASK64 = (1 << 64) - 1
DEFAULT_GRID_POINTS = 4096


def label_to_substream(*parts):
    """Stable 64-bit tag for a tuple of labels (used to split one stream)."""
    text = "|".join(str(p) for p in parts).encode()
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "little")


class RngStream:
    """Counter-based random stream identified by ``(seed, stream_id)``.

    ``substream`` occupies the top word of the Philox counter, so different
    substreams of one key draw from disjoint blocks of the same cipher.
    A stream is single-threaded; give every worker its own.
    """

    def __init__(self, seed, stream_id=0, substream=0):
        self.seed = int(seed) & MASK64
        self.stream_id = int(stream_id) & MASK64
        self.substream = int(substream) & MASK64
        key = self.seed | (self.stream_id << 64)
        counter = self.substream << 192
        self.generator = np.random.Generator(np.random.Philox(key=key, counter=counter))

    def child(self, *labels):
        """Independent stream for the same (seed, stream_id) keyed by ``labels``."""
        return RngStream(self.seed, self.stream_id, label_to_substream(self.substream, *labels))

    def __repr__(self):
        return f"RngStream(seed={self.seed}, stream_id={self.stream_id}, substream={self.substream})"

    # thin pass-throughs used in hot loops
    def standard_normal(self, size=None):
        return self.generator.standard_normal(size)

    def standard_gamma(self, shape, size=None):
        return self.generator.standard_gamma(shape, size)

    def standard_exponential(self, size=None):
        return self.generator.standard_exponential(size)

    def uniform(self, size=None):
        return self.generator.random(size)


def _check_positive(name, value):
    arr = np.asarray(value, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ParameterError(f"{name} must be positive and finite, got {value!r}")


def sample_inverse_gamma(shape, rate, rng, size=None):
    """Draw from InverseGamma(shape, rate), density ∝ x^(-shape-1) exp(-rate/x).

    ``shape`` and ``rate`` broadcast; each output element is ``rate / G`` with
    ``G ~ Gamma(shape, 1)``.
    """
    _check_positive("shape", shape)
    _check_positive("rate", rate)
    if size is None:
        size = np.broadcast(np.asarray(shape), np.asarray(rate)).shape or None
    return rate / rng.standard_gamma(shape, size)


def inverse_gamma_cdf(x, shape, rate):
    """P(X <= x) for X ~ InverseGamma(shape, rate)."""
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        return np.where(x > 0, gammaincc(shape, rate / np.where(x > 0, x, 1.0)), 0.0)


def sample_beta(a, b, rng, size=None):
    """Draw from Beta(a, b)."""
    _check_positive("a", a)
    _check_positive("b", b)
    return rng.generator.beta(a, b, size)


def standard_normal_cdf(x):
    """Φ(x) through the complementary error function (accurate in the lower tail)."""
    return 0.5 * erfc(-np.asarray(x, dtype=float) / np.sqrt(2.0))


def standard_normal_quantile(p):
    """Φ⁻¹(p) by bisection on the erfc-based CDF followed by a Newton polish.

    Works elementwise on arrays. The lower half is solved directly and the
    upper half by symmetry, so accuracy is limited only by how well ``1 - p``
    is represented for p close to 1.
    """
    p_arr = np.asarray(p, dtype=float)
    if np.any(~np.isfinite(p_arr)) or np.any(p_arr <= 0) or np.any(p_arr >= 1):
        raise ParameterError("p must lie strictly inside (0, 1)")
    upper = p_arr > 0.5
    q = np.where(upper, 1.0 - p_arr, p_arr)

    lo = np.full(q.shape, -40.0)
    hi = np.zeros(q.shape)
    for _ in range(64):
        mid = 0.5 * (lo + hi)
        below = standard_normal_cdf(mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    x = 0.5 * (lo + hi)
    # Newton polish, kept inside the final bracket
    pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
    safe = pdf > 1e-300
    step = np.where(safe, (standard_normal_cdf(x) - q) / np.where(safe, pdf, 1.0), 0.0)
    x = np.clip(x - step, lo, hi)
    x = np.where(q == 0.5, 0.0, x)
    x = np.where(upper, -x, x)
    return float(x) if np.ndim(p) == 0 else x


def inverse_cdf_sample_grid(log_density, support, grid_points=DEFAULT_GRID_POINTS, rng=None, size=None):
    """Sample a 1-D density by inverting its CDF on an equispaced grid.

    ``log_density`` must accept a numpy array of points. It is evaluated at
    the ``grid_points`` cell midpoints of ``support = (lo, hi)``; the density
    is treated as constant on each cell, so the CDF is piecewise linear and a
    uniform draw is inverted exactly within its cell. Adding a constant to
    ``log_density`` leaves the output unchanged.
    """
    lo, hi = float(support[0]), float(support[1])
    if not lo < hi:
        raise ParameterError(f"support must satisfy lo < hi, got {support!r}")
    if grid_points < 64:
        raise ParameterError("grid_points must be at least 64")
    h = (hi - lo) / grid_points
    mids = lo + (np.arange(grid_points) + 0.5) * h
    logf = np.asarray(log_density(mids), dtype=float)
    if logf.shape != mids.shape:
        logf = np.broadcast_to(logf, mids.shape)
    if np.any(np.isnan(logf)) or np.any(logf == np.inf):
        raise NumericError("log-density returned NaN or +inf on the sampling grid")
    top = logf.max()
    if top == -np.inf:
        raise DegenerateDensityError("log-density is -inf on every grid point")
    cdf = np.cumsum(np.exp(logf - top))
    u = rng.uniform(size) * cdf[-1]
    idx = np.searchsorted(cdf, u, side="right")
    idx = np.minimum(idx, grid_points - 1)
    prev = np.where(idx > 0, cdf[idx - 1], 0.0)
    width = cdf[idx] - prev
    frac = np.where(width > 0, (u - prev) / np.where(width > 0, width, 1.0), 0.5)
    x = lo + (idx + frac) * h
    return float(x) if size is None else x


def zoomed_inverse_cdf_sample(log_density, support, grid_points=DEFAULT_GRID_POINTS, rng=None,
                              coarse_points=512, drop=50.0, size=None):
    """Inverse-CDF sampling for a unimodal density that may be very narrow.

    A coarse pass over ``support`` locates the cells within ``drop`` log-units
    of the coarse maximum; the fine grid of ``grid_points`` cells is then laid
    over that window, widened by one coarse cell on each side so that a peak
    falling between coarse nodes is not cut. Requires unimodality, which holds
    for the log-concave global-scale conditionals this is used for.
    """
    lo, hi = float(support[0]), float(support[1])
    if not lo < hi:
        raise ParameterError(f"support must satisfy lo < hi, got {support!r}")
    h = (hi - lo) / coarse_points
    mids = lo + (np.arange(coarse_points) + 0.5) * h
    logf = np.asarray(log_density(mids), dtype=float)
    if np.any(np.isnan(logf)) or np.any(logf == np.inf):
        raise NumericError("log-density returned NaN or +inf on the coarse grid")
    top = logf.max()
    if top == -np.inf:
        raise DegenerateDensityError("log-density is -inf on every coarse grid point")
    keep = np.flatnonzero(logf >= top - drop)
    w_lo = max(lo, mids[keep[0]] - 1.5 * h)
    w_hi = min(hi, mids[keep[-1]] + 1.5 * h)
    return inverse_cdf_sample_grid(log_density, (w_lo, w_hi), grid_points, rng, size)
