"""Sampler correctness checks against exact answers.

* lattice: single-coordinate Gibbs posterior means versus quadrature over a
  grid of priors, fixed tau values and observations;
* conjugate: the normal-prior hook, whose posterior is N(y/2, 1/2) at tau = 1;
* joint: the successive-conditional (Geweke-style) test of the t kernel.
"""

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .oracle import posterior_mean
from .priors import GlobalShrinkage, PriorFamily
from .sampler import ChainConfig, batch_means_se, geweke_joint_test, run_chain

LATTICE_PRIORS = (("t:1.1", PriorFamily.student_t(1.1)), ("t:2.1", PriorFamily.student_t(2.1)),
                  ("hs", PriorFamily.horseshoe()))
LATTICE_TAUS = (0.5, 0.1, 0.001)
LATTICE_YS = (0.0, 1.0, 2.5, 4.0, 6.0)
LATTICE_TOLERANCE_SE = 3.0
LATTICE_MIN_PASS = 44


@dataclass
class CheckRow:
    check: str
    case: str
    expected: float
    estimate: float
    se: float
    tolerance_se: float

    @property
    def z(self):
        if self.se > 0:
            return (self.estimate - self.expected) / self.se
        return 0.0 if self.estimate == self.expected else math.inf

    @property
    def passed(self):
        return abs(self.z) <= self.tolerance_se


@dataclass
class CheckReport:
    rows: list
    summary: dict          # check name -> passed

    @property
    def passed(self):
        return all(self.summary.values())


def lattice_rows(seed=7, n_iter=12000, burn_in=2000):
    rows = []
    cells = itertools.product(enumerate(LATTICE_PRIORS), enumerate(LATTICE_TAUS), enumerate(LATTICE_YS))
    for (i, (label, prior)), (j, tau), (k, y) in cells:
        exact = posterior_mean(prior, tau, y)
        cfg = ChainConfig(n_iter=n_iter, burn_in=burn_in, seed=seed, stream_id=100 * i + 10 * j + k)
        draws = run_chain(np.array([y]), prior, GlobalShrinkage.deterministic(tau), cfg).theta[:, 0]
        rows.append(CheckRow("lattice", f"{label} tau={tau:g} y={y:g}", exact, float(draws.mean()),
                             float(batch_means_se(draws)), LATTICE_TOLERANCE_SE))
    return rows


def conjugate_rows(seed=11, y=2.0, tau=1.0, n_iter=12000, burn_in=2000):
    """Normal prior: theta | y ~ N(y tau^2/(1+tau^2), tau^2/(1+tau^2))."""
    cfg = ChainConfig(n_iter=n_iter, burn_in=burn_in, seed=seed)
    draws = run_chain(np.array([y]), PriorFamily.normal(), GlobalShrinkage.deterministic(tau), cfg).theta[:, 0]
    k = tau * tau / (1.0 + tau * tau)
    mean = float(draws.mean())
    sq = (draws - mean) ** 2
    return [CheckRow("conjugate", "mean", k * y, mean, float(batch_means_se(draws)), 3.0),
            CheckRow("conjugate", "variance", k, float(sq.mean()), float(batch_means_se(sq)), 3.0)]


def joint_rows(seed=20190101):
    return [CheckRow("joint", c.name, c.expected, c.estimate, c.se, c.tolerance_se)
            for c in geweke_joint_test(seed=seed)]


def run_checks(seed=None):
    """Run all three checks; ``seed`` offsets every check's default seed."""
    off = 0 if seed is None else int(seed)
    lattice = lattice_rows(seed=7 + off)
    conj = conjugate_rows(seed=11 + off)
    joint = joint_rows(seed=20190101 + off)
    summary = {
        "lattice": sum(r.passed for r in lattice) >= LATTICE_MIN_PASS,
        "conjugate": all(r.passed for r in conj),
        "joint": all(r.passed for r in joint),
    }
    return CheckReport(rows=lattice + conj + joint, summary=summary)
