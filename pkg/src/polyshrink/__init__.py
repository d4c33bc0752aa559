"""Polynomial-tailed shrinkage priors for sparse normal means.

Gibbs samplers, one-dimensional quadrature oracles and simulation grids for
the model y = theta + standard normal noise under Student-t and horseshoe
local-global priors.
"""

__version__ = "0.1.0"
