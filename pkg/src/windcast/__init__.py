"""Conditional wind-power scenario generation and day-ahead bidding.

Modules: ``data`` (CSV I/O, synthetic data), ``pca``, ``neural`` and ``flow``
(conditional normalizing flow), ``copula`` (quantile-regression Gaussian
copula), ``lp`` (simplex), ``market`` (bidding problem), ``metrics``,
``harness`` (experiments) and ``cli``.
"""

__version__ = "0.1.0"
