"""Special functions behind the battery's p-values.

Thin wrappers over ``scipy.special`` (Cephes), which meet the 1e-10
relative accuracy the battery needs; the test suite checks them against
50-digit mpmath values.
"""

import numpy as np
from scipy import special as _sp


def erfc(x):
    """Complementary error function."""
    return _sp.erfc(x)


def igamc(a, x):
    """Regularized upper incomplete gamma Q(a, x) = Gamma(a, x) / Gamma(a)."""
    return _sp.gammaincc(a, x)


def igam(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    return _sp.gammainc(a, x)


def normal_cdf(x):
    return 0.5 * _sp.erfc(-np.asarray(x, dtype=float) / np.sqrt(2.0))
