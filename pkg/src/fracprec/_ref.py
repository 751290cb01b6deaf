"""Reference implementations of the assembly hot kernels.

Pure numpy/scipy versions of the functions provided by the compiled
extension module.  Either module satisfies the same contract; the
package picks the compiled one at import time when it is available.

All point arrays are flat (M, 2) float64; outputs are (M,) float64.
"""

import numpy as np
from scipy.special import beta as beta_fn
from scipy.special import betainc

__all__ = ["green_batch", "green_remainder"]


def green_batch(s, k_ns, x, y):
    """Green kernel of the unit disk at point pairs, s in (0, 1).

    G(x, y) = k_ns |x-y|^(2s-2) B_w(s, 1-s) with w = D / (D + |x-y|^2)
    and D = (1-|x|^2)(1-|y|^2).
    """
    d2 = ((x - y) ** 2).sum(axis=-1)
    Dx = np.maximum(1.0 - (x ** 2).sum(axis=-1), 0.0)
    Dy = np.maximum(1.0 - (y ** 2).sum(axis=-1), 0.0)
    D = Dx * Dy
    w = D / (D + d2)
    with np.errstate(divide="ignore"):
        main = d2 ** (s - 1.0)
    return k_ns * beta_fn(s, 1.0 - s) * main * betainc(s, 1.0 - s, w)


def green_remainder(s, k_ns, x, y):
    """G minus its leading diagonal power k_ns B(s,1-s) |x-y|^(2s-2).

    Bounded for arguments away from the unit circle; equals
    -k_ns |x-y|^(2s-2) int_w^1 t^(s-1) (1-t)^(-s) dt.
    """
    d2 = ((x - y) ** 2).sum(axis=-1)
    Dx = np.maximum(1.0 - (x ** 2).sum(axis=-1), 0.0)
    Dy = np.maximum(1.0 - (y ** 2).sum(axis=-1), 0.0)
    D = Dx * Dy
    w = D / (D + d2)
    with np.errstate(divide="ignore", invalid="ignore"):
        main = d2 ** (s - 1.0)
        tail = beta_fn(s, 1.0 - s) * (1.0 - betainc(s, 1.0 - s, w))
        out = -k_ns * main * tail
    return np.where(d2 > 0, out, 0.0)
