# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled assembly hot kernels.

C-loop versions of the functions in the reference module; both expose
the same contract and the package picks this one at import time when
the extension built successfully.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport pow
from scipy.special.cython_special cimport beta as c_beta
from scipy.special.cython_special cimport betainc as c_betainc

cnp.import_array()

__all__ = ["green_batch", "green_remainder"]


def green_batch(double s, double k_ns,
                cnp.ndarray x_in, cnp.ndarray y_in):
    """Green kernel of the unit disk at point pairs, s in (0, 1).

    G(x, y) = k_ns |x-y|^(2s-2) B_w(s, 1-s) with w = D / (D + |x-y|^2)
    and D = (1-|x|^2)(1-|y|^2).
    """
    cdef double[:, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, ::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef Py_ssize_t m = x.shape[0], i
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double bfull = c_beta(s, 1.0 - s)
    cdef double d2, Dx, Dy, D, w
    for i in range(m):
        d2 = (x[i, 0] - y[i, 0]) ** 2 + (x[i, 1] - y[i, 1]) ** 2
        Dx = 1.0 - x[i, 0] * x[i, 0] - x[i, 1] * x[i, 1]
        if Dx < 0.0:
            Dx = 0.0
        Dy = 1.0 - y[i, 0] * y[i, 0] - y[i, 1] * y[i, 1]
        if Dy < 0.0:
            Dy = 0.0
        D = Dx * Dy
        w = D / (D + d2)
        out[i] = k_ns * bfull * pow(d2, s - 1.0) * c_betainc(s, 1.0 - s, w)
    return out_arr


def green_remainder(double s, double k_ns,
                    cnp.ndarray x_in, cnp.ndarray y_in):
    """G minus its leading diagonal power k_ns B(s,1-s) |x-y|^(2s-2).

    Bounded for arguments away from the unit circle; equals
    -k_ns |x-y|^(2s-2) int_w^1 t^(s-1) (1-t)^(-s) dt.
    """
    cdef double[:, ::1] x = np.ascontiguousarray(x_in, dtype=np.float64)
    cdef double[:, ::1] y = np.ascontiguousarray(y_in, dtype=np.float64)
    cdef Py_ssize_t m = x.shape[0], i
    out_arr = np.empty(m, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double bfull = c_beta(s, 1.0 - s)
    cdef double d2, Dx, Dy, D, w
    for i in range(m):
        d2 = (x[i, 0] - y[i, 0]) ** 2 + (x[i, 1] - y[i, 1]) ** 2
        if d2 <= 0.0:
            out[i] = 0.0
            continue
        Dx = 1.0 - x[i, 0] * x[i, 0] - x[i, 1] * x[i, 1]
        if Dx < 0.0:
            Dx = 0.0
        Dy = 1.0 - y[i, 0] * y[i, 0] - y[i, 1] * y[i, 1]
        if Dy < 0.0:
            Dy = 0.0
        D = Dx * Dy
        w = D / (D + d2)
        out[i] = -k_ns * pow(d2, s - 1.0) * bfull * (
            1.0 - c_betainc(s, 1.0 - s, w))
    return out_arr
