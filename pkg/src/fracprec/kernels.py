"""Closed-form and special-function kernel evaluations.

Provides the normalization constants of the fractional Laplacian, the
explicit Green kernel of the unit ball (hypergeometric form, analytic
continuation to negative order, and elementary closed forms for special
orders), and the homogeneous pair kernel of the singular-integral
bilinear form.

All functions here are scalar and pure; the assembly hot loops use a
compiled re-implementation of the same formulas.
"""

import cmath
import math
from dataclasses import dataclass, field

__all__ = [
    "FractionalOrder",
    "KernelEval",
    "boggio_r",
    "gauss_2f1",
    "boggio_integral",
    "green_kernel",
    "closed_form_kernel",
    "frac_lap_kernel",
]

_CLOSED_FORM_ORDERS = {
    (2, 0.5), (2, -0.5), (1, 0.5), (1, -0.5), (2, 0.25), (2, 0.7), (2, 0.75),
}


@dataclass(frozen=True)
class FractionalOrder:
    """Order parameter s in dimension n with derived constants.

    Attributes
    ----------
    n : int
        Space dimension (1 or 2).
    s : float
        Order parameter; the operator has order 2s.  Supported range is
        0 < |s| <= 1 with s > -n/2.
    c_ns : float
        Constant of the singular-integral representation; for s < 0 the
        positive Riesz-potential constant is used so that the weakly
        singular bilinear form is positive definite.
    k_ns : float
        Constant of the Green kernel, 2^(1-2s) / (|S^(n-1)| Gamma(s)^2)
        with the standard surface measure |S^(n-1)| = 2 pi^(n/2) / Gamma(n/2).
    a_ns : float
        Constant of the exact solution a_ns (1-|x|^2)^s for unit load.
    """

    n: int
    s: float
    c_ns: float = field(init=False)
    k_ns: float = field(init=False)
    a_ns: float = field(init=False)

    def __post_init__(self):
        n, s = self.n, self.s
        if n not in (1, 2):
            raise ValueError(f"unsupported dimension n={n}")
        if s == 0 or abs(s) > 1 or (s <= -n / 2 and (n, s) != (1, -0.5)):
            raise ValueError(f"order s={s} outside supported range for n={n}")
        if (n, s) == (1, -0.5):
            # Green kernel constants are finite here, but the Riesz
            # constant hits a Gamma pole (logarithmic case).
            c = math.nan
        elif s > 0:
            c = 2 ** (2 * s) * s * math.gamma((n + 2 * s) / 2) / (
                math.pi ** (n / 2) * math.gamma(1 - s))
        else:
            # Riesz potential constant (positive for -n/2 < s < 0).
            c = 2 ** (2 * s) * math.gamma((n + 2 * s) / 2) / (
                math.pi ** (n / 2) * math.gamma(-s))
        sphere = 2 * math.pi ** (n / 2) / math.gamma(n / 2)
        k = 2 ** (1 - 2 * s) / (sphere * math.gamma(s) ** 2)
        if (n, s) == (1, -0.5):
            a = math.nan
        else:
            a = math.gamma(n / 2) / (
                2 ** (2 * s) * math.gamma(1 + s) * math.gamma(s + n / 2))
        object.__setattr__(self, "c_ns", c)
        object.__setattr__(self, "k_ns", k)
        object.__setattr__(self, "a_ns", a)

    @property
    def has_closed_form(self):
        return (self.n, self.s) in _CLOSED_FORM_ORDERS


@dataclass(frozen=True)
class KernelEval:
    """Green kernel value together with the evaluation path used."""

    value: float
    regime: str  # "general-2F1" | "closed-form" | "continuation-N"


def _as_point(x, n):
    if n == 1:
        if isinstance(x, (int, float)):
            return (float(x),)
        return (float(x[0]),)
    return (float(x[0]), float(x[1]))


def _dist(x, y):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(x, y)))


def boggio_r(x, y):
    """Similarity variable r(x,y) = (1-|x|^2)_+ (1-|y|^2)_+ / |x-y|^2."""
    if len(x) != len(y):
        raise ValueError("dimension mismatch")
    d2 = sum((a - b) ** 2 for a, b in zip(x, y))
    if d2 == 0.0:
        raise ValueError("r(x,y) undefined at x = y")
    px = max(1.0 - sum(a * a for a in x), 0.0)
    py = max(1.0 - sum(b * b for b in y), 0.0)
    return px * py / d2


def gauss_2f1(a, b, c, z, tol=1e-16, max_terms=500000):
    """Gauss hypergeometric function 2F1(a,b;c;z) for z <= 0.

    Evaluated by the truncated power series; for z < -0.5 the Pfaff
    transformation 2F1(a,b;c;z) = (1-z)^(-a) 2F1(a,c-b;c;z/(z-1)) maps
    the argument into [1/3, 1) where the series still converges.
    Requires c > b > 0.
    """
    if not (c > b > 0):
        raise ValueError(f"need c > b > 0, got b={b}, c={c}")
    if z > 0:
        raise ValueError(f"need z <= 0, got z={z}")
    if z < -0.5:
        return (1.0 - z) ** (-a) * _hyp_series(a, c - b, c, z / (z - 1.0),
                                               tol, max_terms)
    return _hyp_series(a, b, c, z, tol, max_terms)


def _hyp_series(a, b, c, z, tol=1e-16, max_terms=500000):
    """Power series of 2F1 for |z| < 1 (used with -1/2 <= z < 1)."""
    term = 1.0
    total = 1.0
    for k in range(max_terms):
        term *= (a + k) * (b + k) / ((c + k) * (1.0 + k)) * z
        total += term
        if abs(term) < tol * abs(total):
            return total
    raise RuntimeError("2F1 series did not converge")


def _beta_inc(a, b, w):
    """Unregularized incomplete beta B_w(a,b) = int_0^w t^(a-1)(1-t)^(b-1) dt.

    Needs a > 0 and w in [0,1).  For w > 0.7 with b > 0 the complement
    B(a,b) - B_(1-w)(b,a) is used so both branches converge geometrically.
    """
    if w == 0.0:
        return 0.0
    if w > 0.7 and b > 0:
        beta = math.exp(math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b))
        return beta - _beta_inc(b, a, 1.0 - w)
    total = 0.0
    coeff = 1.0  # (1-b)_k / k!
    wpow = w ** a
    for k in range(100000):
        delta = coeff * wpow / (a + k)
        total += delta
        if abs(delta) < 1e-17 * max(abs(total), 1e-300):
            return total
        coeff *= (1 - b + k) / (k + 1.0)
        wpow *= w
    raise RuntimeError("incomplete beta series did not converge")


def boggio_integral(n, s, r):
    """The radial integral of the Green kernel, int_0^r t^(s-1) (1+t)^(-n/2) dt.

    Valid for s > 0.  Equals (r^s / s) 2F1(n/2, s; s+1; -r); substituting
    t = tau/(1-tau) identifies it with the incomplete beta function
    B_w(s, n/2 - s) at w = r/(1+r), which is how it is evaluated.
    """
    if s <= 0:
        raise ValueError("boggio_integral requires s > 0")
    if r < 0:
        raise ValueError("negative r")
    if r == 0.0:
        return 0.0
    return _beta_inc(s, n / 2 - s, r / (1.0 + r))


def _green_2f1(order, x, y):
    n, s = order.n, order.s
    rho = _dist(x, y)
    r = boggio_r(x, y)
    if r == 0.0:
        return 0.0
    return order.k_ns * rho ** (2 * s - n) * boggio_integral(n, s, r)


def _green_continuation(order, x, y, N=0):
    """Analytic continuation of the Green kernel, valid for s > -(N+1).

    Repeated integration by parts of the radial integral gives

        I_0 = sum_{m=0}^{N} (prod_{l<m} B_l) A_m + (prod_{l<=N} B_l) J,

    with A_m = r^(s+m) (1+r)^(-n/2-m) / (s+m), B_m = (n/2+m)/(s+m) and
    the convergent remainder J = int_0^r t^(s+N) (1+t)^(-n/2-N-1) dt,
    evaluated through 2F1 with shifted parameters.
    """
    n, s = order.n, order.s
    if s <= -(N + 1):
        raise ValueError(f"continuation depth N={N} requires s > {-(N + 1)}")
    rho = _dist(x, y)
    r = boggio_r(x, y)
    if r == 0.0 and s > 0:
        return 0.0
    total = 0.0
    prod = 1.0
    for m in range(N + 1):
        total += prod * r ** (s + m) * (1.0 + r) ** (-n / 2 - m) / (s + m)
        prod *= (n / 2 + m) / (s + m)
    # Remainder int_0^r t^(s+N) (1+t)^(-n/2-N-1) dt = B_w(s+N+1, n/2-s).
    remainder = _beta_inc(s + N + 1, n / 2 - s, r / (1.0 + r))
    return order.k_ns * rho ** (2 * s - n) * (total + prod * remainder)


def closed_form_kernel(order, x, y):
    """Elementary closed forms of the Green kernel for special orders.

    Supported: (n,s) in {(2, +-1/2), (1, +-1/2), (2, 1/4), (2, 7/10),
    (2, 3/4)}.  The quarter-order formulas use complex arithmetic whose
    imaginary parts cancel; the real part is returned.
    """
    n, s = order.n, order.s
    if (n, s) not in _CLOSED_FORM_ORDERS:
        raise ValueError(f"no closed form for (n, s) = ({n}, {s})")
    x = _as_point(x, n)
    y = _as_point(y, n)
    rho = _dist(x, y)
    r = boggio_r(x, y)
    k = order.k_ns
    if r == 0.0 and s > 0:
        return 0.0
    if (n, s) == (2, 0.5):
        return (1.0 / math.pi ** 2) * math.atan(math.sqrt(r)) / rho
    if (n, s) == (2, -0.5):
        return -(1.0 / math.pi ** 2) * (
            1.0 / math.sqrt(r) + math.atan(math.sqrt(r))) / rho ** 3
    if (n, s) == (1, 0.5):
        return 2.0 * k * math.asinh(math.sqrt(r))
    if (n, s) == (1, -0.5):
        xx, yy = x[0], y[0]
        wx = math.sqrt(1.0 - xx * xx)
        wy = math.sqrt(1.0 - yy * yy)
        return (xx * yy - 1.0) / (math.pi * rho ** 2 * wx * wy)
    if (n, s) == (2, 0.25):
        z = r ** 0.25 * cmath.exp(1j * math.pi / 4)
        val = -2.0 * k * rho ** -1.5 * cmath.exp(3j * math.pi / 4) * (
            _catan(z) + cmath.atanh(z))
        return _take_real(val)
    if (n, s) == (2, 0.75):
        z = r ** 0.25 * cmath.exp(1j * math.pi / 4)
        val = 2.0 * k * rho ** -0.5 * cmath.exp(1j * math.pi / 4) * (
            _catan(z) - cmath.atanh(z))
        return _take_real(val)
    if (n, s) == (2, 0.7):
        p = r ** 0.1
        e = lambda t: cmath.exp(1j * math.pi * t)
        val = -2.0 * k * rho ** -0.6 * (
            math.atan(p)
            + e(0.3) * cmath.atanh(p * e(0.1))
            + e(0.9) * cmath.atanh(p * e(0.3))
            + e(0.1) * cmath.atanh(p * e(0.7))
            + e(0.7) * cmath.atanh(p * e(0.9)))
        return _take_real(val)
    raise AssertionError("unreachable")


def _catan(z):
    # arctan on the principal branch via atanh: atan(z) = -i atanh(i z).
    return -1j * cmath.atanh(1j * z)


def _take_real(val):
    if abs(val) > 0 and abs(val.imag) > 1e-10 * abs(val):
        raise ArithmeticError(f"imaginary residue {val.imag} in closed form")
    return val.real


def green_kernel(order, x, y, path="auto", N=0):
    """Green kernel of the Dirichlet problem on the unit ball.

    Parameters
    ----------
    order : FractionalOrder
    x, y : points (scalars for n = 1)
    path : str
        "auto" picks a closed form when one exists, else the
        hypergeometric form for s > 0 and the continuation for s < 0.
        "2f1", "closed" and "continuation" force a specific path.
    N : int
        Continuation depth (continuation path only).

    Returns
    -------
    KernelEval
    """
    n, s = order.n, order.s
    x = _as_point(x, n)
    y = _as_point(y, n)
    if x == y:
        raise ValueError("kernel undefined at x = y")
    if path == "auto":
        if order.has_closed_form:
            path = "closed"
        elif s > 0:
            path = "2f1"
        else:
            path = "continuation"
    if path == "closed":
        return KernelEval(closed_form_kernel(order, x, y), "closed-form")
    if path == "2f1":
        if s <= 0:
            raise ValueError("hypergeometric path requires s > 0")
        return KernelEval(_green_2f1(order, x, y), "general-2F1")
    if path == "continuation":
        return KernelEval(_green_continuation(order, x, y, N=N),
                          f"continuation-{N}")
    raise ValueError(f"unknown path {path!r}")


def frac_lap_kernel(order, x, y):
    """Homogeneous pair kernel c_ns |x-y|^(-n-2s) of the singular form."""
    x = _as_point(x, order.n)
    y = _as_point(y, order.n)
    d = _dist(x, y)
    if d == 0.0:
        raise ValueError("kernel undefined at x = y")
    return order.c_ns * d ** (-order.n - 2 * order.s)
