"""Independent slow-but-accurate oracles for singular pair integrals.

The inner integral over the second triangle is reduced to one
dimension exactly: a signed fan decomposition over the directed edges
of T2 as seen from the outer point x, with the radial part integrated
in closed form.  The outer integral and the per-edge angular integrals
use adaptive Gauss-Kronrod quadrature.  Nothing here shares code with
the production quadrature rules.
"""

import numpy as np
from scipy.integrate import quad


def _edge_contribution(x, P, Q, alpha, radial_coeffs, tol):
    """One directed-edge term of the fan decomposition.

    radial_coeffs(omega) returns polynomial coefficients (c0, c1, c2)
    of the radial integrand rho^(1+alpha) (c0 + c1 rho + c2 rho^2);
    omega is the unit ray direction.  Only the upper antiderivative
    limit is kept; the lower-limit terms cancel in the signed sum.
    """
    E = Q - P

    def integrand(t):
        y = P + t * E
        r = y - x
        R = np.hypot(r[0], r[1])
        if R == 0.0:
            return 0.0
        omega = r / R
        c0, c1, c2 = radial_coeffs(omega)
        val = 0.0
        for c, expo in ((c0, 2 + alpha), (c1, 3 + alpha), (c2, 4 + alpha)):
            if c != 0.0:
                if abs(expo) < 1e-12:
                    val += c * np.log(R)
                else:
                    val += c * R ** expo / expo
        dtheta = (r[0] * E[1] - r[1] * E[0]) / (R * R)
        return val * dtheta

    # when x projects onto the interior of the segment and is close to
    # it, the integrand peaks sharply there; tell quad where
    ee = float(E @ E)
    t0 = float((x - P) @ E) / ee if ee > 0 else -1.0
    pts = [t0] if 0.0 < t0 < 1.0 else None
    out, _ = quad(integrand, 0.0, 1.0, epsabs=tol, epsrel=tol,
                  limit=400, points=pts)
    return out


def _ccw(tri):
    tri = np.asarray(tri, dtype=float)
    if np.cross(tri[1] - tri[0], tri[2] - tri[0]) < 0:
        return tri[[0, 2, 1]]
    return tri


def inner_kernel_integral(x, tri2, alpha, tol=1e-12):
    """integral over tri2 of |x-y|^alpha dy, for alpha > -2."""
    x = np.asarray(x, dtype=float)
    tri2 = _ccw(tri2)
    total = 0.0
    for k in range(3):
        P = np.asarray(tri2[k], dtype=float)
        Q = np.asarray(tri2[(k + 1) % 3], dtype=float)
        total += _edge_contribution(
            x, P, Q, alpha, lambda om: (1.0, 0.0, 0.0), tol)
    return total


def _affine_hat(tri, corner):
    """Affine function that is 1 on tri[corner], 0 on the others.

    Returns (value_at, gradient).
    """
    A = np.column_stack([np.asarray(tri, dtype=float),
                         np.ones(3)])
    rhs = np.zeros(3)
    rhs[corner] = 1.0
    coef = np.linalg.solve(A, rhs)

    def value(p):
        return coef[0] * p[0] + coef[1] * p[1] + coef[2]

    return value, coef[:2]


def inner_difference_integral(x, tri1, c1, tri2, c2, alpha, tol=1e-12):
    """integral over tri2 of (u(x)-u(y)) (v(x)-v(y)) |x-y|^alpha dy.

    u is the hat that is 1 at tri1[c1] (affine representation of tri1,
    evaluated at x), v likewise for c2; u(y), v(y) use the affine
    representations of tri2 (interpreting the hats on tri2's corners by
    matching physical corner coordinates).  Valid for x outside tri2,
    or x inside tri2 when both differences vanish at y = x (identical
    triangle representations), down to alpha > -4.
    """
    x = np.asarray(x, dtype=float)
    u1, _ = _affine_hat(tri1, c1)
    v1, _ = _affine_hat(tri1, c2)

    # represent the same global hats on tri2: corner weights by
    # physical coincidence with tri1's corners
    def weights_on(tri, corner_point):
        w = np.zeros(3)
        for j in range(3):
            if np.allclose(tri[j], corner_point, atol=1e-13):
                w[j] = 1.0
        return w

    tri2 = _ccw(tri2)
    tri1 = np.asarray(tri1, dtype=float)
    pu = weights_on(tri2, tri1[c1])
    pv = weights_on(tri2, tri1[c2])
    A = np.column_stack([tri2, np.ones(3)])
    cu = np.linalg.solve(A, pu)
    cv = np.linalg.solve(A, pv)
    du = u1(x) - (cu[0] * x[0] + cu[1] * x[1] + cu[2])
    dv = v1(x) - (cv[0] * x[0] + cv[1] * x[1] + cv[2])
    gu = cu[:2]
    gv = cv[:2]

    def coeffs(om):
        # u(x)-u(y) = du - rho * (gu . om), same for v
        a = -float(gu @ om)
        b = -float(gv @ om)
        return (du * dv, du * b + dv * a, a * b)

    total = 0.0
    for k in range(3):
        P = tri2[k]
        Q = tri2[(k + 1) % 3]
        total += _edge_contribution(x, P, Q, alpha, coeffs, tol)
    return total


def _outer_over_triangle(tri1, integrand, tol, order=20, depth=9,
                         refine_edge=None):
    """Adaptive-ish outer integral over tri1 by recursive subdivision.

    integrand(x) is evaluated at interior points only.  refine_edge, if
    given as a pair of vertex coordinates, forces geometric refinement
    toward that edge (where the integrand may be non-smooth).
    """
    from numpy.polynomial.legendre import leggauss

    t, w = leggauss(order)
    t = 0.5 * (t + 1.0)
    w = 0.5 * w

    def tri_quad(A, B, C):
        # tensorized Duffy rule on one triangle
        total = 0.0
        for i in range(order):
            for j in range(order):
                u = t[i]
                vq = t[j] * u
                x = A + u * (B - A) + vq * (C - B)
                total += w[i] * w[j] * u * integrand(x)
        area2 = abs((B[0] - A[0]) * (C[1] - A[1])
                    - (B[1] - A[1]) * (C[0] - A[0]))
        return total * area2

    A, B, C = [np.asarray(p, dtype=float) for p in tri1]
    if refine_edge is None:
        return tri_quad(A, B, C)
    # geometric subdivision toward the given edge
    P, Q = [np.asarray(p, dtype=float) for p in refine_edge]
    # vertex of tri1 farthest from the edge line
    corners = [A, B, C]
    far = max(corners, key=lambda z: abs(np.cross(Q - P, z - P)))
    total = 0.0
    lam = 1.0
    for _ in range(depth):
        lam2 = 0.5 * lam
        # strip between lam2 and lam toward the edge: two triangles
        P1 = P + lam * (far - P)
        Q1 = Q + lam * (far - Q)
        P2 = P + lam2 * (far - P)
        Q2 = Q + lam2 * (far - Q)
        total += tri_quad(P2, Q2, P1) + tri_quad(Q2, Q1, P1)
        lam = lam2
    # innermost sliver
    P1 = P + lam * (far - P)
    Q1 = Q + lam * (far - Q)
    total += tri_quad(P, Q, P1) + tri_quad(Q, Q1, P1)
    return total


def _outer_dispatch(tri1, f, tol, shared):
    """Route the outer integral based on how many vertices are shared.

    Shared edge: refine toward it.  Identical pair: the inner integral
    is non-smooth along all of tri1's boundary, so split at the
    centroid and refine each piece toward its boundary edge.
    """
    if len(shared) == 2:
        edge = (np.array(shared[0]), np.array(shared[1]))
        return _outer_over_triangle(tri1, f, tol, refine_edge=edge)
    if len(shared) == 3:
        G = tri1.mean(axis=0)
        total = 0.0
        for k in range(3):
            P = tri1[k]
            Q = tri1[(k + 1) % 3]
            total += _outer_over_triangle((G, P, Q), f, tol,
                                          refine_edge=(P, Q))
        return total
    return _outer_over_triangle(tri1, f, tol)


def pair_kernel_integral(tri1, tri2, alpha, tol=1e-10):
    """Double integral of |x-y|^alpha over tri1 x tri2 (product form)."""
    tri1 = np.asarray(tri1, dtype=float)
    tri2 = np.asarray(tri2, dtype=float)
    shared = [tuple(p) for p in tri1
              if any(np.allclose(p, q, atol=1e-13) for q in tri2)]
    def f(x):
        return inner_kernel_integral(x, tri2, alpha, tol=tol)

    return _outer_dispatch(tri1, f, tol, shared)


def pair_difference_integral(tri1, c1, tri2, c2, alpha, tol=1e-10):
    """Double integral of the difference-form integrand over the pair."""
    tri1 = np.asarray(tri1, dtype=float)
    tri2 = np.asarray(tri2, dtype=float)
    shared = [tuple(p) for p in tri1
              if any(np.allclose(p, q, atol=1e-13) for q in tri2)]
    def f(x):
        return inner_difference_integral(x, tri1, c1, tri2, c2, alpha,
                                         tol=tol)

    return _outer_dispatch(tri1, f, tol, shared)
