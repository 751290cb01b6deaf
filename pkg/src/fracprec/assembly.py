"""Quadrature rules and Galerkin matrix assembly.

Singular element-pair integrals are computed with regularizing
coordinate transformations that map a touching triangle pair onto
[0,1]^4, after which the integrand is a power of the singular variables
times a smooth function.  Two interchangeable weight constructions are
provided: a geometrically graded composite Gauss rule toward the
singular faces, and a Gauss-Jacobi rule that absorbs the known power
exactly.  Both return plain point/weight arrays, so the assembly kernels
do not care which one they are given.

Reference conventions: a triangle (A, B, C) is parameterized over the
simplex S = {0 <= u2 <= u1 <= 1} by m(u) = A + u1 (B - A) + u2 (C - B).
For a common-edge pair the shared edge must be (A, B) of both triangles,
traversed in the same direction; for a common-vertex pair the shared
vertex must be A of both.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from . import _backend
from .kernels import FractionalOrder, green_kernel
from .mesh import TriMesh, build_barycentric_dual, radial_projection

__all__ = [
    "QuadratureRule",
    "GalerkinSystem",
    "gauss_rule_01",
    "gauss_jacobi_rule_01",
    "graded_gauss_rule_01",
    "triangle_rule",
    "sauter_schwab_rule",
    "sauter_schwab_jacobi_rule",
    "pair_configuration",
    "assemble_fractional_stiffness",
    "assemble_convection",
    "assemble_boggio_dual",
    "assemble_duality",
    "assemble_opposite_order",
    "assemble_load",
    "frac_lap_apply",
    "build_system",
]


@dataclass
class QuadratureRule:
    """Reference-domain quadrature nodes and weights."""

    points: np.ndarray
    weights: np.ndarray
    kind: str

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.points) != len(self.weights):
            raise ValueError("points/weights length mismatch")


# -- one-dimensional rules ---------------------------------------------------


def gauss_rule_01(n):
    """n-point Gauss-Legendre rule on [0,1]."""
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


def gauss_jacobi_rule_01(n, beta):
    """n-point rule for integrals of t^beta * f(t) over [0,1], beta > -1.

    Returns nodes t and weights W such that sum W_q f(t_q) approximates
    the weighted integral; the singular factor t^beta is exact.
    """
    if beta <= -1:
        raise ValueError(f"need beta > -1, got {beta}")
    x, w = roots_jacobi(n, 0.0, beta)
    t = 0.5 * (x + 1.0)
    return t, w * 0.5 ** (beta + 1.0)


def graded_gauss_rule_01(n, levels, ratio=0.5):
    """Composite Gauss rule on [0,1], geometrically graded toward 0.

    The interval is split into `levels` cells [r^(k+1), r^k] with the
    innermost cell [0, r^(levels-1)], and an n-point Gauss rule is
    mapped onto each cell.
    """
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if not (0.0 < ratio < 1.0):
        raise ValueError("ratio must lie in (0,1)")
    x, w = gauss_rule_01(n)
    cuts = [ratio ** k for k in range(levels)] + [0.0]
    ts, ws = [], []
    for k in range(levels):
        a, b = cuts[k + 1], cuts[k]
        ts.append(a + (b - a) * x)
        ws.append((b - a) * w)
    return np.concatenate(ts), np.concatenate(ws)


# -- triangle rules ----------------------------------------------------------

# symmetric rules on the corner triangle (0,0),(1,0),(0,1); weights sum
# to the reference area 1/2
_TRI_RULES = {
    1: ([(1 / 3, 1 / 3)], [0.5]),
    2: ([(1 / 6, 1 / 6), (2 / 3, 1 / 6), (1 / 6, 2 / 3)],
        [1 / 6, 1 / 6, 1 / 6]),
    4: ([(0.445948490915965, 0.445948490915965),
         (0.445948490915965, 0.108103018168070),
         (0.108103018168070, 0.445948490915965),
         (0.091576213509771, 0.091576213509771),
         (0.091576213509771, 0.816847572980459),
         (0.816847572980459, 0.091576213509771)],
        [0.111690794839005, 0.111690794839005, 0.111690794839005,
         0.054975871827661, 0.054975871827661, 0.054975871827661]),
    6: ([(0.249286745170910, 0.249286745170910),
         (0.249286745170910, 0.501426509658179),
         (0.501426509658179, 0.249286745170910),
         (0.063089014491502, 0.063089014491502),
         (0.063089014491502, 0.873821971016996),
         (0.873821971016996, 0.063089014491502),
         (0.310352451033785, 0.636502499121399),
         (0.636502499121399, 0.053145049844816),
         (0.053145049844816, 0.310352451033785),
         (0.310352451033785, 0.053145049844816),
         (0.636502499121399, 0.310352451033785),
         (0.053145049844816, 0.636502499121399)],
        [0.058393137863189, 0.058393137863189, 0.058393137863189,
         0.025422453185104, 0.025422453185104, 0.025422453185104,
         0.041425537809187, 0.041425537809187, 0.041425537809187,
         0.041425537809187, 0.041425537809187, 0.041425537809187]),
}


def triangle_rule(order):
    """Symmetric rule on the reference triangle, in (u1, u2) coordinates
    of the simplex {0 <= u2 <= u1 <= 1}; weights sum to 1/2."""
    key = min(k for k in _TRI_RULES if k >= min(order, 6))
    pts, w = _TRI_RULES[key]
    pts = np.asarray(pts, dtype=float)
    # corner coordinates (x, y) -> simplex coordinates (x + y, y)
    u = np.column_stack([pts[:, 0] + pts[:, 1], pts[:, 1]])
    return u, np.asarray(w, dtype=float)


# -- regularizing transformations for touching pairs -------------------------

_SS_CASES = ("identical", "common-edge", "common-vertex")


def _ss_maps(case, xi, e1, e2, e3):
    """Map [0,1]^4 nodes onto simplex-pair coordinates (u1,u2,v1,v2).

    Returns a list of per-subdomain (u1, u2, v1, v2, extra) tuples,
    where extra is the smooth non-monomial part of the Jacobian (1.0
    when the Jacobian is a pure monomial).  The Jacobian monomials and
    the coordinates carrying the kernel singularity differ per
    subdomain; see _SS_TERM_STRUCTURE.
    """
    if case == "identical":
        temp = xi * e1 * e2 * e3
        p0 = xi * e1 * (1 - e2)
        p1 = xi - p0
        p2 = xi - temp
        p3 = xi * (1 - e1)
        p4 = p0 + temp
        p5 = xi * (1 - e1 * e2)
        p6 = xi * e1 - temp
        return [
            (xi, p1, p2, p3, 1.0),
            (p2, p3, xi, p1, 1.0),
            (xi, p4, p5, p0, 1.0),
            (p5, p0, xi, p4, 1.0),
            (p2, p6, xi, p0, 1.0),
            (xi, p0, p2, p6, 1.0),
        ]
    if case == "common-edge":
        # Duffy splitting of the relative coordinates (z1, z2, s):
        # u = (h, h z1), v = (h(1-s), h(1-s) z2) and the mirrored
        # branch with u and v exchanged, where the kernel distance
        # vanishes like xi * e1 on every subdomain.  The non-monomial
        # Jacobian factor (1 - s) rides along as the extra weight.
        terms = []
        for z1, z2, s in [
            (e1, e1 * e2, e1 * e3),
            (e1 * e2, e1, e1 * e3),
            (e1 * e2, e1 * e3, e1),
        ]:
            q = xi * (1.0 - s)
            terms.append((xi, xi * z1, q, q * z2, 1.0 - s))
            terms.append((q, q * z1, xi, xi * z2, 1.0 - s))
        return terms
    if case == "common-vertex":
        A = xi * e2
        B = A * e3
        C = xi * e1
        return [
            (xi, C, A, B, 1.0),
            (A, B, xi, C, 1.0),
        ]
    raise ValueError(f"invalid configuration {case!r}")


# Per subdomain: Jacobian monomial exponents in (xi, eta1, eta2) and
# which of those coordinates carry the kernel singularity, meaning
# |x - y| vanishes proportionally to that coordinate on the subdomain.
_SS_TERM_STRUCTURE = {
    "identical": [((3, 2, 1), (True, True, True))] * 6,
    "common-edge": [((3, 2, 0), (True, True, False))] * 6,
    "common-vertex": [((3, 0, 1), (True, False, False))] * 2,
}


def _ss_assemble_rule(case, node_factory, kind):
    """Build a rule from per-dimension 1D nodes via the case transforms.

    node_factory(mono, singular) returns the 1D (t, W) rule for a
    coordinate whose Jacobian monomial exponent is mono; W must be the
    full weight factor for that coordinate, Jacobian included.
    """
    pts, wts = [], []
    for (mono, sing) in _unique_structures(case):
        dims = []
        for k in range(3):
            dims.append(node_factory(mono[k], sing[k]))
        dims.append(node_factory(0, False))  # eta3 is always regular
        xi, e1, e2, e3 = [a.ravel() for a in np.meshgrid(
            dims[0][0], dims[1][0], dims[2][0], dims[3][0], indexing="ij")]
        w = (dims[0][1][:, None, None, None]
             * dims[1][1][None, :, None, None]
             * dims[2][1][None, None, :, None]
             * dims[3][1][None, None, None, :]).ravel()
        maps = _ss_maps(case, xi, e1, e2, e3)
        for t, (m, s) in enumerate(_SS_TERM_STRUCTURE[case]):
            if (m, s) != (mono, sing):
                continue
            u1, u2, v1, v2, extra = maps[t]
            pts.append(np.column_stack([u1, u2, v1, v2]))
            wts.append(w * extra)
    return QuadratureRule(np.concatenate(pts), np.concatenate(wts), kind)


def _unique_structures(case):
    seen = []
    for entry in _SS_TERM_STRUCTURE[case]:
        if entry not in seen:
            seen.append(entry)
    return seen


def sauter_schwab_rule(case, gauss_order=4, grading_levels=5, ratio=0.5):
    """Graded composite rule for a touching triangle pair on [0,1]^4.

    The regularizing transformation of the given configuration is
    composed with geometric grading (default ratio 1/2, grading_levels
    cells) toward the faces that carry the kernel singularity; the
    remaining coordinates use plain Gauss.  The integrand is evaluated
    in simplex-pair coordinates (u1,u2,v1,v2) and the weights include
    the transformation Jacobian, so summing weight * integrand
    approximates the double integral over the reference pair.
    """
    if case not in _SS_CASES:
        raise ValueError(f"invalid configuration {case!r}")
    plain = gauss_rule_01(gauss_order)
    graded = graded_gauss_rule_01(gauss_order, grading_levels, ratio)

    def node_factory(mono, singular):
        t, w = graded if singular else plain
        return t, w * t ** mono

    kind = (f"sauter-schwab({case}, order {gauss_order}, "
            f"grading levels {grading_levels})")
    return _ss_assemble_rule(case, node_factory, kind)


def sauter_schwab_jacobi_rule(case, alpha, homogeneity, gauss_order=4):
    """Weighted-Gauss rule for kernels |x-y|^alpha on a touching pair.

    homogeneity is the vanishing order of the remaining integrand factor
    at x = y (2 for the difference form (u(x)-u(y))(v(x)-v(y)), 0 for
    the product form u(x) v(y)).  The known power of each singular
    coordinate is integrated exactly by Gauss-Jacobi; the rule evaluates
    the full integrand (kernel included) like any other rule.
    """
    if case not in _SS_CASES:
        raise ValueError(f"invalid configuration {case!r}")
    plain = gauss_rule_01(gauss_order)
    excess = alpha + float(homogeneity)

    def node_factory(mono, singular):
        if not singular:
            t, w = plain
            return t, w * t ** mono
        t, w = gauss_jacobi_rule_01(gauss_order, mono + excess)
        # the integrand itself contributes t^excess on a singular
        # coordinate; divide it out so weight * integrand is exact
        return t, w * t ** (-excess)

    kind = f"sauter-schwab-jacobi({case}, alpha {alpha}, order {gauss_order})"
    return _ss_assemble_rule(case, node_factory, kind)


def pair_configuration(tri1, tri2):
    """Classify a triangle pair and order the vertices per convention.

    Returns (case, perm1, perm2) where permk reorders triangle k's
    vertex indices so that a shared edge is (A,B) of both triangles in
    the same direction, or a shared vertex is A of both.
    """
    t1 = list(tri1)
    t2 = list(tri2)
    shared = [v for v in t1 if v in t2]
    if len(shared) == 3:
        return "identical", (0, 1, 2), (0, 1, 2)
    if len(shared) == 2:
        a, b = shared
        i1 = [t1.index(a), t1.index(b)]
        rest1 = ({0, 1, 2} - set(i1)).pop()
        i2 = [t2.index(a), t2.index(b)]
        rest2 = ({0, 1, 2} - set(i2)).pop()
        return "common-edge", (i1[0], i1[1], rest1), (i2[0], i2[1], rest2)
    if len(shared) == 1:
        a = shared[0]
        i1 = t1.index(a)
        i2 = t2.index(a)
        return ("common-vertex",
                (i1, (i1 + 1) % 3, (i1 + 2) % 3),
                (i2, (i2 + 1) % 3, (i2 + 2) % 3))
    return "disjoint", (0, 1, 2), (0, 1, 2)


def map_simplex(tri_coords, u):
    """Map simplex coordinates (u1,u2) to the triangle (A,B,C)."""
    A, B, C = tri_coords
    return (A[None, :] + np.outer(u[:, 0], B - A)
            + np.outer(u[:, 1], C - B))


# -- pointwise helpers -------------------------------------------------------


def _simplex_hats(u):
    """P1 hat values at simplex coordinates: corners A, B, C of the
    parameterization m(u) = A + u1 (B - A) + u2 (C - B)."""
    u = np.asarray(u, dtype=float)
    return np.column_stack([1.0 - u[:, 0], u[:, 0] - u[:, 1], u[:, 1]])


def expand_interior(mesh, u_interior):
    """Zero-extend an interior-dof vector to all mesh vertices."""
    full = np.zeros(mesh.n_vertices)
    full[mesh.interior_vertices()] = np.asarray(u_interior, dtype=float)
    return full


def element_quadrature(mesh, gauss_order=4):
    """Physical quadrature points of every element, flattened.

    Returns (pts, wts, elem_of): pts is (M,2), wts includes the element
    area factor, elem_of maps each point to its element index.
    """
    u, w = triangle_rule(gauss_order)
    coords = mesh.vertices[mesh.triangles]
    A, B, C = coords[:, 0], coords[:, 1], coords[:, 2]
    # (nt, nq, 2)
    pts = (A[:, None, :]
           + u[None, :, 0, None] * (B - A)[:, None, :]
           + u[None, :, 1, None] * (C - B)[:, None, :])
    wts = 2.0 * mesh.areas()[:, None] * w[None, :]
    nt, nq = wts.shape
    elem_of = np.repeat(np.arange(nt), nq)
    return pts.reshape(-1, 2), wts.ravel(), elem_of


def hat_values(mesh, pts, elem_of):
    """Values of the three corner hats of the containing element at the
    given physical points."""
    pts = np.asarray(pts, dtype=float)
    coords = mesh.vertices[mesh.triangles[elem_of]]
    A, B, C = coords[:, 0], coords[:, 1], coords[:, 2]
    d = (B - A)[:, 0] * (C - A)[:, 1] - (B - A)[:, 1] * (C - A)[:, 0]
    r = pts - A
    lb = (r[:, 0] * (C - A)[:, 1] - r[:, 1] * (C - A)[:, 0]) / d
    lc = ((B - A)[:, 0] * r[:, 1] - (B - A)[:, 1] * r[:, 0]) / d
    return np.column_stack([1.0 - lb - lc, lb, lc])


def _interior_dof_map(mesh):
    """(dofs, dof_of): interior vertex ids and vertex -> dof (-1 else)."""
    dofs = mesh.interior_vertices()
    dof_of = -np.ones(mesh.n_vertices, dtype=np.int64)
    dof_of[dofs] = np.arange(len(dofs))
    return dofs, dof_of


# -- complement weight -------------------------------------------------------


def domain_complement_weight(mesh, order, pts):
    """w(x) = c_ns * integral over the domain complement of |x-y|^(-2-2s).

    Evaluated exactly per straight boundary edge through the divergence
    theorem: |x-y|^(-2-2s) = div_y[(y-x)|y-x|^(-2-2s)] / (-2s), so the
    complement integral is (1/2s) times the boundary flux.  The edge
    integrals have the closed form sign(d) |d|^(-2s) * int cos^(2s),
    with the angular antiderivative an incomplete beta function.
    """
    from scipy.special import betainc, beta as beta_fn

    s = order.s
    pts = np.asarray(pts, dtype=float)
    bedges = mesh.boundary_edges()
    P = mesh.vertices[np.array([e[0] for e in bedges])]
    Q = mesh.vertices[np.array([e[1] for e in bedges])]
    E = Q - P
    L = np.hypot(E[:, 0], E[:, 1])
    tau = E / L[:, None]
    # boundary is oriented counterclockwise (domain on the left), so the
    # outward normal is the tangent rotated clockwise
    nrm = np.column_stack([tau[:, 1], -tau[:, 0]])

    bb = 0.5 * beta_fn(0.5, s + 0.5)

    def F(theta):
        sgn = np.sign(theta)
        return sgn * bb * betainc(0.5, s + 0.5, np.sin(theta) ** 2)

    total = np.zeros(len(pts))
    # blocked over points x edges
    step = max(1, 2_000_000 // max(len(bedges), 1))
    for lo in range(0, len(pts), step):
        x = pts[lo:lo + step]
        rx = P[None, :, :] - x[:, None, :]           # (m, ne, 2)
        d = np.einsum("mne,ne->mn", rx, nrm)
        u0 = np.einsum("mne,ne->mn", rx, tau)
        u1 = u0 + L[None, :]
        ad = np.abs(d)
        safe = np.where(ad > 1e-14, ad, 1.0)
        th0 = np.arctan(u0 / safe)
        th1 = np.arctan(u1 / safe)
        contrib = np.sign(d) * safe ** (-2.0 * s) * (F(th1) - F(th0))
        contrib[ad <= 1e-14] = 0.0
        total[lo:lo + step] = contrib.sum(axis=1)
    return order.c_ns / (2.0 * s) * total


def _graded_strip_rule(A, B, C, levels=8, order=4):
    """Points/weights over triangle (A,B,C), geometrically graded toward
    edge (A,B) (weights include physical measure)."""
    u, w = triangle_rule(order)
    pts, wts = [], []

    def add(P, Q, R):
        x = (P[None, :] + u[:, 0, None] * (Q - P)[None, :]
             + u[:, 1, None] * (R - Q)[None, :])
        area2 = abs((Q[0] - P[0]) * (R[1] - P[1])
                    - (Q[1] - P[1]) * (R[0] - P[0]))
        pts.append(x)
        wts.append(w * area2)

    lam = 1.0
    for _ in range(levels):
        lam2 = 0.5 * lam
        P1, Q1 = A + lam * (C - A), B + lam * (C - B)
        P2, Q2 = A + lam2 * (C - A), B + lam2 * (C - B)
        add(P2, Q2, P1)
        add(Q2, Q1, P1)
        lam = lam2
    P1, Q1 = A + lam * (C - A), B + lam * (C - B)
    add(A, B, P1)
    add(B, Q1, P1)
    return np.concatenate(pts), np.concatenate(wts)


def _graded_vertex_rule(V, P, Q, levels=8, order=4):
    """Points/weights over triangle (V,P,Q), geometrically contracted
    toward the corner V (weights include physical measure)."""
    u, w = triangle_rule(order)
    pts, wts = [], []

    def add(a, b, c):
        x = (a[None, :] + u[:, 0, None] * (b - a)[None, :]
             + u[:, 1, None] * (c - b)[None, :])
        area2 = abs((b[0] - a[0]) * (c[1] - a[1])
                    - (b[1] - a[1]) * (c[0] - a[0]))
        pts.append(x)
        wts.append(w * area2)

    lam = 1.0
    for _ in range(levels):
        lam2 = 0.5 * lam
        P1, Q1 = V + lam * (P - V), V + lam * (Q - V)
        P2, Q2 = V + lam2 * (P - V), V + lam2 * (Q - V)
        add(P2, P1, Q1)
        add(P2, Q1, Q2)
        lam = lam2
    # innermost triangle containing the corner
    add(V, V + lam * (P - V), V + lam * (Q - V))
    return np.concatenate(pts), np.concatenate(wts)


# -- element-pair machinery --------------------------------------------------


def _touching_pairs(mesh):
    """Ordered pairs (k1 <= k2) of elements sharing at least one vertex."""
    patches = mesh.vertex_patches()
    pairs = set()
    for k, tri in enumerate(mesh.triangles):
        for v in tri:
            for m in patches[v]:
                if m >= k:
                    pairs.add((k, int(m)))
    return sorted(pairs)


def _case_rule_tables(alpha, homogeneity, gauss_order, kind="jacobi",
                      grading_levels=5):
    """Per-configuration rule plus slot tables for the 6-slot local
    accumulation.

    For each touching case returns (pts, W, M_diff, M_prod) where the
    slot matrices have shape (n, 36): slots 0-2 are the first
    triangle's corner hats at x, slots 3-5 the second triangle's at y.
    M_diff uses the slot vector (hu, -hv) quadratic form (difference
    bilinear form); M_prod uses hu_a * hv_b (product form).
    """
    out = {}
    for case in _SS_CASES:
        if kind == "jacobi":
            rule = sauter_schwab_jacobi_rule(case, alpha, homogeneity,
                                             gauss_order)
        else:
            rule = sauter_schwab_rule(case, gauss_order, grading_levels)
        pts, W = rule.points, rule.weights
        hu = _simplex_hats(pts[:, :2])
        hv = _simplex_hats(pts[:, 2:])
        d6 = np.hstack([hu, -hv])                       # (n, 6)
        M_diff = np.einsum("na,nb->nab", d6, d6).reshape(len(pts), 36)
        p6x = np.hstack([hu, np.zeros_like(hv)])
        p6y = np.hstack([np.zeros_like(hu), hv])
        M_prod = np.einsum("na,nb->nab", p6x, p6y).reshape(len(pts), 36)
        out[case] = (pts, W, M_diff, M_prod)
    return out


def _tensor_pair_tables(order1, order2):
    """Slot tables for a disjoint pair integrated by a tensor rule."""
    u1, w1 = triangle_rule(order1)
    u2, w2 = triangle_rule(order2)
    h1 = _simplex_hats(u1)
    h2 = _simplex_hats(u2)
    nq, nr = len(u1), len(u2)
    W = np.outer(w1, w2).ravel()
    hu = np.repeat(h1, nr, axis=0)
    hv = np.tile(h2, (nq, 1))
    U = np.repeat(u1, nr, axis=0)
    V = np.tile(u2, (nq, 1))
    d6 = np.hstack([hu, -hv])
    M_diff = np.einsum("na,nb->nab", d6, d6).reshape(len(W), 36)
    p6x = np.hstack([hu, np.zeros_like(hv)])
    p6y = np.hstack([np.zeros_like(hu), hv])
    M_prod = np.einsum("na,nb->nab", p6x, p6y).reshape(len(W), 36)
    return U, V, W, M_diff, M_prod


def _map_pair_points(coords1, coords2, pts):
    """Map simplex-pair nodes through two triangle charts.

    coords1, coords2: (P, 3, 2) triangle corner blocks; pts: (n, 4).
    Returns x, y with shape (P, n, 2).
    """
    A1, B1, C1 = coords1[:, 0], coords1[:, 1], coords1[:, 2]
    A2, B2, C2 = coords2[:, 0], coords2[:, 1], coords2[:, 2]
    u1, u2 = pts[:, 0], pts[:, 1]
    v1, v2 = pts[:, 2], pts[:, 3]
    x = (A1[:, None, :] + u1[None, :, None] * (B1 - A1)[:, None, :]
         + u2[None, :, None] * (C1 - B1)[:, None, :])
    y = (A2[:, None, :] + v1[None, :, None] * (B2 - A2)[:, None, :]
         + v2[None, :, None] * (C2 - B2)[:, None, :])
    return x, y


def _scatter_local(A, loc, dofs6):
    """Accumulate (P, 36) local blocks into A; dofs6 is (P, 6) with -1
    for non-dof slots (routed to a discard row/column)."""
    n = A.shape[0] - 1  # last row/col is the discard slot
    idx = np.where(dofs6 < 0, n, dofs6)
    rows = np.repeat(idx, 6, axis=1).ravel()
    cols = np.tile(idx, (1, 6)).ravel()
    np.add.at(A, (rows, cols), loc.ravel())


def _assemble_pair_form(mesh, alpha, mode, gauss_order=4,
                        kernel=None, quad_kind="jacobi", grading_levels=5,
                        tier_cuts=(3.0, 8.0), tier_orders=(6, 2, 1),
                        chunk=512):
    """Pair part of a nonlocal P1 bilinear form with kernel |x-y|^alpha.

    mode "difference" assembles sum over pairs of
    iint (u(x)-u(y))(v(x)-v(y)) K, mode "product" iint u(x) v(y) K.
    kernel, if given, is a vectorized callable K(x, y) overriding the
    power law (used with mapped or non-homogeneous kernels).
    Returns a dense matrix over all mesh vertices plus one discard
    row/column (trimmed by the caller), WITHOUT any scalar prefactor.
    """
    nv = mesh.n_vertices
    tris = np.asarray(mesh.triangles)
    coords = mesh.vertices[tris]
    areas2 = 2.0 * mesh.areas()
    nt = len(tris)

    if kernel is None:
        def kernel(x, y):
            d2 = ((x - y) ** 2).sum(axis=-1)
            return d2 ** (0.5 * alpha)

    A = np.zeros((nv + 1, nv + 1))
    hom = 2 if mode == "difference" else 0
    tables = _case_rule_tables(alpha, hom, gauss_order, kind=quad_kind,
                               grading_levels=grading_levels)

    # --- touching pairs, grouped by case ------------------------------------
    groups = {case: [] for case in _SS_CASES}
    touching = _touching_pairs(mesh)
    for k1, k2 in touching:
        case, p1, p2 = pair_configuration(tuple(tris[k1]), tuple(tris[k2]))
        groups[case].append((k1, k2, p1, p2))

    for case, items in groups.items():
        if not items:
            continue
        pts, W, M_diff, M_prod = tables[case]
        M = M_diff if mode == "difference" else M_prod
        items = np.array([(k1, k2) + p1 + p2 for k1, k2, p1, p2 in items],
                         dtype=np.int64)
        pair_chunk = max(1, min(chunk, 4_000_000 // max(len(pts), 1)))
        for lo in range(0, len(items), pair_chunk):
            it = items[lo:lo + pair_chunk]
            k1, k2 = it[:, 0], it[:, 1]
            perm1, perm2 = it[:, 2:5], it[:, 5:8]
            c1 = coords[k1[:, None], perm1]
            c2 = coords[k2[:, None], perm2]
            x, y = _map_pair_points(c1, c2, pts)
            K = kernel(x, y)
            scale = areas2[k1] * areas2[k2]
            if mode == "difference":
                scale = scale * np.where(k1 == k2, 1.0, 2.0)
            else:
                scale = scale * np.where(k1 == k2, 0.5, 1.0)
            loc = (K * W[None, :]) @ M
            loc *= scale[:, None]
            g1 = tris[k1[:, None], perm1]
            g2 = tris[k2[:, None], perm2]
            _scatter_local(A, loc, np.hstack([g1, g2]))

    # --- disjoint pairs, tiered by separation -------------------------------
    cent = coords.mean(axis=1)
    hsz = mesh.diameters()
    ar = 0.5 * areas2

    near_cut, far_cut = tier_cuts
    o_near, o_mid, _ = tier_orders
    U_n, V_n, W_n, Md_n, Mp_n = _tensor_pair_tables(o_near, o_near)
    U_m, V_m, W_m, Md_m, Mp_m = _tensor_pair_tables(o_mid, o_mid)
    tier_tabs = {
        "near": (np.column_stack([U_n, V_n]), W_n,
                 Md_n if mode == "difference" else Mp_n),
        "mid": (np.column_stack([U_m, V_m]), W_m,
                Md_m if mode == "difference" else Mp_m),
    }

    touch_keys = np.array(sorted(k1 * nt + k2 for k1, k2 in touching),
                          dtype=np.int64)
    from scipy import sparse
    P_inc = sparse.csr_matrix(
        (np.ones(3 * nt), (np.repeat(np.arange(nt), 3), tris.ravel())),
        shape=(nt, nv + 1))

    def flush(tier, buf):
        if not buf:
            return
        arr = np.concatenate(buf, axis=0)
        buf.clear()
        pts_t, W_t, M_t = tier_tabs[tier]
        for lo in range(0, len(arr), chunk):
            it = arr[lo:lo + chunk]
            k1, k2 = it[:, 0], it[:, 1]
            x, y = _map_pair_points(coords[k1], coords[k2], pts_t)
            K = kernel(x, y)
            scale = areas2[k1] * areas2[k2]
            if mode == "difference":
                scale = scale * 2.0
            loc = (K * W_t[None, :]) @ M_t
            loc *= scale[:, None]
            _scatter_local(A, loc, np.hstack([tris[k1], tris[k2]]))

    far_rowsum = np.zeros(nt)
    near_buf, mid_buf = [], []
    block = 256
    col = np.arange(nt)
    for lo in range(0, nt, block):
        hi = min(lo + block, nt)
        d = np.hypot(cent[lo:hi, None, 0] - cent[None, :, 0],
                     cent[lo:hi, None, 1] - cent[None, :, 1])
        eta = d / np.maximum(hsz[lo:hi, None], hsz[None, :])

        # near/mid: strictly upper pairs below the far cut, minus pairs
        # already handled as touching
        m = (eta < far_cut) & (col[None, :] > np.arange(lo, hi)[:, None])
        ii, jj = np.nonzero(m)
        if len(ii):
            keys = (ii + lo).astype(np.int64) * nt + jj
            keep = ~np.isin(keys, touch_keys)
            ii, jj = ii[keep], jj[keep]
            e = eta[ii, jj]
            sel = e < near_cut
            if sel.any():
                near_buf.append(np.column_stack([ii[sel] + lo, jj[sel]]))
            if (~sel).any():
                mid_buf.append(np.column_stack([ii[~sel] + lo, jj[~sel]]))
            if sum(len(b) for b in near_buf) > 200000:
                flush("near", near_buf)
            if sum(len(b) for b in mid_buf) > 200000:
                flush("mid", mid_buf)

        # far tier: one node per element (centroid), piecewise-constant
        # hats collapse to the corner average 1/3
        mask = eta >= far_cut
        if mode == "product":
            mask &= col[None, :] > np.arange(lo, hi)[:, None]
        if not mask.any():
            continue
        Kc = kernel(cent[lo:hi, None, :], cent[None, :, :])
        Cw = np.where(mask, Kc, 0.0) * ar[lo:hi, None] * ar[None, :]
        if mode == "difference":
            far_rowsum[lo:hi] += Cw.sum(axis=1)
            X = -(2.0 / 9.0) * (Cw @ P_inc)
        else:
            X = (1.0 / 9.0) * (Cw @ P_inc)
        for a in range(3):
            np.add.at(A, tris[lo:hi, a], X)
    flush("near", near_buf)
    flush("mid", mid_buf)

    if mode == "difference":
        # own-element terms of the far tier: both x- and y-roles of the
        # ordered double sum land on the element's own corners
        for a in range(3):
            for b in range(3):
                np.add.at(A, (tris[:, a], tris[:, b]),
                          (2.0 / 9.0) * far_rowsum)
        A = 0.5 * (A + A.T)
    else:
        A = A + A.T
    return A[:nv, :nv]


# -- Galerkin operators ------------------------------------------------------


def _boundary_graded_points(mesh, gauss_order=4, levels=8):
    """Element quadrature with grading toward the domain boundary.

    Elements not touching the boundary get a plain symmetric rule.
    Boundary-touching elements are split at the barycenter; each piece
    is graded toward its boundary edge, or toward its boundary corners
    when the contact is through vertices only.
    Returns (pts, wts, elem_of).
    """
    coords = mesh.vertices[mesh.triangles]
    bflag = mesh.boundary_vertex()
    bedges = {tuple(sorted(e)) for e in mesh.boundary_edges()}
    u, w = triangle_rule(gauss_order)

    pts, wts, elem_of = [], [], []
    for k, tri in enumerate(mesh.triangles):
        T = coords[k]
        if not bflag[tri].any():
            x = (T[0][None] + u[:, 0, None] * (T[1] - T[0])[None]
                 + u[:, 1, None] * (T[2] - T[1])[None])
            pts.append(x)
            wts.append(w * 2.0 * abs(mesh.areas()[k]))
            elem_of.append(np.full(len(w), k))
            continue
        G = T.mean(axis=0)
        for e in range(3):
            ia, ib = int(tri[e]), int(tri[(e + 1) % 3])
            P, Q = T[e], T[(e + 1) % 3]
            if tuple(sorted((ia, ib))) in bedges:
                x, ww = _graded_strip_rule(P, Q, G, levels, gauss_order)
            elif bflag[ia] and bflag[ib]:
                M = 0.5 * (P + Q)
                x1, w1 = _graded_vertex_rule(P, M, G, levels, gauss_order)
                x2, w2 = _graded_vertex_rule(Q, G, M, levels, gauss_order)
                x, ww = np.vstack([x1, x2]), np.concatenate([w1, w2])
            elif bflag[ia]:
                x, ww = _graded_vertex_rule(P, Q, G, levels, gauss_order)
            elif bflag[ib]:
                x, ww = _graded_vertex_rule(Q, G, P, levels, gauss_order)
            else:
                x = (G[None] + u[:, 0, None] * (P - G)[None]
                     + u[:, 1, None] * (Q - P)[None])
                area2 = abs((P[0] - G[0]) * (Q[1] - G[1])
                            - (P[1] - G[1]) * (Q[0] - G[0]))
                ww = w * area2
            pts.append(x)
            wts.append(ww)
            elem_of.append(np.full(len(ww), k))
    return (np.vstack(pts), np.concatenate(wts),
            np.concatenate(elem_of).astype(np.int64))


def _scatter_mass(A, mesh, H, contrib, elem_of):
    """Accumulate sum_q contrib_q H_qa H_qb onto vertex pairs."""
    tris = np.asarray(mesh.triangles)
    g = tris[elem_of]
    for a in range(3):
        for b in range(3):
            np.add.at(A, (g[:, a], g[:, b]), contrib * H[:, a] * H[:, b])


def assemble_fractional_stiffness(mesh, order, gauss_order=4,
                                  quad_kind="jacobi", grading_levels=5):
    """Stiffness matrix of the fractional Laplacian bilinear form on
    interior P1 hats.

    The form splits into the symmetrized pair term over all element
    pairs and the complement term int_Omega u v w with the exact
    exterior kernel weight w.
    """
    s = order.s
    if not (0.0 < s < 1.0):
        raise ValueError(f"need s in (0,1), got {s}")
    alpha = -2.0 - 2.0 * s
    A_pair = _assemble_pair_form(mesh, alpha, "difference",
                                 gauss_order=gauss_order,
                                 quad_kind=quad_kind,
                                 grading_levels=grading_levels)
    A = 0.5 * order.c_ns * A_pair

    pts, wts, elem_of = _boundary_graded_points(mesh, gauss_order)
    wgt = domain_complement_weight(mesh, order, pts)
    H = hat_values(mesh, pts, elem_of)
    # boundary hats are outside the trial space and their complement
    # entries diverge for s >= 1/2; mask them out of the accumulation
    bflag = mesh.boundary_vertex()
    H = H * (~bflag[np.asarray(mesh.triangles)[elem_of]])
    _scatter_mass(A, mesh, H, wts * wgt, elem_of)

    dofs, _ = _interior_dof_map(mesh)
    A = A[np.ix_(dofs, dofs)]
    return 0.5 * (A + A.T)


def assemble_convection(mesh, c_vec):
    """Convection matrix with entries int (c . grad phi_j) phi_i over
    interior dofs; exact (element gradients are constant)."""
    c_vec = np.asarray(c_vec, dtype=float)
    tris = np.asarray(mesh.triangles)
    coords = mesh.vertices[tris]
    sa = mesh.signed_areas()
    nv = mesh.n_vertices
    M = np.zeros((nv, nv))
    # gradient of hat at corner a: perp of opposite edge / (2 * signed area)
    for j in range(3):
        P = coords[:, (j + 1) % 3]
        Q = coords[:, (j + 2) % 3]
        e = Q - P
        grad = np.column_stack([-e[:, 1], e[:, 0]]) / (2.0 * sa)[:, None]
        cg = grad @ c_vec                      # (nt,)
        w = cg * np.abs(sa) / 3.0
        for i in range(3):
            np.add.at(M, (tris[:, i], tris[:, j]), w)
    dofs, _ = _interior_dof_map(mesh)
    return M[np.ix_(dofs, dofs)]


def assemble_duality(mesh, dual):
    """Duality matrix D[i, j] = integral of hat psi_i over dual cell j,
    both index sets restricted to interior vertices; exact."""
    dofs, dof_of = _interior_dof_map(mesh)
    n = len(dofs)
    D = np.zeros((n, n))
    tris = np.asarray(mesh.triangles)
    for v in dofs:
        j = dof_of[v]
        subtris = dual.cell_subtris[v]
        elems = dual.cell_elems[v]
        for T, k in zip(subtris, elems):
            T = np.asarray(T, dtype=float)
            area = 0.5 * abs((T[1, 0] - T[0, 0]) * (T[2, 1] - T[0, 1])
                             - (T[1, 1] - T[0, 1]) * (T[2, 0] - T[0, 0]))
            H = hat_values(mesh, T, np.full(3, k))
            vals = area * H.mean(axis=0)       # exact: affine integrand
            for a in range(3):
                i = dof_of[tris[k, a]]
                if i >= 0:
                    D[i, j] += vals[a]
    return D


def assemble_load(mesh, f, gauss_order=4):
    """Load vector int f psi_i over interior dofs."""
    pts, wts, elem_of = element_quadrature(mesh, gauss_order)
    fv = np.asarray(f(pts), dtype=float)
    H = hat_values(mesh, pts, elem_of)
    b = np.zeros(mesh.n_vertices)
    tris = np.asarray(mesh.triangles)
    g = tris[elem_of]
    for a in range(3):
        np.add.at(b, g[:, a], wts * fv * H[:, a])
    dofs, _ = _interior_dof_map(mesh)
    return b[dofs]


def assemble_opposite_order(mesh, order, gauss_order=4, grading_levels=5):
    """Matrix of the order -s Riesz-potential form on interior P1 hats.

    Kernel: Riesz potential of order 2s in two dimensions, coefficient
    Gamma(1-s) / (4^s pi Gamma(s)) for s < 1 and the logarithmic kernel
    -(1/2 pi) log|x-y| at s = 1.
    """
    s = order.s
    if not (0.5 < s <= 1.0):
        raise ValueError(f"need s in (1/2, 1], got {s}")
    if s < 1.0:
        alpha = 2.0 * s - 2.0
        coeff = (math.gamma(1.0 - s)
                 / (4.0 ** s * math.pi * math.gamma(s)))
        C = coeff * _assemble_pair_form(mesh, alpha, "product",
                                       gauss_order=gauss_order,
                                       grading_levels=grading_levels)
    else:
        def log_kernel(x, y):
            d2 = ((x - y) ** 2).sum(axis=-1)
            return -0.25 / math.pi * np.log(np.maximum(d2, 1e-300))

        C = _assemble_pair_form(mesh, 0.0, "product",
                                gauss_order=gauss_order,
                                quad_kind="graded",
                                grading_levels=max(grading_levels, 8),
                                kernel=log_kernel)
    dofs, _ = _interior_dof_map(mesh)
    C = C[np.ix_(dofs, dofs)]
    return 0.5 * (C + C.T)


# -- Boggio dual-mesh operator -----------------------------------------------


def _green_batch(order, x, y):
    """Vectorized Green kernel of the unit disk, s in (0, 1).

    G(x, y) = k_ns |x-y|^(2s-2) B_w(s, 1-s) with w = D / (D + |x-y|^2)
    and D = (1-|x|^2)(1-|y|^2).  Dispatches to the selected backend.
    """
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape[:-1]
    out = _backend.green_batch(order.s, order.k_ns,
                               x.reshape(-1, 2), y.reshape(-1, 2))
    return out.reshape(shape)


def _green_remainder(order, x, y):
    """G minus its leading diagonal power k_ns B(s,1-s) |x-y|^(2s-2).

    Bounded for arguments away from the unit circle; the remainder is
    -k_ns |x-y|^(2s-2) int_w^1 t^(s-1) (1-t)^(-s) dt.  Dispatches to
    the selected backend.
    """
    x, y = np.broadcast_arrays(x, y)
    shape = x.shape[:-1]
    out = _backend.green_remainder(order.s, order.k_ns,
                                   x.reshape(-1, 2), y.reshape(-1, 2))
    return out.reshape(shape)


def _element_panels(mesh, dof_of):
    """Barycentric-dual panels grouped by primal element.

    Returns (panels, owners): panels (nt, 6, 3, 2) sub-triangle corner
    coordinates, owners (nt, 6) interior dof of the owning dual cell
    (-1 for cells of boundary vertices).
    """
    tris = np.asarray(mesh.triangles)
    p = mesh.vertices[tris]                   # (nt, 3, 2)
    pa, pb, pc = p[:, 0], p[:, 1], p[:, 2]
    mab = 0.5 * (pa + pb)
    mbc = 0.5 * (pb + pc)
    mca = 0.5 * (pc + pa)
    bar = p.mean(axis=1)
    panels = np.stack([
        np.stack([pa, mab, bar], axis=1),
        np.stack([pa, bar, mca], axis=1),
        np.stack([pb, mbc, bar], axis=1),
        np.stack([pb, bar, mab], axis=1),
        np.stack([pc, mca, bar], axis=1),
        np.stack([pc, bar, mbc], axis=1),
    ], axis=1)                                # (nt, 6, 3, 2)
    owners = dof_of[tris][:, [0, 0, 1, 1, 2, 2]]
    return panels, owners


def _quantized_ids(points, scale=1e-9):
    """Integer vertex ids for coordinate tuples, merged on a fine grid."""
    q = np.round(points / scale).astype(np.int64)
    flat = q.reshape(-1, 2)
    uniq, inv = np.unique(flat, axis=0, return_inverse=True)
    return inv.reshape(q.shape[:-1])


def _tri_area2_arr(tri):
    """Twice the unsigned area; tri has shape (..., 3, 2)."""
    e1 = tri[..., 1, :] - tri[..., 0, :]
    e2 = tri[..., 2, :] - tri[..., 0, :]
    return np.abs(e1[..., 0] * e2[..., 1] - e1[..., 1] * e2[..., 0])


def assemble_boggio_dual(dual, order, domain_map=None, gauss_order=4,
                         grading_levels=6, tier_cuts=(3.0, 8.0),
                         boundary_factor=1.0, fallback_order=3, chunk=512):
    """Matrix of the Green-kernel form on the P0 dual cells of interior
    vertices, optionally after mapping the geometry onto the unit disk.

    Touching image panels split the kernel into its diagonal power part
    (absorbed by Gauss-Jacobi pair rules) plus a bounded remainder;
    panels close to the unit circle, where the remainder degenerates,
    fall back to graded composite rules on the full kernel.  Disjoint
    panels use tensor rules tiered by separation, with a one-point
    cell-collapsed far field.
    """
    mesh = dual.mesh
    s = order.s
    if not (0.0 < s < 1.0):
        raise ValueError(f"need s in (0,1), got {s}")
    dofs, dof_of = _interior_dof_map(mesh)
    N = len(dofs)
    panels, owners = _element_panels(mesh, dof_of)
    nt = panels.shape[0]

    if domain_map is not None and domain_map.kind != "identity":
        flat = panels.reshape(-1, 2)
        uniq, inv = np.unique(np.round(flat / 1e-12).astype(np.int64),
                              axis=0, return_inverse=True)
        mapped = domain_map.apply(uniq * 1e-12)
        panels = mapped[inv].reshape(panels.shape)

    ids = _quantized_ids(panels)              # (nt, 6, 3)
    areas2 = _tri_area2_arr(panels)           # (nt, 6)
    pan_cent = panels.mean(axis=2)            # (nt, 6, 2)
    pan_diam = np.sqrt(np.maximum(areas2, 0.0))
    # distance of each panel to the unit circle (image geometry)
    rim = 1.0 - np.hypot(panels[..., 0], panels[..., 1]).max(axis=-1)
    boundary_panel = rim < boundary_factor * pan_diam

    kernel = lambda x, y: _green_batch(order, x, y)
    maincoef = order.k_ns * math.pi / math.sin(math.pi * s)
    alpha = 2.0 * s - 2.0

    B = np.zeros((N + 1, N + 1))

    # element geometry in the image
    el_cent = panels.reshape(nt, 18, 2).mean(axis=1)
    el_diam = np.ptp(panels.reshape(nt, 18, 2), axis=1).max(axis=1)

    touching = _touching_pairs(mesh)
    touch_keys = np.array(sorted(k1 * nt + k2 for k1, k2 in touching),
                          dtype=np.int64)

    near_cut, far_cut = tier_cuts

    # singular rules for vertex-sharing panel pairs
    jac_rules = {case: sauter_schwab_jacobi_rule(case, alpha, 0, gauss_order)
                 for case in _SS_CASES}
    grd_rules = {case: sauter_schwab_rule(case, fallback_order,
                                          grading_levels)
                 for case in _SS_CASES}
    # tensor product rules for disjoint panel pairs, keyed by order
    tensor_rules = {}
    for o in (6, 2, 1):
        u, w = triangle_rule(o)
        U = np.repeat(u, len(u), axis=0)
        V = np.tile(u, (len(u), 1))
        tensor_rules[o] = (np.column_stack([U, V]),
                           np.outer(w, w).ravel())
    rem_pts, rem_W = tensor_rules[6]

    def scatter_disjoint(k1, p, k2, q, ptsT, WT):
        """Tensor-rule contribution of disjoint panel pairs, both sides."""
        for lo in range(0, len(k1), chunk):
            sl = slice(lo, lo + chunk)
            x, y = _map_pair_points(panels[k1[sl], p[sl]],
                                    panels[k2[sl], q[sl]], ptsT)
            vals = (kernel(x, y) * WT[None, :]).sum(axis=1)
            vals = vals * areas2[k1[sl], p[sl]] * areas2[k2[sl], q[sl]]
            np.add.at(B, (owners[k1[sl], p[sl]], owners[k2[sl], q[sl]]),
                      vals)
            np.add.at(B, (owners[k2[sl], q[sl]], owners[k1[sl], p[sl]]),
                      vals)

    def process_disjoint(k1, p, k2, q):
        """Tier disjoint panel pairs by their own separation ratio."""
        keep = (owners[k1, p] >= 0) & (owners[k2, q] >= 0)
        k1, p, k2, q = k1[keep], p[keep], k2[keep], q[keep]
        if not len(k1):
            return
        d = np.hypot(pan_cent[k1, p, 0] - pan_cent[k2, q, 0],
                     pan_cent[k1, p, 1] - pan_cent[k2, q, 1])
        eta = d / np.maximum(pan_diam[k1, p], pan_diam[k2, q])
        tier = np.where(eta < near_cut, 6, np.where(eta < far_cut, 2, 1))
        for o in (6, 2, 1):
            sel = np.nonzero(tier == o)[0]
            if len(sel):
                scatter_disjoint(k1[sel], p[sel], k2[sel], q[sel],
                                 *tensor_rules[o])

    # --- touching element pairs: panel pairs may share vertices -------------
    buckets = {(kind, case): [] for kind in ("jac", "grd")
               for case in _SS_CASES}
    touch_arr = np.array(sorted(touching), dtype=np.int64)
    cstep = 2048
    for lo in range(0, len(touch_arr), cstep):
        pp = touch_arr[lo:lo + cstep]
        k1, k2 = pp[:, 0], pp[:, 1]
        ids1 = ids[k1]                         # (c, 6, 3)
        ids2 = ids[k2]
        own1 = owners[k1]
        own2 = owners[k2]
        # shared vertices between panel p of k1 and panel q of k2
        shared = (ids1[:, :, :, None, None] == ids2[:, None, None, :, :]
                  ).any(axis=4).sum(axis=2)    # (c, 6, 6)
        loose = []
        for c in range(len(pp)):
            kk1, kk2 = int(k1[c]), int(k2[c])
            same = kk1 == kk2
            for p in range(6):
                if own1[c, p] < 0:
                    continue
                qs = range(p, 6) if same else range(6)
                for q in qs:
                    if own2[c, q] < 0:
                        continue
                    if shared[c, p, q] == 0:
                        loose.append((kk1, p, kk2, q))
                        continue
                    t1 = tuple(int(v) for v in ids1[c, p])
                    t2 = tuple(int(v) for v in ids2[c, q])
                    case, p1, p2 = pair_configuration(t1, t2)
                    kind = ("grd" if (boundary_panel[kk1, p]
                                      or boundary_panel[kk2, q]) else "jac")
                    buckets[(kind, case)].append((kk1, p, kk2, q) + p1 + p2)
        if loose:
            la = np.array(loose, dtype=np.int64)
            process_disjoint(la[:, 0], la[:, 1], la[:, 2], la[:, 3])

    for (kind, case), items in buckets.items():
        if not items:
            continue
        arr = np.array(items, dtype=np.int64)
        rule = jac_rules[case] if kind == "jac" else grd_rules[case]
        pts, W = rule.points, rule.weights
        pair_chunk = max(1, min(chunk, 4_000_000 // max(len(pts), 1)))
        for lo in range(0, len(arr), pair_chunk):
            it = arr[lo:lo + pair_chunk]
            k1, p, k2, q = it[:, 0], it[:, 1], it[:, 2], it[:, 3]
            perm1, perm2 = it[:, 4:7], it[:, 7:10]
            c1 = panels[k1, p][np.arange(len(it))[:, None], perm1]
            c2 = panels[k2, q][np.arange(len(it))[:, None], perm2]
            x, y = _map_pair_points(c1, c2, pts)
            if kind == "grd":
                K = kernel(x, y)
                vals = (K * W[None, :]).sum(axis=1)
            else:
                d2 = ((x - y) ** 2).sum(axis=-1)
                vals = maincoef * (d2 ** (0.5 * alpha) * W[None, :]
                                   ).sum(axis=1)
                # bounded remainder on a plain tensor rule
                xr, yr = _map_pair_points(c1, c2, rem_pts)
                R = _green_remainder(order, xr, yr)
                vals = vals + (R * rem_W[None, :]).sum(axis=1)
            vals = vals * areas2[k1, p] * areas2[k2, q]
            same = (k1 == k2) & (p == q)
            i_dof = owners[k1, p]
            j_dof = owners[k2, q]
            # pairs were enumerated once per unordered panel pair
            np.add.at(B, (i_dof, j_dof), vals)
            flip = ~same
            np.add.at(B, (j_dof[flip], i_dof[flip]), vals[flip])

    # --- non-touching element pairs below the far cut -----------------------
    P6 = np.arange(6)
    combo_p = np.repeat(P6, 6)
    combo_q = np.tile(P6, 6)
    block = 256
    for lo in range(0, nt, block):
        hi = min(lo + block, nt)
        d = np.hypot(el_cent[lo:hi, None, 0] - el_cent[None, :, 0],
                     el_cent[lo:hi, None, 1] - el_cent[None, :, 1])
        eta = d / np.maximum(el_diam[lo:hi, None], el_diam[None, :])
        m = ((eta < far_cut)
             & (np.arange(nt)[None, :] > np.arange(lo, hi)[:, None]))
        ii, jj = np.nonzero(m)
        if not len(ii):
            continue
        keys = (ii + lo).astype(np.int64) * nt + jj
        sel = ~np.isin(keys, touch_keys)
        ii, jj = ii[sel] + lo, jj[sel]
        k1 = np.repeat(ii, 36)
        k2 = np.repeat(jj, 36)
        p = np.tile(combo_p, len(ii))
        q = np.tile(combo_q, len(ii))
        process_disjoint(k1, p, k2, q)

    # far tier: one node per element, weights = cell overlap areas
    cell_w = np.zeros((nt, 3))
    tris = np.asarray(mesh.triangles)
    for a in range(3):
        cell_w[:, a] = 0.5 * (areas2[:, 2 * a] + areas2[:, 2 * a + 1])
    cell_idx = dof_of[tris]
    cell_idx = np.where(cell_idx < 0, N, cell_idx)
    from scipy import sparse
    S = sparse.csr_matrix(
        (cell_w.ravel(), (np.repeat(np.arange(nt), 3), cell_idx.ravel())),
        shape=(nt, N + 1))
    col = np.arange(nt)
    block = 256
    for lo in range(0, nt, block):
        hi = min(lo + block, nt)
        d = np.hypot(el_cent[lo:hi, None, 0] - el_cent[None, :, 0],
                     el_cent[lo:hi, None, 1] - el_cent[None, :, 1])
        eta = d / np.maximum(el_diam[lo:hi, None], el_diam[None, :])
        mask = eta >= far_cut
        if not mask.any():
            continue
        Kc = kernel(el_cent[lo:hi, None, :], el_cent[None, :, :])
        Cw = np.where(mask, Kc, 0.0)
        X = Cw @ S                              # (blk, N+1)
        for a in range(3):
            np.add.at(B, cell_idx[lo:hi, a], cell_w[lo:hi, a][:, None] * X)

    B = B[:N, :N]
    return 0.5 * (B + B.T)


# -- pointwise operator application and system bundling ----------------------


def frac_lap_apply(mesh, u_full, s, pts, elem_of, gauss_order=8):
    """Pointwise values of the order-2s fractional Laplacian of a P1
    function at interior points of elements.

    The integral over the element containing x uses the exact radial
    antiderivative of the principal-value integrand along rays (the
    angular part is a 1D Gauss rule per edge); other elements use tensor
    rules, upgraded to a finer rule on elements touching the containing
    one.  The complement of the domain contributes u(x) times the exact
    exterior kernel weight.
    """
    if not (0.0 < s < 1.0):
        raise ValueError(f"need s in (0,1), got {s}")
    order = FractionalOrder(2, s)
    alpha = -2.0 - 2.0 * s
    pts = np.asarray(pts, dtype=float)
    u_full = np.asarray(u_full, dtype=float)
    tris = np.asarray(mesh.triangles)
    coords = mesh.vertices[tris]                   # (nt, 3, 2)
    nt = len(tris)
    m = len(pts)

    # per-element gradient of u_h (constant) and value coefficients
    sa = mesh.signed_areas()
    g = np.zeros((nt, 2))
    for c in range(3):
        opp = coords[:, (c + 2) % 3] - coords[:, (c + 1) % 3]
        # gradient of hat c is the ccw-rotated opposite edge / (2 area)
        g[:, 0] += u_full[tris[:, c]] * (-opp[:, 1])
        g[:, 1] += u_full[tris[:, c]] * opp[:, 0]
    g /= (2.0 * sa)[:, None]

    ux = (hat_values(mesh, pts, elem_of) * u_full[tris[elem_of]]).sum(axis=1)

    # --- containing element: exact radial part, Gauss in the edge param
    tg, wg = gauss_rule_01(gauss_order)
    ec = coords[elem_of]                           # (m, 3, 2)
    expo = 3.0 + alpha                             # = 1 - 2s
    own = np.zeros(m)
    for e in range(3):
        P = ec[:, e]
        E = ec[:, (e + 1) % 3] - P
        y = P[:, None, :] + tg[None, :, None] * E[:, None, :]   # (m, G, 2)
        r = y - pts[:, None, :]
        R = np.hypot(r[..., 0], r[..., 1])
        c1 = -(g[elem_of, 0, None] * r[..., 0]
               + g[elem_of, 1, None] * r[..., 1]) / R
        if abs(expo) < 1e-12:
            F = np.log(R)
        else:
            F = R ** expo / expo
        dth = (r[..., 0] * E[:, None, 1]
               - r[..., 1] * E[:, None, 0]) / (R * R)
        own += ((c1 * F * dth) * wg[None, :]).sum(axis=1)

    # --- other elements: tensor rules with values of u at fixed nodes
    u2r, w2r = triangle_rule(2)
    yq = map_simplex_batch(coords, u2r)            # (nt, 3, 2)
    wq = w2r[None, :] * (2.0 * np.abs(sa))[:, None]
    uy = np.zeros((nt, len(u2r)))
    H = _simplex_hats(u2r)                         # (nq, 3)
    for c in range(3):
        uy += u_full[tris[:, c]][:, None] * H[:, c][None, :]

    out = np.zeros(m)
    chunk = max(1, 2_000_000 // (nt * yq.shape[1]))
    for lo in range(0, m, chunk):
        sl = slice(lo, min(lo + chunk, m))
        dx = pts[sl, None, None, 0] - yq[None, :, :, 0]
        dy = pts[sl, None, None, 1] - yq[None, :, :, 1]
        d = np.hypot(dx, dy)
        vals = (ux[sl, None, None] - uy[None]) * d ** alpha * wq[None]
        vals[np.arange(sl.stop - sl.start), elem_of[sl], :] = 0.0
        out[sl] = vals.sum(axis=(1, 2))

    # --- touching elements: replace the coarse rule by the exact radial
    # fan decomposition (signed edge sum; zero-radius terms cancel).
    # The edge-parameter integrand peaks where the point projects onto
    # the edge, so the 1D nodes are graded toward that foot per point.
    tb, wb = graded_gauss_rule_01(gauss_order, 6)
    e0 = 2.0 + alpha                               # = -2s
    patches = mesh.vertex_patches()
    point_lists = [[] for _ in range(nt)]
    for i, k in enumerate(elem_of):
        point_lists[k].append(i)
    # affine representation of u on each element: u(x) = a . x + b
    a_el = g
    b_el = u_full[tris[:, 0]] - (g * coords[:, 0]).sum(axis=1)
    for k in range(nt):
        idx = point_lists[k]
        if not idx:
            continue
        touch = set()
        for v in tris[k]:
            touch.update(int(t) for t in patches[v])
        touch.discard(k)
        tl = np.fromiter(touch, dtype=np.int64)
        if not len(tl):
            continue
        idx = np.asarray(idx, dtype=np.int64)
        x = pts[idx]                               # (P, 2)
        # subtract the coarse tensor contribution added in the bulk pass
        ytl, uytl, wqtl = yq[tl], uy[tl], wq[tl]
        d2 = np.hypot(x[:, None, None, 0] - ytl[None, :, :, 0],
                      x[:, None, None, 1] - ytl[None, :, :, 1])
        coarse = ((ux[idx][:, None, None] - uytl[None])
                  * d2 ** alpha * wqtl[None]).sum(axis=(1, 2))
        du = (ux[idx][:, None]
              - (x @ a_el[tl].T + b_el[None, tl]))  # (P, T)
        fan = np.zeros(len(idx))
        ct = coords[tl]                            # (T, 3, 2)
        for e in range(3):
            P = ct[:, e]
            E = ct[:, (e + 1) % 3] - P
            ee = (E * E).sum(axis=1)
            # projection foot of each point on each edge, clamped
            t0 = ((x[:, None, 0] - P[None, :, 0]) * E[None, :, 0]
                  + (x[:, None, 1] - P[None, :, 1]) * E[None, :, 1]) / ee
            t0 = np.clip(t0, 0.0, 1.0)             # (P, T)
            # composite nodes on [t0, 1] and [t0, 0], graded toward t0
            t_up = t0[:, :, None] + (1.0 - t0)[:, :, None] * tb
            w_up = (1.0 - t0)[:, :, None] * wb
            t_dn = t0[:, :, None] * (1.0 - tb)
            w_dn = t0[:, :, None] * wb
            t = np.concatenate([t_up, t_dn], axis=2)   # (P, T, 2G)
            wt = np.concatenate([w_up, w_dn], axis=2)
            y = P[None, :, None, :] + t[..., None] * E[None, :, None, :]
            r = y - x[:, None, None, :]            # (P, T, 2G, 2)
            R = np.hypot(r[..., 0], r[..., 1])
            good = R > 0
            Rs = np.where(good, R, 1.0)
            c1 = -(a_el[tl, None, 0] * r[..., 0]
                   + a_el[tl, None, 1] * r[..., 1]) / Rs
            if abs(expo) < 1e-12:
                F1 = np.log(Rs)
            else:
                F1 = Rs ** expo / expo
            val = du[:, :, None] * Rs ** e0 / e0 + c1 * F1
            dth = (r[..., 0] * E[None, :, None, 1]
                   - r[..., 1] * E[None, :, None, 0]) / (Rs * Rs)
            fan += (np.where(good, val * dth, 0.0) * wt).sum(axis=(1, 2))
        out[idx] += fan - coarse

    w_ext = domain_complement_weight(mesh, order, pts)
    return order.c_ns * (own + out) + ux * w_ext


def map_simplex_batch(coords, upts):
    """Map simplex points (u1, u2) into many physical triangles.

    coords has shape (P, 3, 2), upts (n, 2); returns (P, n, 2).
    """
    A = coords[:, None, 0, :]
    B = coords[:, None, 1, :]
    C = coords[:, None, 2, :]
    u1 = upts[None, :, 0, None]
    u2 = upts[None, :, 1, None]
    return A + u1 * (B - A) + u2 * (C - B)


@dataclass
class GalerkinSystem:
    """Assembled operator family of one discretization level."""

    A: np.ndarray
    B: np.ndarray
    D: np.ndarray
    load: np.ndarray
    conv: np.ndarray = None
    opposite: np.ndarray = None

    @property
    def full_matrix(self):
        """System matrix including the convection part when present."""
        if self.conv is None:
            return self.A
        return self.A + self.conv


def build_system(mesh, config):
    """Assemble the operator family used by the experiment drivers.

    config provides: s (order parameter), f (right-hand side, vectorized
    over an (M,2) point array), and optionally c_vec (convection field),
    map (domain-to-disk transport for the dual-mesh operator) and
    with_opposite (also assemble the order -s form).
    """
    order = FractionalOrder(2, config.s)
    dual = build_barycentric_dual(mesh)
    A = assemble_fractional_stiffness(mesh, order)
    D = assemble_duality(mesh, dual)
    dmap = getattr(config, "map", None)
    B = assemble_boggio_dual(dual, order, domain_map=dmap)
    load = assemble_load(mesh, config.f)
    conv = None
    c_vec = getattr(config, "c_vec", None)
    if c_vec is not None and np.any(np.asarray(c_vec) != 0.0):
        conv = assemble_convection(mesh, c_vec)
    opp = None
    if getattr(config, "with_opposite", False):
        opp = assemble_opposite_order(mesh, order)
    return GalerkinSystem(A=A, B=B, D=D, load=load, conv=conv, opposite=opp)


# -- extended weakly singular mode (order parameter -1/2) ---------------------


def _hypersingular_remainder(x, y):
    """Difference between minus the continuation Green kernel at order
    -1/2 and its diagonal power (1/2pi) |x-y|^(-3).

    Equals (1/pi^2) (t - arctan t) / |x-y|^3 with t = |x-y| / sqrt(D),
    D = (1-|x|^2)(1-|y|^2); series for small t avoids cancellation.
    """
    d2 = ((x - y) ** 2).sum(axis=-1)
    d = np.sqrt(d2)
    Dx = np.maximum(1.0 - (x ** 2).sum(axis=-1), 1e-300)
    Dy = np.maximum(1.0 - (y ** 2).sum(axis=-1), 1e-300)
    sD = np.sqrt(Dx * Dy)
    t = d / sD
    small = t < 1e-3
    ts = np.where(small, t, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        series = (1.0 / 3.0 - ts * ts / 5.0) / (sD ** 3)
        direct = (t - np.arctan(t)) / np.where(d > 0, d ** 3, 1.0)
        out = np.where(small, series, direct)
    return out / (math.pi ** 2)


def assemble_hypersingular(mesh, gauss_order=4, grading_levels=5):
    """Matrix of the order +1 form built from the analytic continuation
    of the disk Green kernel, on interior P1 hats.

    The form is the analytic continuation in s of iint G u(y) v(x);
    the rearrangement that makes it computable is

        b(u, v) = int u v g
                  + (1/2) iint (-G)(u(x)-u(y))(v(x)-v(y)),

    with g(x) = (2/pi)(1-|x|^2)^(-1/2) the continuation of the kernel
    integral over the disk, and -G (positive here) split into its
    diagonal power (1/2pi)|x-y|^(-3) plus a remainder bounded away
    from the rim.  Both terms are positive, so the matrix is SPD.
    """
    main = _assemble_pair_form(mesh, -3.0, "difference",
                               gauss_order=gauss_order,
                               quad_kind="jacobi",
                               grading_levels=grading_levels)
    B = 0.5 / (2.0 * math.pi) * main
    rem = _assemble_pair_form(mesh, 0.0, "difference",
                              gauss_order=gauss_order,
                              kernel=_hypersingular_remainder,
                              quad_kind="graded",
                              grading_levels=grading_levels)
    B += 0.5 * rem

    pts, wts, elem_of = _boundary_graded_points(mesh, gauss_order)
    g = (2.0 / math.pi) / np.sqrt(
        np.maximum(1.0 - (pts ** 2).sum(axis=1), 1e-300))
    H = hat_values(mesh, pts, elem_of)
    bflag = mesh.boundary_vertex()
    H = H * (~bflag[np.asarray(mesh.triangles)[elem_of]])
    _scatter_mass(B, mesh, H, wts * g, elem_of)

    dofs, _ = _interior_dof_map(mesh)
    B = B[np.ix_(dofs, dofs)]
    return 0.5 * (B + B.T)


def assemble_weakly_singular_p0(mesh, gauss_order=6, tier_cuts=(6.0, 20.0),
                                chunk=512):
    """Matrix of the weakly singular form (1/2pi) iint |x-y|^(-1) on
    element indicator functions (P0 on the triangulation).

    This is the Galerkin matrix of the order -1 Riesz operator; its
    condition number grows like 1/h under uniform refinement.  The
    slowly decaying kernel needs wider near/mid tiers than the Green
    kernel, hence the larger default cuts.
    """
    tris = np.asarray(mesh.triangles)
    nt = len(tris)
    coords = mesh.vertices[tris]
    areas2 = np.abs(np.cross(coords[:, 1] - coords[:, 0],
                             coords[:, 2] - coords[:, 0]))
    cent = coords.mean(axis=1)
    diam = np.ptp(coords, axis=1).max(axis=1)
    coef = 1.0 / (2.0 * math.pi)
    alpha = -1.0
    near_cut, far_cut = tier_cuts
    A = np.zeros((nt, nt))

    jac_rules = {case: sauter_schwab_jacobi_rule(case, alpha, 0, gauss_order)
                 for case in _SS_CASES}
    tensor_rules = {}
    for o in (6, 2, 1):
        u, w = triangle_rule(o)
        U = np.repeat(u, len(u), axis=0)
        V = np.tile(u, (len(u), 1))
        tensor_rules[o] = (np.column_stack([U, V]), np.outer(w, w).ravel())

    touching = _touching_pairs(mesh)
    touch_keys = np.array(sorted(k1 * nt + k2 for k1, k2 in touching),
                          dtype=np.int64)

    # singular pairs: identical / common-edge / common-vertex
    buckets = {case: [] for case in _SS_CASES}
    for k1, k2 in sorted(touching):
        t1 = tuple(int(v) for v in tris[k1])
        t2 = tuple(int(v) for v in tris[k2])
        case, p1, p2 = pair_configuration(t1, t2)
        buckets[case].append((k1, k2) + p1 + p2)
    for case, items in buckets.items():
        if not items:
            continue
        arr = np.array(items, dtype=np.int64)
        rule = jac_rules[case]
        pts, W = rule.points, rule.weights
        pair_chunk = max(1, min(chunk, 4_000_000 // max(len(pts), 1)))
        for lo in range(0, len(arr), pair_chunk):
            it = arr[lo:lo + pair_chunk]
            k1, k2 = it[:, 0], it[:, 1]
            perm1, perm2 = it[:, 2:5], it[:, 5:8]
            rows = np.arange(len(it))[:, None]
            c1 = coords[k1][rows, perm1]
            c2 = coords[k2][rows, perm2]
            x, y = _map_pair_points(c1, c2, pts)
            d2 = ((x - y) ** 2).sum(axis=-1)
            vals = coef * (d2 ** (0.5 * alpha) * W[None, :]).sum(axis=1)
            vals = vals * areas2[k1] * areas2[k2]
            A[k1, k2] += vals
            flip = k1 != k2
            A[k2[flip], k1[flip]] += vals[flip]

    # disjoint pairs, tiered by the separation ratio
    block = 512
    for lo in range(0, nt, block):
        hi = min(lo + block, nt)
        I, J = np.meshgrid(np.arange(lo, hi), np.arange(nt), indexing="ij")
        keep = J > I
        keys = I * nt + J
        keep &= ~np.isin(keys, touch_keys)
        k1, k2 = I[keep], J[keep]
        if not len(k1):
            continue
        d = np.hypot(cent[k1, 0] - cent[k2, 0], cent[k1, 1] - cent[k2, 1])
        eta = d / np.maximum(diam[k1], diam[k2])
        tier = np.where(eta < near_cut, 6, np.where(eta < far_cut, 2, 1))
        for o in (6, 2, 1):
            sel = np.nonzero(tier == o)[0]
            if not len(sel):
                continue
            ptsT, WT = tensor_rules[o]
            for s0 in range(0, len(sel), chunk):
                ss = sel[s0:s0 + chunk]
                x, y = _map_pair_points(coords[k1[ss]], coords[k2[ss]], ptsT)
                d2 = ((x - y) ** 2).sum(axis=-1)
                vals = coef * (d2 ** (0.5 * alpha) * WT[None, :]).sum(axis=1)
                vals = vals * areas2[k1[ss]] * areas2[k2[ss]]
                A[k1[ss], k2[ss]] += vals
                A[k2[ss], k1[ss]] += vals
    return 0.5 * (A + A.T)


def assemble_extended_system(mesh, f=None):
    """Operator family of the order -1/2 mode.

    The primal space is P0 on the elements with the weakly singular
    Riesz form; its condition number grows like 1/h.  The dual space is
    continuous P1 on the barycentric dual: the hat functions at element
    barycenters of the six-way barycentric subdivision, which carry the
    continuation-kernel order +1 form.  A barycenter hat is supported
    exactly on the six sub-triangles of its element, so the coupling
    D_{ij} = int_{T_i} (hat at barycenter j) is diagonal with entries
    |T_i| / 3.
    """
    from .mesh import barycentric_subdivision

    A = assemble_weakly_singular_p0(mesh)

    fine, orig = barycentric_subdivision(mesh)
    Bf = assemble_hypersingular(fine)
    _, fine_dof_of = _interior_dof_map(fine)
    nv = len(mesh.vertices)
    n_edges = len(fine.vertices) - nv - len(mesh.triangles)
    bary_ids = nv + n_edges + np.arange(len(mesh.triangles))
    bary_ix = fine_dof_of[bary_ids]
    if np.any(bary_ix < 0):
        raise ValueError("element barycenter fell on the fine boundary")
    B = Bf[np.ix_(bary_ix, bary_ix)]

    tris = np.asarray(mesh.triangles)
    coords = mesh.vertices[tris]
    areas = 0.5 * np.abs(np.cross(coords[:, 1] - coords[:, 0],
                                  coords[:, 2] - coords[:, 0]))
    D = np.diag(areas / 3.0)

    if f is None:
        f = lambda p: np.ones(len(p))
    bary = coords.mean(axis=1)
    load = areas * np.asarray(f(bary), dtype=float)
    return GalerkinSystem(A=A, B=B, D=D, load=load)
