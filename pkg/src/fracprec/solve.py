"""Preconditioner application, Krylov solvers and spectral diagnostics.

The operator preconditioner P = D^{-1} B D^{-T} is applied through an LU
factorization of the duality matrix D and a dense multiply with B; the
solvers count iterations against the relative Euclidean residual.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, eig, eigh, lu_factor, lu_solve

from . import assembly
from .kernels import FractionalOrder

__all__ = [
    "PrecondOperator",
    "SolveReport",
    "pcg",
    "gmres",
    "condition_number",
    "error_norms",
    "eigenvalue_cloud",
]


class PrecondOperator:
    """Operator preconditioner P = D^{-1} B D^{-T}.

    Parameters
    ----------
    D : (N, N) ndarray
        Duality matrix between the primal and dual bases.
    B : (N, N) ndarray
        Symmetric positive definite dual-space Galerkin matrix.
    """

    def __init__(self, D, B):
        D = np.asarray(D, dtype=float)
        B = np.asarray(B, dtype=float)
        if D.shape != B.shape or D.shape[0] != D.shape[1]:
            raise ValueError("D and B must be square of equal size")
        self.B = B
        self.D = D
        self.shape = D.shape
        self._lu = lu_factor(D)

    def apply(self, v):
        """Return D^{-1} B D^{-T} v."""
        w = lu_solve(self._lu, np.asarray(v, dtype=float), trans=1)
        return lu_solve(self._lu, self.B @ w)

    def __matmul__(self, v):
        return self.apply(v)

    def dense(self):
        """Materialize P as a dense matrix."""
        return self.apply(np.eye(self.shape[0]))


@dataclass
class SolveReport:
    """Result of a Krylov solve."""

    solution: np.ndarray
    iterations: int
    residual_history: list
    converged: bool
    breakdown: str = ""


def _apply_precond(P, v):
    if P is None:
        return v
    if isinstance(P, PrecondOperator):
        return P.apply(v)
    return P @ v


def pcg(A, b, P=None, tol=1e-10, max_iter=None):
    """Preconditioned conjugate gradients for SPD systems.

    Iterates until the relative Euclidean residual ||b - A x|| / ||b||
    drops below tol; a negative curvature direction aborts with a
    breakdown report.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = len(b)
    if max_iter is None:
        max_iter = 10 * n + 100
    bnorm = np.linalg.norm(b)
    if bnorm == 0.0:
        return SolveReport(np.zeros(n), 0, [0.0], True)
    x = np.zeros(n)
    r = b.copy()
    z = _apply_precond(P, r)
    p = z.copy()
    rz = float(r @ z)
    hist = [1.0]
    for it in range(1, max_iter + 1):
        Ap = A @ p
        pAp = float(p @ Ap)
        if pAp <= 0.0:
            return SolveReport(x, it - 1, hist, False,
                               breakdown="negative curvature")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rel = np.linalg.norm(r) / bnorm
        hist.append(rel)
        if rel <= tol:
            return SolveReport(x, it, hist, True)
        z = _apply_precond(P, r)
        rz_new = float(r @ z)
        beta = rz_new / rz
        rz = rz_new
        p = z + beta * p
    return SolveReport(x, max_iter, hist, False)


def gmres(A, b, P=None, tol=1e-10, max_iter=None):
    """Full (unrestarted) GMRES with left preconditioning.

    Counts iterations against the relative preconditioned residual and
    reports stagnation when the Krylov space stops improving.
    """
    A = np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = len(b)
    if max_iter is None:
        max_iter = n
    pb = _apply_precond(P, b)
    bnorm = np.linalg.norm(pb)
    if bnorm == 0.0:
        return SolveReport(np.zeros(n), 0, [0.0], True)
    Q = np.zeros((n, max_iter + 1))
    H = np.zeros((max_iter + 1, max_iter))
    Q[:, 0] = pb / bnorm
    beta = np.zeros(max_iter + 1)
    beta[0] = bnorm
    hist = [1.0]
    for k in range(max_iter):
        w = _apply_precond(P, A @ Q[:, k])
        for j in range(k + 1):
            H[j, k] = float(Q[:, j] @ w)
            w -= H[j, k] * Q[:, j]
        H[k + 1, k] = np.linalg.norm(w)
        if H[k + 1, k] > 1e-14 * bnorm:
            Q[:, k + 1] = w / H[k + 1, k]
        y, res, *_ = np.linalg.lstsq(H[:k + 2, :k + 1], beta[:k + 2],
                                     rcond=None)
        rel = np.linalg.norm(beta[:k + 2] - H[:k + 2, :k + 1] @ y) / bnorm
        hist.append(rel)
        if rel <= tol:
            x = Q[:, :k + 1] @ y
            return SolveReport(x, k + 1, hist, True)
        if k > 10 and hist[-1] > 0.999 * hist[-11]:
            x = Q[:, :k + 1] @ y
            return SolveReport(x, k + 1, hist, False,
                               breakdown="stagnation")
    y, *_ = np.linalg.lstsq(H, beta, rcond=None)
    return SolveReport(Q[:, :max_iter] @ y, max_iter, hist, False)


def condition_number(A, P=None):
    """Spectral condition number of A or of the preconditioned PA.

    Symmetric A with an SPD preconditioner uses the generalized
    symmetric eigenproblem A x = lambda (D B^{-1} D^T) x, which shares
    its spectrum with PA; nonsymmetric input falls back to max|lambda| /
    min|lambda| of the preconditioned matrix.
    """
    A = np.asarray(A, dtype=float)
    sym = np.allclose(A, A.T, rtol=1e-10, atol=1e-12 * np.abs(A).max())
    if P is None:
        if sym:
            ev = np.linalg.eigvalsh(A)
            return float(ev[-1] / ev[0])
        ev = np.abs(np.linalg.eigvals(A))
        return float(ev.max() / ev.min())
    if isinstance(P, PrecondOperator) and sym:
        # PA is similar to the SPD pencil (A, D B^{-1} D^T)
        ev = eigh(A, _pencil_matrix(P), eigvals_only=True)
        return float(ev[-1] / ev[0])
    PA = _apply_precond(P, A) if not isinstance(P, PrecondOperator) \
        else P.apply(A)
    ev = np.abs(np.linalg.eigvals(PA))
    return float(ev.max() / ev.min())


def _pencil_matrix(P):
    """D B^{-1} D^T for the symmetric generalized eigenproblem."""
    L = cholesky(P.B, lower=True)
    X = np.linalg.solve(L, P.D.T)
    return X.T @ X


def eigenvalue_cloud(A, P=None):
    """Sorted spectrum of A or PA."""
    A = np.asarray(A, dtype=float)
    sym = np.allclose(A, A.T, rtol=1e-10, atol=1e-12 * np.abs(A).max())
    if P is None:
        if sym:
            return np.sort(np.linalg.eigvalsh(A))
        return np.sort(np.real(np.linalg.eigvals(A)))
    if isinstance(P, PrecondOperator) and sym:
        return np.sort(eigh(A, _pencil_matrix(P), eigvals_only=True))
    PA = P.dense() @ A if isinstance(P, PrecondOperator) else P @ A
    return np.sort(np.real(np.linalg.eigvals(PA)))


def error_norms(mesh, u_h, order, gauss_order=6):
    """L2 and energy errors against the closed-form unit-load solution
    on the unit disk, u(x) = a_ns (1 - |x|^2)^s.

    The energy error uses Galerkin orthogonality:
    |u - u_h|_a^2 = a(u, u) - a(u_h, u_h) = int f u - f^T u_h with the
    exact energy a_ns * pi / (s + 1).
    """
    s = order.s
    bverts = mesh.vertices[mesh.boundary_vertex()]
    radii = np.hypot(bverts[:, 0], bverts[:, 1])
    if not np.allclose(radii, 1.0, atol=5e-2):
        raise ValueError("error norms require the unit-disk geometry")
    a_ns = order.a_ns
    pts, wts, elem_of = assembly.element_quadrature(mesh, gauss_order)
    H = assembly.hat_values(mesh, pts, elem_of)
    tris = np.asarray(mesh.triangles)
    full = assembly.expand_interior(mesh, u_h)
    uh = (H * full[tris[elem_of]]).sum(axis=1)
    ue = a_ns * np.maximum(1.0 - (pts ** 2).sum(axis=1), 0.0) ** s
    l2 = math.sqrt(float(wts @ (uh - ue) ** 2))
    exact_energy = a_ns * math.pi / (s + 1.0)
    load = assembly.assemble_load(mesh, lambda p: np.ones(len(p)))
    gap = exact_energy - float(load @ np.asarray(u_h, dtype=float))
    energy = math.sqrt(max(gap, 0.0))
    return l2, energy
