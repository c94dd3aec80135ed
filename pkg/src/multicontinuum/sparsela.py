"""Sparse symmetric solves: SPD systems, equality-constrained saddle systems,
and smallest generalized eigenpairs."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-10
DENSE_EIG_LIMIT = 3000
PIVOT_THRESH = 0.1


class SolverError(RuntimeError):
    pass


class ConstraintRankError(SolverError):
    def __init__(self, row, msg):
        super().__init__(msg)
        self.row = row


def _relres(A, x, b):
    nb = np.linalg.norm(b)
    r = np.linalg.norm(A @ x - b)
    return r / nb if nb > 0 else r


def solve_spd(A, b, tol=DEFAULT_TOL, method="direct", maxiter=None):
    """Solve A x = b for symmetric positive definite sparse A.

    ``method="cg"`` runs Jacobi-preconditioned conjugate gradients and raises
    :class:`SolverError` with the final residual if it stalls.
    """
    A = sp.csc_matrix(A)
    b = np.asarray(b, dtype=float)
    if method == "direct":
        lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A",
                       options=dict(SymmetricMode=True), diag_pivot_thresh=0.0)
        x = lu.solve(b)
        for _ in range(3):
            res = _relres(A, x, b)
            if res <= tol:
                break
            x = x + lu.solve(b - A @ x)
    elif method == "cg":
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError("matrix has nonpositive diagonal, not SPD")
        Minv = spla.LinearOperator(A.shape, matvec=lambda v: v / d)
        x, info = spla.cg(A, b, rtol=tol, atol=0.0, M=Minv,
                          maxiter=maxiter or 20 * A.shape[0])
        if info != 0:
            raise SolverError(
                f"CG did not converge in {info} iterations, "
                f"relative residual {_relres(A, x, b):.3e}")
    else:
        raise ValueError(f"unknown method {method!r}")
    res = _relres(A, x, b)
    if res > tol and not np.isclose(res, 0):
        raise SolverError(f"SPD solve residual {res:.3e} exceeds tolerance {tol:.1e}")
    return x


@dataclass
class SaddleSystem:
    """Block system [[A, C^T], [C, 0]] [x; lam] = [rhs; g]."""
    A: sp.spmatrix
    C: sp.spmatrix
    rhs: np.ndarray
    g: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        k = self.C.shape[0]
        if self.A.shape != (n, n) or self.C.shape[1] != n:
            raise ValueError(f"inconsistent shapes A{self.A.shape} C{self.C.shape}")
        if k > n:
            raise ValueError(f"more constraints ({k}) than unknowns ({n})")


def check_constraint_rank(C, rtol=1e-10):
    """Raise :class:`ConstraintRankError` naming the first dependent row of C."""
    C = sp.csr_matrix(C)
    norms = np.sqrt(np.asarray(C.multiply(C).sum(axis=1)).ravel())
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise ConstraintRankError(int(zero[0]), f"constraint row {zero[0]} is empty")
    Cn = sp.diags(1.0 / norms) @ C
    G = (Cn @ Cn.T).toarray()
    # greedy Cholesky: a pivot collapsing to ~0 marks a row dependent on earlier ones
    k = G.shape[0]
    L = np.zeros_like(G)
    for r in range(k):
        v = G[r, r] - L[r, :r] @ L[r, :r]
        if v <= rtol:
            raise ConstraintRankError(
                r, f"constraint row {r} is linearly dependent on earlier rows")
        L[r, r] = np.sqrt(v)
        L[r + 1:, r] = (G[r + 1:, r] - L[r + 1:, :r] @ L[r, :r]) / L[r, r]


class SaddleFactor:
    """Reusable factorization of [[A, C^T], [C, 0]].

    Constraint rows are rescaled internally so both blocks have comparable
    magnitude; returned multipliers are in the caller's scaling.
    """

    def __init__(self, A, C, check_rank=True):
        A = sp.csr_matrix(A)
        C = sp.csr_matrix(C)
        self.n, self.k = A.shape[0], C.shape[0]
        if check_rank:
            check_constraint_rank(C)
        a = np.abs(A.diagonal()).mean() or 1.0
        c = np.abs(C).max() or 1.0
        self.s = a / c
        self.A, self.C = A, C
        self.K = sp.bmat([[A, self.s * C.T], [self.s * C, None]], format="csc")
        self.pivoting = False
        try:
            self.lu = self._factor(0.0)
        except RuntimeError:
            self._pivot()

    def _factor(self, thresh):
        return spla.splu(self.K, permc_spec="MMD_AT_PLUS_A",
                         options=dict(SymmetricMode=True), diag_pivot_thresh=thresh)

    def _pivot(self):
        """Refactor with threshold pivoting (the zero block can defeat the
        fast diagonal-pivot factorization)."""
        log.info("saddle factorization: switching to threshold pivoting")
        try:
            self.lu = self._factor(PIVOT_THRESH)
        except RuntimeError as exc:
            raise SolverError(f"saddle factorization failed: {exc}") from exc
        self.pivoting = True

    def solve(self, rhs, g, tol=DEFAULT_TOL):
        """Solve for one or several right-hand sides (columns)."""
        rhs = np.asarray(rhs, dtype=float)
        g = np.asarray(g, dtype=float)
        vec = rhs.ndim == 1
        if vec:
            rhs, g = rhs[:, None], g[:, None]
        b = np.vstack([rhs, self.s * g])
        z, r = self._refine(b, tol)
        if not self._ok(r, b, tol) and not self.pivoting:
            self._pivot()
            z, r = self._refine(b, tol)
        if not self._ok(r, b, tol):
            raise SolverError(
                "saddle solve did not reach tolerance: "
                f"primal {self._part(r, b, 0):.3e}, constraint {self._part(r, b, 1):.3e}")
        x, lam = z[: self.n], self.s * z[self.n:]
        if vec:
            return x[:, 0], lam[:, 0]
        return x, lam

    def _refine(self, b, tol):
        z = self.lu.solve(b)
        r = b - self.K @ z
        for _ in range(4):
            if self._ok(r, b, tol) or not np.all(np.isfinite(z)):
                break
            z = z + self.lu.solve(r)
            r = b - self.K @ z
        return z, r

    def _part(self, r, b, which):
        sl = slice(0, self.n) if which == 0 else slice(self.n, None)
        num = np.linalg.norm(r[sl], axis=0)
        den = np.linalg.norm(b[sl], axis=0)
        # primal residual is measured against the size of A x when rhs vanishes
        den = np.maximum(den, np.linalg.norm(b, axis=0))
        return float(np.max(num / np.where(den > 0, den, 1.0)))

    def _ok(self, r, b, tol):
        return self._part(r, b, 0) <= tol and self._part(r, b, 1) <= tol


def solve_saddle(S: SaddleSystem, tol=DEFAULT_TOL, method="direct", maxiter=5000):
    """Return (x, lam) with A x + C^T lam = rhs and C x = g."""
    if method == "direct":
        return SaddleFactor(S.A, S.C).solve(S.rhs, S.g, tol)
    if method == "cg":
        return _projected_cg(S, tol, maxiter)
    raise ValueError(f"unknown method {method!r}")


def _projected_cg(S: SaddleSystem, tol, maxiter):
    """Conjugate gradients on the constraint null space (iterative fallback)."""
    A = sp.csr_matrix(S.A)
    C = sp.csr_matrix(S.C)
    check_constraint_rank(C)
    CCt = sla.cho_factor((C @ C.T).toarray())

    def project(v):
        return v - C.T @ sla.cho_solve(CCt, C @ v)

    x0 = C.T @ sla.cho_solve(CCt, S.g)
    r = project(S.rhs - A @ x0)
    x = np.zeros_like(x0)
    p = r.copy()
    rr = r @ r
    nb = max(np.linalg.norm(project(S.rhs)), np.linalg.norm(A @ x0), 1e-300)
    for it in range(maxiter):
        if np.sqrt(rr) <= tol * nb:
            break
        Ap = project(A @ p)
        alpha = rr / (p @ Ap)
        x += alpha * p
        r -= alpha * Ap
        rr_new = r @ r
        p = r + (rr_new / rr) * p
        rr = rr_new
    else:
        raise SolverError(
            f"projected CG did not converge in {maxiter} iterations, "
            f"relative residual {np.sqrt(rr) / nb:.3e}")
    x = x + x0
    lam = sla.cho_solve(CCt, C @ (S.rhs - A @ x))
    return x, lam


def smallest_eigpairs(A, B, m, tol=1e-8, shift=None):
    """m smallest eigenpairs of A v = lam B v with B-orthonormal vectors.

    Dense LAPACK below ``DENSE_EIG_LIMIT`` unknowns, otherwise shift-invert
    Lanczos about a small negative shift (regularizes the Neumann kernel).
    """
    n = A.shape[0]
    if m > n:
        raise ValueError(f"requested {m} eigenpairs of a {n}-dimensional pencil")
    if n <= DENSE_EIG_LIMIT:
        Ad = A.toarray() if sp.issparse(A) else np.asarray(A)
        Bd = B.toarray() if sp.issparse(B) else np.asarray(B)
        lam, V = sla.eigh(Ad, Bd, subset_by_index=[0, m - 1])
    else:
        A = sp.csc_matrix(A)
        B = sp.csc_matrix(B)
        if shift is None:
            shift = -1e-8 * abs(A.diagonal()).max() / abs(B.diagonal()).max()
        try:
            lam, V = spla.eigsh(A, k=m, M=B, sigma=shift, which="LM", tol=tol * 1e-2)
        except spla.ArpackNoConvergence as exc:
            raise SolverError(f"eigensolver did not converge: {exc}") from exc
        order = np.argsort(lam)
        lam, V = lam[order], V[:, order]
        # re-orthonormalize in the B inner product
        G = V.T @ (B @ V)
        Lc = np.linalg.cholesky(G)
        V = np.linalg.solve(Lc, V.T).T
    lam = np.where(np.abs(lam) < 1e-14 * max(1.0, abs(lam).max()), 0.0, lam)
    Bv = B @ V
    AV = A @ V
    res = np.linalg.norm(AV - Bv * lam, axis=0) / np.maximum(np.linalg.norm(AV, axis=0),
                                                            np.linalg.norm(Bv, axis=0))
    if np.any(res > max(tol, 1e-6)):
        raise SolverError(f"eigenpair residuals too large: max {res.max():.3e}")
    return lam, V
