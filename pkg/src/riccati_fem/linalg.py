"""Dense linear algebra kernels shared by the Riccati and model layers.

Provides factorization-based solves, the real Schur form, and a
Bartels-Stewart solver for the continuous Lyapunov equation

    A^T X + X A + Q = 0,

which is the inner solve of the Newton-Kleinman CARE iteration.
"""

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla


class NotSPD(ArithmeticError):
    """Cholesky factorization hit a nonpositive or negligible pivot."""


class Singular(ArithmeticError):
    """LU factorization produced a pivot below the singularity threshold."""


class NoConvergence(RuntimeError):
    """The QR iteration for the Schur form failed to converge."""


class UnstableA(RuntimeError):
    """A matrix required to be Hurwitz has an eigenvalue with Re >= -1e-12."""


#: absolute floor guarding relative tolerances against zero matrices
TINY = 1e-300


@dataclass(frozen=True)
class SchurForm:
    """Real Schur decomposition A = Q T Q^T.

    ``q`` is orthogonal and ``t`` quasi-upper-triangular with 1x1 and 2x2
    diagonal blocks; entries below the block diagonal are exactly zero.
    """

    q: np.ndarray
    t: np.ndarray


def _as_square(a, name="A"):
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError("%s must be a square matrix, got shape %r" % (name, a.shape))
    return a


def symmetrize(a):
    """Return the symmetric part (A + A^T) / 2."""
    return 0.5 * (a + a.T)


def is_symmetric(a, rtol=1e-12):
    a = np.asarray(a, dtype=float)
    scale = max(1.0, np.linalg.norm(a))
    return np.max(np.abs(a - a.T), initial=0.0) <= rtol * scale


def cholesky_solve(a, b):
    """Solve A X = B for symmetric positive definite A.

    Raises NotSPD if A is not symmetric or a Cholesky pivot falls at or
    below 1e-14 * ||A||_F.  B may be a vector or a matrix of right-hand
    sides; A is not modified.
    """
    a = _as_square(a)
    b = np.asarray(b, dtype=float)
    fro = np.linalg.norm(a)
    if not is_symmetric(a):
        raise NotSPD("matrix is not symmetric")
    try:
        chol = np.linalg.cholesky(a)
    except np.linalg.LinAlgError as exc:
        raise NotSPD("Cholesky factorization failed: %s" % exc) from exc
    if np.min(np.diag(chol)) ** 2 <= 1e-14 * max(fro, TINY):
        raise NotSPD("Cholesky pivot below 1e-14 * ||A||_F")
    return sla.cho_solve((chol, True), b, check_finite=False)


def lu_solve(a, b):
    """Solve A X = B by LU with partial pivoting.

    Raises Singular when a pivot magnitude is at or below
    1e-14 * ||A||_inf.
    """
    a = _as_square(a)
    b = np.asarray(b, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(a)
    scale = max(np.linalg.norm(a, np.inf), TINY)
    if np.min(np.abs(np.diag(lu))) <= 1e-14 * scale:
        raise Singular("LU pivot below 1e-14 * ||A||_inf")
    return sla.lu_solve((lu, piv), b, check_finite=False)


def real_schur(a):
    """Real Schur form of a square matrix.

    Returns a SchurForm with orthogonal q and quasi-upper-triangular t such
    that q @ t @ q.T reconstructs A.  Deterministic for fixed input.  Raises
    NoConvergence if the underlying QR iteration fails (pathological input).
    """
    a = _as_square(a)
    if not np.all(np.isfinite(a)):
        raise ValueError("matrix entries must be finite")
    try:
        t, q = sla.schur(a, output="real")
    except (sla.LinAlgError, ValueError) as exc:
        raise NoConvergence("Schur QR iteration failed: %s" % exc) from exc
    # LAPACK leaves the strict lower part below the subdiagonal untouched
    # only in theory; enforce exact zeros so block detection is reliable.
    t = np.triu(t, -1)
    return SchurForm(q=q, t=t)


def schur_eigenvalues(t):
    """Eigenvalues read off the diagonal blocks of a quasi-triangular T."""
    t = np.asarray(t, dtype=float)
    n = t.shape[0]
    vals = np.empty(n, dtype=complex)
    i = 0
    while i < n:
        if i + 1 < n and t[i + 1, i] != 0.0:
            a11, a12 = t[i, i], t[i, i + 1]
            a21, a22 = t[i + 1, i], t[i + 1, i + 1]
            mean = 0.5 * (a11 + a22)
            disc = 0.25 * (a11 - a22) ** 2 + a12 * a21
            if disc >= 0.0:
                root = np.sqrt(disc)
                vals[i] = mean + root
                vals[i + 1] = mean - root
            else:
                root = np.sqrt(-disc)
                vals[i] = mean + 1j * root
                vals[i + 1] = mean - 1j * root
            i += 2
        else:
            vals[i] = t[i, i]
            i += 1
    return vals


def _block_starts(t):
    """Indices where the 1x1/2x2 diagonal blocks of T begin."""
    n = t.shape[0]
    starts = []
    i = 0
    while i < n:
        starts.append(i)
        if i + 1 < n and t[i + 1, i] != 0.0:
            i += 2
        else:
            i += 1
    return starts


def _bartels_stewart_triangular(t, qt):
    """Solve T^T Y + Y T + Qt = 0 for strictly triangular T (real spectrum)."""
    n = t.shape[0]
    y = np.zeros_like(qt)
    tl = np.ascontiguousarray(t.T)
    base_diag = np.diag(t).copy()
    idx = np.arange(n)
    for j in range(n):
        rhs = -qt[:, j] - y[:, :j] @ t[:j, j]
        tl[idx, idx] = base_diag + t[j, j]
        y[:, j] = sla.solve_triangular(tl, rhs, lower=True, check_finite=False)
    return y


def _bartels_stewart_blocked(t, qt, starts):
    """Solve T^T Y + Y T + Qt = 0 block column by block column."""
    n = t.shape[0]
    y = np.zeros_like(qt)
    sizes = [starts[i + 1] - starts[i] for i in range(len(starts) - 1)]
    sizes.append(n - starts[-1])
    eyes = {1: np.eye(1), 2: np.eye(2)}
    for jb, cj in enumerate(starts):
        sj = sizes[jb]
        tjj = t[cj:cj + sj, cj:cj + sj]
        rhs_col = -qt[:, cj:cj + sj] - y[:, :cj] @ t[:cj, cj:cj + sj]
        for ib, ci in enumerate(starts):
            si = sizes[ib]
            tii = t[ci:ci + si, ci:ci + si]
            r = rhs_col[ci:ci + si, :] - t[:ci, ci:ci + si].T @ y[:ci, cj:cj + sj]
            small = np.kron(eyes[sj], tii.T) + np.kron(tjj.T, eyes[si])
            sol = lu_solve(small, r.reshape(si * sj, order="F"))
            y[ci:ci + si, cj:cj + sj] = sol.reshape(si, sj, order="F")
    return y


def solve_lyapunov(a, q):
    """Solve the continuous Lyapunov equation A^T X + X A + Q = 0.

    A must be Hurwitz (all eigenvalues with negative real part) and Q
    symmetric; the result is symmetric, and positive semidefinite when Q is.

    The equation is reduced with the real Schur form of a diagonally
    balanced copy of A and solved by forward block substitution
    (Bartels-Stewart); 2x2 Schur blocks lead to small coupled systems
    handled by lu_solve.  Balancing uses exact powers of two, so the
    similarity transform is exact in floating point.

    Raises UnstableA if any Schur eigenvalue has real part >= -1e-12,
    and propagates NoConvergence from the Schur step.
    """
    a = _as_square(a)
    q = _as_square(q, name="Q")
    if a.shape != q.shape:
        raise ValueError("A and Q must have matching shapes")
    if not is_symmetric(q):
        raise ValueError("Q must be symmetric")
    balanced, d = sla.matrix_balance(a, permute=False)
    dvec = np.diag(d)
    form = real_schur(balanced)
    eigs = schur_eigenvalues(form.t)
    if np.max(eigs.real) >= -1e-12:
        raise UnstableA(
            "A has an eigenvalue with real part %.3e >= -1e-12" % np.max(eigs.real)
        )
    # balanced problem: B = D^-1 A D, X' = D X D, Q' = D Q D
    qprime = q * dvec[:, None] * dvec[None, :]
    qt = form.q.T @ qprime @ form.q
    starts = _block_starts(form.t)
    if len(starts) == form.t.shape[0]:
        y = _bartels_stewart_triangular(form.t, qt)
    else:
        y = _bartels_stewart_blocked(form.t, qt, starts)
    xprime = form.q @ y @ form.q.T
    x = xprime / dvec[:, None] / dvec[None, :]
    return symmetrize(x)
