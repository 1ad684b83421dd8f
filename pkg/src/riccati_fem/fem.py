"""Lagrange finite elements on uniform 1D meshes and 2D tensor products.

Element basis nodes are Gauss-Lobatto points, which keeps the nodal basis
well conditioned up to the spectral orders (k ~ 128) used for reference
solutions.  All integrals use a single (k+2)-point Gauss-Legendre rule per
element and direction: one point more than mass exactness requires, which
also absorbs the smooth non-polynomial actuator profiles.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.special import roots_legendre

from .linalg import cholesky_solve


class InvalidCount(ValueError):
    """Quadrature point count outside the valid range for the rule kind."""


class DuplicateNodes(ValueError):
    """Lagrange basis nodes must be pairwise distinct."""


class PointOutsideDomain(ValueError):
    """Evaluation or load point lies outside the mesh domain."""


@dataclass(frozen=True)
class QuadRule:
    """Quadrature rule on the reference interval [-1, 1]."""

    kind: str  # "gauss-legendre" | "gauss-lobatto"
    points: np.ndarray
    weights: np.ndarray


def quad_rule(kind, m):
    """Gauss-Legendre or Gauss-Lobatto rule with m points on [-1, 1].

    Gauss-Legendre needs m >= 1 and integrates degree 2m-1 exactly;
    Gauss-Lobatto needs m >= 2, includes the endpoints, and integrates
    degree 2m-3 exactly.
    """
    kind = kind.lower()
    if kind == "gauss-legendre":
        if m < 1:
            raise InvalidCount("Gauss-Legendre needs at least one point")
        x, w = roots_legendre(m)
        return QuadRule(kind, np.asarray(x, float), np.asarray(w, float))
    if kind == "gauss-lobatto":
        if m < 2:
            raise InvalidCount("Gauss-Lobatto needs at least two points")
        x, w = _gauss_lobatto(m)
        return QuadRule(kind, x, w)
    raise InvalidCount("unknown quadrature kind %r" % kind)


def _gauss_lobatto(m):
    # Newton iteration on the Legendre recurrence, Chebyshev initial guess
    # (von Winckel's classic construction).
    x = np.cos(np.pi * np.arange(m) / (m - 1))
    v = np.zeros((m, m))
    x_prev = 2.0 * np.ones(m)
    while np.max(np.abs(x - x_prev)) > 1e-15:
        v[:, 0] = 1.0
        v[:, 1] = x
        for j in range(1, m - 1):
            v[:, j + 1] = ((2 * j + 1) * x * v[:, j] - j * v[:, j - 1]) / (j + 1)
        x_prev = x.copy()
        x = x_prev - (x * v[:, m - 1] - v[:, m - 2]) / (m * v[:, m - 1])
    w = 2.0 / ((m - 1) * m * v[:, m - 1] ** 2)
    order = np.argsort(x)
    x = x[order]
    x[0], x[-1] = -1.0, 1.0
    return x, w[order]


def lagrange_eval(nodes, x):
    """Values and derivatives of the Lagrange basis on ``nodes`` at ``x``.

    Returns two (len(nodes), len(x)) tables.  Values use the second
    barycentric form; derivatives come from the nodal differentiation
    matrix, which is exact because each basis derivative has degree < k.
    """
    nodes = np.atleast_1d(np.asarray(nodes, float))
    x = np.atleast_1d(np.asarray(x, float))
    n = nodes.size
    if n > 1:
        gaps = np.abs(nodes[:, None] - nodes[None, :])
        np.fill_diagonal(gaps, np.inf)
        if gaps.min() < 1e-14 * max(1.0, np.max(np.abs(nodes))):
            raise DuplicateNodes("basis nodes are not pairwise distinct")
    bary = _bary_weights(nodes)
    diff = x[None, :] - nodes[:, None]
    hit = np.abs(diff) < 1e-14
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = bary[:, None] / diff
        values = ratios / np.sum(ratios, axis=0)
    for p in np.flatnonzero(hit.any(axis=0)):
        values[:, p] = 0.0
        values[np.argmax(hit[:, p]), p] = 1.0
    deriv = _diff_matrix(nodes, bary).T @ values
    return values, deriv


def _bary_weights(nodes):
    n = nodes.size
    w = np.ones(n)
    for i in range(n):
        w[i] = 1.0 / np.prod(np.delete(nodes[i] - nodes, i))
    return w / np.max(np.abs(w))


def _diff_matrix(nodes, bary):
    n = nodes.size
    d = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                d[i, j] = (bary[j] / bary[i]) / (nodes[i] - nodes[j])
        d[i, i] = -np.sum(d[i])
    return d


@dataclass(frozen=True)
class FemSpace:
    """Uniform-mesh Lagrange space, 1D or a 2D tensor product of itself.

    For 2D spaces the per-direction structure is identical; global dof g
    corresponds to the pair (ix, iy) with g = ix * n1d + iy, matching the
    Kronecker convention M2 = M1 (x) M1.
    """

    dim_kind: str          # "1d" | "2d"
    order: int
    n_elem: int            # per direction
    domain: tuple          # (a, b) interval per direction
    bc: str                # "neumann" | "dirichlet"
    h: float               # element length
    ref_nodes: np.ndarray  # Gauss-Lobatto basis nodes on [-1, 1]
    dof_coords: np.ndarray
    free_mask: np.ndarray

    @property
    def n_dofs_1d(self):
        return self.n_elem * self.order + 1

    @property
    def n_dofs(self):
        n1 = self.n_dofs_1d
        return n1 * n1 if self.dim_kind == "2d" else n1

    @property
    def n_free(self):
        return int(np.count_nonzero(self.free_mask))

    def coords_1d(self):
        """Global dof coordinates along one direction."""
        a = self.domain[0]
        xs = np.empty(self.n_dofs_1d)
        for e in range(self.n_elem):
            xs[e * self.order:(e + 1) * self.order + 1] = (
                a + e * self.h + (self.ref_nodes + 1.0) * self.h / 2.0
            )
        return xs


def build_space(dim_kind, k, n_elem, domain, bc):
    """Construct a FemSpace.

    ``domain`` is the 1D interval (a, b); a 2D space lives on the square
    (a, b)^2.  Dirichlet removes the endpoint dofs (per direction).
    """
    if k < 1 or n_elem < 1:
        raise ValueError("need k >= 1 and n_elem >= 1")
    dim_kind = dim_kind.lower()
    if dim_kind not in ("1d", "2d"):
        raise ValueError("dim_kind must be '1d' or '2d'")
    bc = bc.lower()
    if bc not in ("neumann", "dirichlet"):
        raise ValueError("bc must be 'neumann' or 'dirichlet'")
    a, b = float(domain[0]), float(domain[1])
    if not b > a:
        raise ValueError("domain must satisfy b > a")
    h = (b - a) / n_elem
    ref_nodes = quad_rule("gauss-lobatto", k + 1).points
    n1 = n_elem * k + 1
    xs = np.empty(n1)
    for e in range(n_elem):
        xs[e * k:(e + 1) * k + 1] = a + e * h + (ref_nodes + 1.0) * h / 2.0
    free1 = np.ones(n1, dtype=bool)
    if bc == "dirichlet":
        free1[0] = free1[-1] = False
    if dim_kind == "1d":
        coords = xs.reshape(-1, 1)
        free = free1
    else:
        gx, gy = np.meshgrid(xs, xs, indexing="ij")
        coords = np.column_stack([gx.ravel(), gy.ravel()])
        free = np.logical_and.outer(free1, free1).ravel()
    return FemSpace(
        dim_kind=dim_kind, order=k, n_elem=n_elem, domain=(a, b), bc=bc,
        h=h, ref_nodes=ref_nodes, dof_coords=coords, free_mask=free,
    )


@dataclass(frozen=True)
class FemField:
    """Coefficients of a function in a FemSpace, one per free dof."""

    space: FemSpace
    coeffs: np.ndarray

    def __post_init__(self):
        if self.coeffs.shape != (self.space.n_free,):
            raise ValueError("coefficient count does not match free dofs")

    def full_coeffs(self):
        """Coefficients on all dofs, zeros at constrained ones."""
        full = np.zeros(self.space.n_dofs)
        full[self.space.free_mask] = self.coeffs
        return full


_TABLE_CACHE = {}


def _element_tables(space):
    k = space.order
    if k not in _TABLE_CACHE:
        rule = quad_rule("gauss-legendre", k + 2)
        values, deriv = lagrange_eval(space.ref_nodes, rule.points)
        _TABLE_CACHE[k] = (rule, values, deriv)
    return _TABLE_CACHE[k]


def _assemble_1d(space, local):
    k, n = space.order, space.n_elem
    n1 = n * k + 1
    mat = np.zeros((n1, n1))
    for e in range(n):
        sl = slice(e * k, e * k + k + 1)
        mat[sl, sl] += local
    return mat


def _mass_1d(space):
    rule, values, _ = _element_tables(space)
    local = (values * rule.weights) @ values.T * (space.h / 2.0)
    return _assemble_1d(space, local)


def _stiffness_1d(space):
    rule, _, deriv = _element_tables(space)
    local = (deriv * rule.weights) @ deriv.T * (2.0 / space.h)
    return _assemble_1d(space, local)


def _restrict(space, mat):
    free = space.free_mask
    return mat[np.ix_(free, free)]


def assemble_mass(space):
    """Mass matrix on the free dofs; SPD.

    2D masses are the Kronecker product of the 1D factor masses.
    """
    m1 = _mass_1d(space)
    if space.dim_kind == "2d":
        return _restrict(space, np.kron(m1, m1))
    return _restrict(space, m1)


def assemble_stiffness(space):
    """Gradient Gram matrix (positive semidefinite form of the Laplacian).

    In 2D this is K1 (x) M1 + M1 (x) K1.  With Neumann boundary conditions
    the constant vector spans the null space; the Dirichlet restriction
    is SPD.
    """
    k1 = _stiffness_1d(space)
    if space.dim_kind == "2d":
        m1 = _mass_1d(space)
        full = np.kron(k1, m1) + np.kron(m1, k1)
    else:
        full = k1
    return _restrict(space, full)


def assemble_functional(space, f):
    """Load vector b_i = integral of f * phi_i over the domain.

    ``f`` is a callable of the dof coordinates (vectorized: f(x) in 1D,
    f(x, y) in 2D).  A point mass is requested by passing an object with
    an ``x0`` attribute (see models.PointSource); the load is then the
    nodal basis evaluation phi_i(x0).
    """
    x0 = getattr(f, "x0", None)
    if x0 is not None:
        return _point_load(space, x0)
    rule, values, _ = _element_tables(space)
    k, n = space.order, space.n_elem
    a = space.domain[0]
    if space.dim_kind == "1d":
        b = np.zeros(space.n_dofs_1d)
        for e in range(n):
            xs = a + e * space.h + (rule.points + 1.0) * space.h / 2.0
            b[e * k:e * k + k + 1] += (space.h / 2.0) * (values @ (rule.weights * f(xs)))
        return b[space.free_mask]
    n1 = space.n_dofs_1d
    b = np.zeros((n1, n1))
    wv = values * rule.weights  # (k+1, q) tables including weights
    jac = (space.h / 2.0) ** 2
    for ex in range(n):
        xs = a + ex * space.h + (rule.points + 1.0) * space.h / 2.0
        for ey in range(n):
            ys = a + ey * space.h + (rule.points + 1.0) * space.h / 2.0
            fvals = f(xs[:, None], ys[None, :])
            loc = jac * (wv @ fvals @ wv.T)
            b[ex * k:ex * k + k + 1, ey * k:ey * k + k + 1] += loc
    return b.ravel()[space.free_mask]


def _point_load(space, x0):
    if space.dim_kind != "1d":
        raise PointOutsideDomain("point loads are only supported in 1D")
    a, bnd = space.domain
    x0 = float(x0)
    if not (a <= x0 <= bnd):
        raise PointOutsideDomain("point mass at %g outside [%g, %g]" % (x0, a, bnd))
    e = min(int((x0 - a) / space.h), space.n_elem - 1)
    xi = 2.0 * (x0 - (a + e * space.h)) / space.h - 1.0
    values, _ = lagrange_eval(space.ref_nodes, np.array([xi]))
    b = np.zeros(space.n_dofs_1d)
    k = space.order
    b[e * k:e * k + k + 1] = values[:, 0]
    return b[space.free_mask]


def eval_matrix_1d(space, xs):
    """Evaluation operators for one direction of a space.

    Returns (E, D) with shapes (len(xs), n_dofs_1d) so that E @ c are
    values and D @ c derivatives of the 1D function with coefficients c.
    """
    xs = np.asarray(xs, dtype=float)
    a, bnd = space.domain
    tol = 1e-12 * max(1.0, abs(bnd - a))
    if np.any(xs < a - tol) or np.any(xs > bnd + tol):
        raise PointOutsideDomain("evaluation points outside [%g, %g]" % (a, bnd))
    k, n = space.order, space.n_elem
    n1 = space.n_dofs_1d
    elem = np.clip(((xs - a) / space.h).astype(int), 0, n - 1)
    e_mat = np.zeros((xs.size, n1))
    d_mat = np.zeros((xs.size, n1))
    for e in np.unique(elem):
        sel = np.flatnonzero(elem == e)
        xi = 2.0 * (xs[sel] - (a + e * space.h)) / space.h - 1.0
        values, deriv = lagrange_eval(space.ref_nodes, xi)
        e_mat[np.ix_(sel, range(e * k, e * k + k + 1))] = values.T
        d_mat[np.ix_(sel, range(e * k, e * k + k + 1))] = deriv.T * (2.0 / space.h)
    return e_mat, d_mat


def evaluate(field, points):
    """Evaluate a field and its first derivative(s) at arbitrary points.

    1D: points shape (m,), returns (values, dvalues) each shape (m,).
    2D: points shape (m, 2), returns (values, (d/dx, d/dy)).
    """
    space = field.space
    full = field.full_coeffs()
    if space.dim_kind == "1d":
        pts = np.atleast_1d(np.asarray(points, float))
        e_mat, d_mat = eval_matrix_1d(space, pts)
        return e_mat @ full, d_mat @ full
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("2D evaluation points must have shape (m, 2)")
    n1 = space.n_dofs_1d
    coef = full.reshape(n1, n1)
    ex, dx = eval_matrix_1d(space, pts[:, 0])
    ey, dy = eval_matrix_1d(space, pts[:, 1])
    vals = np.einsum("pi,ij,pj->p", ex, coef, ey)
    ddx = np.einsum("pi,ij,pj->p", dx, coef, ey)
    ddy = np.einsum("pi,ij,pj->p", ex, coef, dy)
    return vals, (ddx, ddy)


def evaluate_grid(field, xs, ys):
    """Evaluate a 2D field on the tensor grid xs (x) ys.

    Returns (values, ddx, ddy), each shaped (len(xs), len(ys)).  Much
    faster than point-wise evaluation for the error quadratures.
    """
    space = field.space
    if space.dim_kind != "2d":
        raise ValueError("evaluate_grid requires a 2D space")
    n1 = space.n_dofs_1d
    coef = field.full_coeffs().reshape(n1, n1)
    ex, dx = eval_matrix_1d(space, xs)
    ey, dy = eval_matrix_1d(space, ys)
    return ex @ coef @ ey.T, dx @ coef @ ey.T, ex @ coef @ dy.T


def mass_solve(space, rhs):
    """Solve M x = rhs with the space's mass matrix."""
    return cholesky_solve(assemble_mass(space), rhs)
