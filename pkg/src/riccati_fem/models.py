"""Model LQR plants: scalar perturbation, 1D/2D thermal, weakly damped wave.

Each constructor discretizes the PDE with the Lagrange elements from
``fem`` and packages the matrices (M, A, B, C, R) of the control system.
Gains are recovered from Riccati solutions as functions in the FEM space
via kappa = R^-1 B^T P M^-1.
"""

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import fem
from .linalg import cholesky_solve, symmetrize
from .riccati import (
    CareProblem,
    DreConfig,
    dre_solve,
    solve_care,
    solve_care_diag_rank1,
)


class InvalidParameter(ValueError):
    """Model parameter outside its admissible range."""


class UnknownProfile(ValueError):
    """Profile name not in the registry."""


@dataclass(frozen=True)
class PointSource:
    """Marker for a Dirac point load at x0, consumed by assemble_functional."""

    x0: float


@dataclass(frozen=True)
class ScalarSystem:
    """Scalar plant dz/dt = -a z + b u with cost weights f = c^2, g = b^2."""

    a: float
    f: float
    g: float
    eps: float = 0.0

    def __post_init__(self):
        if self.a <= 0.0 or self.g <= 0.0 or self.f < 0.0 or self.a + self.eps <= 0.0:
            raise InvalidParameter("need a > 0, g > 0, f >= 0 and a + eps > 0")


def scalar_sigma(a, f, g):
    """Positive root of -2 a sigma - g sigma^2 + f = 0."""
    ScalarSystem(a=a, f=f, g=g)
    return (-a + math.sqrt(a * a + g * f)) / g


def scalar_study(a, f, g, eps_grid):
    """Perturbation errors |sigma - sigma_eps| over a grid of eps values."""
    sigma = scalar_sigma(a, f, g)
    out = []
    for eps in eps_grid:
        sigma_eps = scalar_sigma(a + eps, f, g)
        out.append((float(eps), abs(sigma - sigma_eps)))
    return out


def _bump1d(x):
    x = np.asarray(x, dtype=float)
    inside = np.abs(x) < 1.0 - 1e-12
    arg = np.where(inside, 1.0 - x * x, 1.0)
    return np.where(inside, np.exp(-1.0 / arg), 0.0)


def _bump_unit_factor(t):
    # one factor of the 2D bump on (0, 1): exp(-2 / (1 - (2t-1)^2))
    t = np.asarray(t, dtype=float)
    s = 2.0 * t - 1.0
    inside = np.abs(s) < 1.0 - 1e-12
    arg = np.where(inside, 1.0 - s * s, 1.0)
    return np.where(inside, np.exp(-2.0 / arg), 0.0)


def _gauss_factor(t):
    t = np.asarray(t, dtype=float)
    return np.exp(-t * t)


def _bump2d(x, y):
    return _bump_unit_factor(x) * _bump_unit_factor(y)


def _gaussian2d(x, y):
    return _gauss_factor(x) * _gauss_factor(y)


_PROFILES = {
    "bump1d": _bump1d,
    "bump2d": _bump2d,
    "gaussian2d": _gaussian2d,
    "delta1d": PointSource(0.0),
}

# per-direction factor g with f(x, y) = g(x) g(y), used by the modal
# tensor-product solver for large 2D reference meshes
_SEPARABLE_2D = {
    "bump2d": _bump_unit_factor,
    "gaussian2d": _gauss_factor,
}


def profiles(name, params=None):
    """Named actuator/weight profiles from the model problems.

    bump1d(x) = exp(-1/(1-x^2)) on (-1,1); bump2d and gaussian2d live on
    the unit square; delta1d is a point mass at x0 = 0 (params may
    override x0).
    """
    try:
        prof = _PROFILES[name]
    except KeyError:
        raise UnknownProfile("unknown profile %r" % (name,)) from None
    if name == "delta1d" and params:
        return PointSource(float(params.get("x0", 0.0)))
    return prof


def _resolve(profile):
    """Accept a profile name, callable, PointSource, or None (zero load)."""
    if profile is None:
        return None
    if isinstance(profile, str):
        return profiles(profile)
    return profile


@dataclass(frozen=True)
class StateSpace:
    """Discretized plant: M zdot = (M A) z + (M B) u, y = C z.

    ``M`` is the (block) mass matrix on free dofs, ``A`` the dense system
    matrix, ``B`` the input column, ``C`` the output rows built from raw
    load vectors, ``R`` the scalar control weight.  ``spaces`` holds one
    FemSpace per state component.
    """

    kind: str
    M: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    R: float
    spaces: tuple

    def care_problem(self):
        s = (self.B @ self.B.T) / self.R
        q = self.C.T @ self.C
        return CareProblem(A=self.A, S=symmetrize(s), Q=symmetrize(q))


@dataclass(frozen=True)
class GainFunction:
    """Functional gain, one FEM field per state component."""

    components: tuple

    def __post_init__(self):
        for comp in self.components:
            if not np.all(np.isfinite(comp.coeffs)):
                raise ValueError("gain coefficients must be finite")


def _load_or_zero(space, profile):
    prof = _resolve(profile)
    if prof is None:
        return np.zeros(space.n_free)
    return fem.assemble_functional(space, prof)


def thermal1d_model(n, k, alpha, beta, b_profile="bump1d", q_profile="bump1d"):
    """1D thermal plant on (-1, 1) with natural Neumann conditions.

    Weak operator a(q, r) = -int(alpha q' r' + beta q r); the state matrix
    is A = M^-1 K_model with K_model = -(alpha K_grad + beta M).
    """
    if alpha <= 0.0 or beta <= 0.0:
        raise InvalidParameter("need alpha > 0 and beta > 0")
    space = fem.build_space("1d", k, n, (-1.0, 1.0), "neumann")
    m = fem.assemble_mass(space)
    k_grad = fem.assemble_stiffness(space)
    k_model = -(alpha * k_grad + beta * m)
    a = cholesky_solve(m, k_model)
    b_load = _load_or_zero(space, b_profile)
    q_load = _load_or_zero(space, q_profile)
    b = cholesky_solve(m, b_load).reshape(-1, 1)
    c = q_load.reshape(1, -1)
    return StateSpace(kind="thermal1d", M=m, A=a, B=b, C=c, R=1.0, spaces=(space,))


def thermal2d_model(n, k, alpha, beta, b_profile="bump2d", q_profile="bump2d",
                    r_weight=1e-4):
    """2D thermal plant on the unit square (tensor-product elements)."""
    if alpha <= 0.0 or beta <= 0.0 or r_weight <= 0.0:
        raise InvalidParameter("need alpha, beta, r_weight > 0")
    space = fem.build_space("2d", k, n, (0.0, 1.0), "neumann")
    m = fem.assemble_mass(space)
    k_grad = fem.assemble_stiffness(space)
    k_model = -(alpha * k_grad + beta * m)
    a = cholesky_solve(m, k_model)
    b_load = _load_or_zero(space, b_profile)
    q_load = _load_or_zero(space, q_profile)
    b = cholesky_solve(m, b_load).reshape(-1, 1)
    c = q_load.reshape(1, -1)
    return StateSpace(kind="thermal2d", M=m, A=a, B=b, C=c, R=float(r_weight),
                      spaces=(space,))


def wave_model(n, k, c=1.0, gamma=1e-4, b1=None, b2="bump1d", q1="bump1d",
               q2=None, beta_weight=1e-2):
    """Weakly damped wave plant on (-1, 1) with Dirichlet conditions.

    First-order form in (v, w): dv/dt = w + b1 u,
    dw/dt = c^2 v'' - gamma w + b2 u, both components discretized in the
    same Dirichlet space.  The block system matrix is

        A = [[0, I], [-c^2 M^-1 K_grad, -gamma I]],

    following the continuous equation (the positive gradient matrix
    K_grad carries the sign and the c^2 factor explicitly).
    """
    if c <= 0.0 or gamma <= 0.0 or beta_weight <= 0.0:
        raise InvalidParameter("need c > 0, gamma > 0 and beta_weight > 0")
    space = fem.build_space("1d", k, n, (-1.0, 1.0), "dirichlet")
    m = fem.assemble_mass(space)
    k_grad = fem.assemble_stiffness(space)
    nf = space.n_free
    lap = cholesky_solve(m, k_grad)
    a = np.zeros((2 * nf, 2 * nf))
    a[:nf, nf:] = np.eye(nf)
    a[nf:, :nf] = -(c * c) * lap
    a[nf:, nf:] = -gamma * np.eye(nf)
    b1_load = _load_or_zero(space, b1)
    b2_load = _load_or_zero(space, b2)
    b = np.concatenate([
        cholesky_solve(m, b1_load), cholesky_solve(m, b2_load)
    ]).reshape(-1, 1)
    q1_load = _load_or_zero(space, q1)
    q2_load = _load_or_zero(space, q2)
    c_rows = np.zeros((2, 2 * nf))
    c_rows[0, :nf] = q1_load
    c_rows[1, nf:] = q2_load
    m_block = np.zeros((2 * nf, 2 * nf))
    m_block[:nf, :nf] = m
    m_block[nf:, nf:] = m
    return StateSpace(kind="wave", M=m_block, A=a, B=b, C=c_rows,
                      R=float(beta_weight), spaces=(space, space))


def gain_from_care(model, p):
    """Functional gain kappa = R^-1 B^T P M^-1 as FEM field(s)."""
    if p.shape != model.A.shape:
        raise ValueError("P has shape %r, expected %r" % (p.shape, model.A.shape))
    coeffs = cholesky_solve(model.M, p @ model.B).ravel() / model.R
    if model.kind == "wave":
        nf = model.spaces[0].n_free
        return GainFunction(components=(
            fem.FemField(model.spaces[0], coeffs[:nf]),
            fem.FemField(model.spaces[1], coeffs[nf:]),
        ))
    return GainFunction(components=(fem.FemField(model.spaces[0], coeffs),))


def gain_trajectory(model, config, store_every=None):
    """Run the DRE and return the gain at physical time t = 0.

    With ``store_every`` set, also returns the list of (t, gain) samples
    as a second value.
    """
    trajectory = dre_solve(model.care_problem(), config, store_every=store_every)
    t_final, p_final = trajectory[-1]
    gain = gain_from_care(model, p_final)
    if store_every is None:
        return gain
    samples = [(t, gain_from_care(model, p)) for t, p in trajectory]
    return gain, samples


@dataclass(frozen=True)
class Thermal1dCase:
    """Finite-horizon 1D thermal configuration (paper values by default)."""

    alpha: float = 1.0
    beta: float = 1.0
    b: object = "bump1d"
    q: object = "bump1d"
    tau: float = 0.1
    dt: float = 1e-3


@dataclass(frozen=True)
class Thermal2dCase:
    """Infinite-horizon 2D thermal configuration."""

    alpha: float = 1e-2
    beta: float = 1.0
    b: object = "bump2d"
    q: object = "bump2d"
    r_weight: float = 1e-4


@dataclass(frozen=True)
class WaveCase:
    """Infinite-horizon weakly damped wave configuration."""

    c: float = 1.0
    gamma: float = 1e-4
    b1: object = None
    b2: object = "bump1d"
    q1: object = "bump1d"
    q2: object = None
    beta_weight: float = 1e-2


def reference_1d(model_kind, case, p):
    """Spectral reference gain: single element of order p, Lobatto nodes.

    ``model_kind`` is "thermal" (runs the DRE of the case) or "wave"
    (solves the CARE).  p is capped at 160 to stay within the conditioning
    the nodal basis supports.
    """
    if p > 160:
        raise InvalidParameter("reference order p capped at 160")
    if model_kind == "thermal":
        model = thermal1d_model(1, p, case.alpha, case.beta, case.b, case.q)
        return gain_trajectory(model, DreConfig(tau=case.tau, dt=case.dt))
    if model_kind == "wave":
        model = wave_model(1, p, case.c, case.gamma, case.b1, case.b2,
                           case.q1, case.q2, case.beta_weight)
        sol = solve_care(model.care_problem())
        return gain_from_care(model, sol.P)
    raise ValueError("model_kind must be 'thermal' or 'wave'")


def thermal2d_reference_gain(n, k, case, trunc_tol=1e-12, max_modes=3000):
    """2D thermal reference gain on an n x n mesh via the modal solver.

    The tensor-product plant is diagonalized by the 1D generalized
    eigenproblem alpha K1 u = theta M1 u, so the CARE becomes diagonal
    with rank-one S and Q and is solved through the w = P b closure
    (solve_care_diag_rank1); dense Schur-based solves are out of reach at
    the 4x-finest reference resolutions.  Requires separable profiles.
    Modes are truncated by the influence score |b_j c_j| / mu_j keeping
    all but a ``trunc_tol`` fraction of its mass (capped at
    ``max_modes``); the quadratic damping of neglected-mode products makes
    this far more accurate than the kept count suggests.
    """
    b_fac = _separable_factor(case.b)
    q_fac = _separable_factor(case.q)
    space1 = fem.build_space("1d", k, n, (0.0, 1.0), "neumann")
    m1 = fem.assemble_mass(space1)
    k1 = fem.assemble_stiffness(space1)
    theta, modes = sla.eigh(case.alpha * k1, m1)
    theta = np.maximum(theta, 0.0)
    bt1 = modes.T @ fem.assemble_functional(space1, b_fac)
    ct1 = modes.T @ fem.assemble_functional(space1, q_fac)
    mu = case.beta + theta[:, None] + theta[None, :]
    bt = np.outer(bt1, bt1)
    ct = np.outer(ct1, ct1)
    score = np.abs(bt * ct).ravel() / mu.ravel()
    order = np.argsort(score)[::-1]
    csum = np.cumsum(score[order])
    total = csum[-1]
    needed = int(np.searchsorted(csum, (1.0 - trunc_tol) * total)) + 1
    keep = np.sort(order[:min(max(needed, 16), max_modes)])
    w_kept = solve_care_diag_rank1(
        mu.ravel()[keep], bt.ravel()[keep], ct.ravel()[keep], case.r_weight
    )
    # extend w to every mode: w_i = c_i s_i / (1 + t_i / r) with the sums
    # s, t restricted to the kept (actuated) modes; chunked to bound memory
    mu_flat = mu.ravel()
    mu_kept = mu_flat[keep]
    cb_kept = ct.ravel()[keep] * bt.ravel()[keep]
    wb_kept = w_kept * bt.ravel()[keep]
    s_all = np.empty(mu_flat.size)
    t_all = np.empty(mu_flat.size)
    for lo in range(0, mu_flat.size, 4096):
        hi = min(lo + 4096, mu_flat.size)
        d_rows = 1.0 / (mu_flat[lo:hi, None] + mu_kept[None, :])
        s_all[lo:hi] = d_rows @ cb_kept
        t_all[lo:hi] = d_rows @ wb_kept
    w_all = ct.ravel() * s_all / (1.0 + t_all / case.r_weight)
    w_all[keep] = w_kept
    n1 = space1.n_dofs_1d
    kappa = (modes @ w_all.reshape(n1, n1) @ modes.T) / case.r_weight
    space2 = fem.build_space("2d", k, n, (0.0, 1.0), "neumann")
    return GainFunction(components=(fem.FemField(space2, kappa.ravel()),))


def _separable_factor(profile):
    if isinstance(profile, str) and profile in _SEPARABLE_2D:
        return _SEPARABLE_2D[profile]
    raise UnknownProfile(
        "modal 2D reference needs a separable named profile, got %r" % (profile,)
    )
