"""Continuous algebraic and differential Riccati equation solvers.

The CARE

    A^T P + P A - P S P + Q = 0,      S = B R^-1 B^T,  Q = C^T C,

is solved by Newton-Kleinman iteration: each step solves a Lyapunov
equation with the current closed-loop matrix A - S X_j.  The DRE is
integrated with the implicit trapezoidal rule, each implicit step recast
exactly as a CARE and solved warm-started from the previous step.
"""

from dataclasses import dataclass, field

import numpy as np

from .linalg import (
    UnstableA,
    solve_lyapunov,
    symmetrize,
    is_symmetric,
    TINY,
)


class NotStabilizing(RuntimeError):
    """A closed-loop matrix A - S X_j acquired a nonnegative eigenvalue."""


class MaxIterExceeded(RuntimeError):
    """Newton iteration hit the iteration cap before reaching tolerance."""


class HorizonExceeded(RuntimeError):
    """care_oracle did not reach stationarity within the given horizon."""


class StepRejected(RuntimeError):
    """A DRE step left a residual above the acceptance tolerance."""


@dataclass(frozen=True)
class CareProblem:
    """Data (A, S, Q) of a continuous algebraic Riccati equation."""

    A: np.ndarray
    S: np.ndarray
    Q: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.S.shape != (n, n) or self.Q.shape != (n, n):
            raise ValueError("A, S, Q must be square with matching dimensions")
        if not is_symmetric(self.S):
            raise ValueError("S must be symmetric")
        if not is_symmetric(self.Q):
            raise ValueError("Q must be symmetric")


@dataclass(frozen=True)
class CareSolution:
    """Stabilizing CARE solution with its residual and Newton step count."""

    P: np.ndarray
    residual: float
    iterations: int


@dataclass(frozen=True)
class DreConfig:
    """Horizon, step size and terminal value for a DRE integration."""

    tau: float
    dt: float
    terminal: np.ndarray | None = None

    def __post_init__(self):
        if not self.tau > 0.0:
            raise ValueError("tau must be positive")
        if not 0.0 < self.dt <= self.tau:
            raise ValueError("dt must satisfy 0 < dt <= tau")


def care_residual(problem, p):
    """Frobenius norm of A^T P + P A - P S P + Q."""
    a, s, q = problem.A, problem.S, problem.Q
    r = a.T @ p + p @ a - p @ s @ p + q
    return float(np.linalg.norm(r))


def solve_care(problem, tol=1e-11, max_iter=50, x0=None):
    """Newton-Kleinman iteration for the stabilizing CARE solution.

    Starts from X0 = 0 (valid because every model plant here is already
    stable) or from a stabilizing warm start ``x0``.  Each step solves

        (A - S X_j)^T X + X (A - S X_j) + X_j S X_j + Q = 0.

    Stops when the residual drops below ``tol`` relative to the problem
    scale, or when successive iterates agree to 1e-13 relative.  Raises
    NotStabilizing if a closed-loop matrix is not Hurwitz and
    MaxIterExceeded past ``max_iter`` Newton steps.
    """
    a, s, q = problem.A, problem.S, problem.Q
    n = a.shape[0]
    x = np.zeros((n, n)) if x0 is None else symmetrize(np.asarray(x0, float))
    a_norm = np.linalg.norm(a)
    q_norm = np.linalg.norm(q)
    res = care_residual(problem, x)
    for it in range(1, max_iter + 1):
        a_cl = a - s @ x
        rhs = symmetrize(x @ s @ x + q)
        try:
            x_new = solve_lyapunov(a_cl, rhs)
        except UnstableA as exc:
            raise NotStabilizing(
                "closed-loop matrix lost stability at Newton step %d" % it
            ) from exc
        x_new = symmetrize(x_new)
        res = care_residual(problem, x_new)
        scale = max(q_norm, a_norm * np.linalg.norm(x_new), TINY)
        step = np.linalg.norm(x_new - x)
        x = x_new
        if res <= tol * scale or step <= 1e-13 * max(1.0, np.linalg.norm(x)):
            return CareSolution(P=x, residual=res, iterations=it)
    raise MaxIterExceeded(
        "Newton-Kleinman did not converge in %d iterations (residual %.3e)"
        % (max_iter, res)
    )


def care_oracle(problem, step, horizon):
    """Integrate dP/ds = A^T P + P A - P S P + Q from P(0) = 0 with RK4.

    Runs until the stationarity check ||dP/ds||_F <= 1e-10 holds, raising
    HorizonExceeded otherwise.  Test-only cross-check for solve_care;
    intended for small systems.
    """
    a, s, q = problem.A, problem.S, problem.Q

    def rhs(p):
        return a.T @ p + p @ a - p @ s @ p + q

    p = np.zeros_like(a)
    t = 0.0
    while t < horizon:
        k1 = rhs(p)
        if np.linalg.norm(k1) <= 1e-10:
            return p
        k2 = rhs(p + 0.5 * step * k1)
        k3 = rhs(p + 0.5 * step * k2)
        k4 = rhs(p + step * k3)
        p = symmetrize(p + (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
        t += step
    if np.linalg.norm(rhs(p)) <= 1e-10:
        return p
    raise HorizonExceeded("stationarity not reached within horizon %g" % horizon)


def dre_solve(problem, config, step_tol=1e-9, care_tol=1e-12, store_every=None):
    """March the DRE backward from the terminal condition.

    After the change of variables s = tau - t the equation becomes the
    initial value problem dP/ds = F(P), F(P) = A^T P + P A - P S P + Q,
    with P(s=0) equal to the terminal weight.  Each implicit trapezoid
    step

        P_{j+1} - (dt/2) F(P_{j+1}) = P_j + (dt/2) F(P_j)

    is recast exactly as a CARE with coefficients

        A^ = (dt/2) A - I/2,   S^ = (dt/2) S,
        Q^ = (dt/2) Q + P_j + (dt/2) F(P_j),

    and solved by solve_care warm-started at P_j.  Returns a list of
    (t, P) pairs in decreasing physical time t = tau - s; the t = 0 entry
    is always present, intermediate iterates every ``store_every`` steps
    when requested.  Raises StepRejected when a step's recast residual
    stays above ``step_tol`` relative to its scale.
    """
    a, s, q = problem.A, problem.S, problem.Q
    n = a.shape[0]
    n_steps = int(round(config.tau / config.dt))
    if n_steps < 1 or abs(n_steps * config.dt - config.tau) > 1e-9 * config.tau:
        raise ValueError("tau must be an integer multiple of dt")
    p = np.zeros((n, n)) if config.terminal is None else symmetrize(
        np.asarray(config.terminal, float)
    )
    dt = config.dt
    a_hat = (dt / 2.0) * a - 0.5 * np.eye(n)
    s_hat = (dt / 2.0) * s
    out = [(config.tau, p.copy())]
    for j in range(1, n_steps + 1):
        f_p = a.T @ p + p @ a - p @ s @ p + q
        q_hat = symmetrize((dt / 2.0) * q + p + (dt / 2.0) * f_p)
        step_problem = CareProblem(A=a_hat, S=s_hat, Q=q_hat)
        sol = solve_care(step_problem, tol=care_tol, x0=p)
        # residual scale consistent with the equation's own term sizes
        scale = max(np.linalg.norm(q_hat),
                    np.linalg.norm(a_hat) * np.linalg.norm(sol.P), TINY)
        if sol.residual > step_tol * scale:
            raise StepRejected(
                "step %d residual %.3e exceeds %.1e relative tolerance"
                % (j, sol.residual / scale, step_tol)
            )
        p = sol.P
        t_phys = config.tau - j * dt
        if j == n_steps:
            out.append((0.0, p.copy()))
        elif store_every is not None and j % store_every == 0:
            out.append((t_phys, p.copy()))
    return out


def solve_care_diag_rank1(mu, b, c, r, tol=1e-13, max_iter=100):
    """CARE with diagonal A = -diag(mu) and rank-one S, Q.

    Solves  -diag(mu) P - P diag(mu) - P b b^T P / r + c c^T = 0  for the
    stabilizing solution, returned implicitly through the vector w = P b.
    The full solution has the closed form

        P_ij = (c_i c_j - w_i w_j / r) / (mu_i + mu_j),

    so the problem reduces to a damped Newton iteration on the closure
    w = P b in n unknowns.  Used for the separable tensor-product thermal
    plants, where the modal basis makes A diagonal and the mesh sizes are
    far beyond what a dense Schur-based solve could handle.
    """
    mu = np.asarray(mu, dtype=float)
    b = np.asarray(b, dtype=float)
    c = np.asarray(c, dtype=float)
    if np.any(mu <= 0.0):
        raise ValueError("all decay rates mu must be positive")
    if not r > 0.0:
        raise ValueError("control weight r must be positive")
    d = 1.0 / (mu[:, None] + mu[None, :])
    s_vec = d @ (c * b)
    w = c * s_vec  # exact solution of the r -> inf (Lyapunov) limit
    scale = max(np.max(np.abs(w)), TINY)

    def residual(wv):
        t_vec = d @ (wv * b)
        return wv * (1.0 + t_vec / r) - c * s_vec, t_vec

    f_val, t_vec = residual(w)
    for _ in range(max_iter):
        err = np.max(np.abs(f_val))
        if err <= tol * scale:
            return w
        jac = np.diag(1.0 + t_vec / r) + (np.outer(w, b) * d) / r
        dw = np.linalg.solve(jac, -f_val)
        lam = 1.0
        for _ in range(60):
            w_try = w + lam * dw
            f_try, t_try = residual(w_try)
            if np.max(np.abs(f_try)) < err:
                break
            lam *= 0.5
        w, f_val, t_vec = w_try, f_try, t_try
    raise MaxIterExceeded(
        "rank-one CARE Newton stalled at residual %.3e" % np.max(np.abs(f_val))
    )
