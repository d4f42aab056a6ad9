"""Reference computations used by several test modules."""

import numpy as np

from etdmpc.qp import QpProblem


def random_qp(rng, n_vars=None, feasible=True, with_bounds=True):
    """Strictly convex QP built around a known interior point."""
    v = int(rng.integers(2, 41)) if n_vars is None else n_vars
    Qm, _ = np.linalg.qr(rng.normal(size=(v, v)))
    P = Qm @ np.diag(rng.uniform(0.5, 5.0, v)) @ Qm.T
    P = 0.5 * (P + P.T)
    x0 = rng.normal(size=v)
    q = rng.normal(scale=5.0, size=v)
    m_in = int(rng.integers(0, v + 8))
    G = rng.normal(size=(m_in, v))
    h = G @ x0 + rng.uniform(0.05, 1.0, m_in)
    meq = int(rng.integers(0, max(1, v // 3)))
    A = rng.normal(size=(meq, v))
    b = A @ x0
    lo = x0 - rng.uniform(0.2, 2.0, v) if with_bounds else None
    up = x0 + rng.uniform(0.2, 2.0, v) if with_bounds else None
    if lo is not None:
        lo[rng.random(v) < 0.2] = -np.inf
        up[rng.random(v) < 0.2] = np.inf
    if not feasible:
        # two opposing rows with a gap between them
        c = rng.normal(size=v)
        G = np.vstack([G, c, -c])
        h = np.concatenate([h, [c @ x0 - 1.0], [-(c @ x0) - 1.0]])
    return QpProblem(P, q, G, h, A, b, lo, up)


def dual_projected_gradient(problem: QpProblem, max_iter=200_000, tol=1e-12):
    """Accelerated projected gradient on the Lagrange dual.

    Returns ``(x, dual_value)``; the dual value is a lower bound on the
    optimum and converges to it.
    """
    v = problem.n_vars
    eye = np.eye(v)
    up = np.isfinite(problem.var_upper)
    lo = np.isfinite(problem.var_lower)
    C = np.vstack([problem.ineq_matrix, eye[up], -eye[lo], problem.eq_matrix])
    d = np.concatenate([problem.ineq_upper, problem.var_upper[up], -problem.var_lower[lo], problem.eq_rhs])
    n_ineq = C.shape[0] - problem.eq_rhs.size
    Pinv = np.linalg.inv(problem.hessian)
    q = problem.linear
    if C.shape[0] == 0:
        x = -Pinv @ q
        return x, problem.objective(x)
    L = np.linalg.eigvalsh(C @ Pinv @ C.T).max()
    step = 1.0 / L

    def phi_grad(y):
        x = -Pinv @ (q + C.T @ y)
        return x, d - C @ x

    def proj(y):
        y = y.copy()
        y[:n_ineq] = np.maximum(y[:n_ineq], 0.0)
        return y

    def dual_value(y):
        r = q + C.T @ y
        return float(-0.5 * r @ Pinv @ r - d @ y + problem.constant)

    y = z = np.zeros(C.shape[0])
    t = 1.0
    best = -np.inf
    for k in range(max_iter):
        _, g = phi_grad(z)
        y_new = proj(z - step * g)
        if np.max(np.abs(y_new - y)) < tol:
            y = y_new
            break
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z_next = y_new + (t - 1) / t_new * (y_new - y)
        # gradient restart keeps the iteration monotone in practice
        if (z - y_new) @ (y_new - y) > 0:
            t_new, z_next = 1.0, y_new
        y, z, t = y_new, z_next, t_new
        if k % 500 == 0:
            best = max(best, dual_value(y))
    x, _ = phi_grad(y)
    return x, max(best, dual_value(y))

