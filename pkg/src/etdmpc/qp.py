"""Dense convex QP container, certified solve and feasibility checks.

Problems have the form::

    min  1/2 x'Px + q'x + c
    s.t. G x <= h,  A x = b,  lb <= x <= ub
"""

from __future__ import annotations

import enum
import logging
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from ._dual_active_set import INFEASIBLE, MAX_ITER, OPTIMAL, solve_dual_active_set

log = logging.getLogger(__name__)


class Status(str, enum.Enum):
    OPTIMAL = "optimal"
    INFEASIBLE = "infeasible"
    MAX_ITERATIONS = "max_iterations"


class NotConvexError(ValueError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    feas_tol: float = 1e-6
    kkt_tol: float = 1e-6
    max_iter: int = 4000
    # slack below which the active-set kernel treats a row as violated
    active_tol: float = 1e-11


DEFAULT_SETTINGS = SolverSettings()


@dataclass(eq=False)
class QpProblem:
    hessian: np.ndarray
    linear: np.ndarray
    ineq_matrix: np.ndarray | None = None
    ineq_upper: np.ndarray | None = None
    eq_matrix: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None
    var_lower: np.ndarray | None = None
    var_upper: np.ndarray | None = None
    constant: float = 0.0
    # named row ranges, used to report violations per constraint family
    ineq_groups: dict[str, slice] = field(default_factory=dict)
    eq_groups: dict[str, slice] = field(default_factory=dict)

    def __post_init__(self):
        P = np.asarray(self.hessian, dtype=float)
        v = P.shape[0]
        if P.shape != (v, v):
            raise ValueError("hessian must be square")
        self.hessian = P
        self.linear = np.asarray(self.linear, dtype=float).reshape(v)
        self.ineq_matrix = np.zeros((0, v)) if self.ineq_matrix is None else np.asarray(self.ineq_matrix, dtype=float).reshape(-1, v)
        self.ineq_upper = np.zeros(0) if self.ineq_upper is None else np.asarray(self.ineq_upper, dtype=float).reshape(-1)
        self.eq_matrix = np.zeros((0, v)) if self.eq_matrix is None else np.asarray(self.eq_matrix, dtype=float).reshape(-1, v)
        self.eq_rhs = np.zeros(0) if self.eq_rhs is None else np.asarray(self.eq_rhs, dtype=float).reshape(-1)
        self.var_lower = np.full(v, -np.inf) if self.var_lower is None else np.asarray(self.var_lower, dtype=float).reshape(v)
        self.var_upper = np.full(v, np.inf) if self.var_upper is None else np.asarray(self.var_upper, dtype=float).reshape(v)
        if self.ineq_matrix.shape[0] != self.ineq_upper.size:
            raise ValueError("ineq_matrix and ineq_upper disagree in row count")
        if self.eq_matrix.shape[0] != self.eq_rhs.size:
            raise ValueError("eq_matrix and eq_rhs disagree in row count")
        if not self.ineq_groups and self.ineq_upper.size:
            self.ineq_groups = {"ineq": slice(0, self.ineq_upper.size)}
        if not self.eq_groups and self.eq_rhs.size:
            self.eq_groups = {"eq": slice(0, self.eq_rhs.size)}

    @property
    def n_vars(self) -> int:
        return self.hessian.shape[0]

    def objective(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(0.5 * x @ self.hessian @ x + self.linear @ x + self.constant)

    def row_count(self) -> int:
        """Inequality rows including finite bounds, plus equality rows."""
        bounds = int(np.isfinite(self.var_lower).sum() + np.isfinite(self.var_upper).sum())
        return bounds + self.ineq_upper.size + self.eq_rhs.size


@dataclass
class QpSolution:
    primal: np.ndarray
    ineq_duals: np.ndarray
    eq_duals: np.ndarray
    bound_duals: np.ndarray  # positive on active upper bounds, negative on lower
    status: Status
    kkt_residuals: dict[str, float]
    objective: float
    iterations: int = 0
    # Farkas multipliers over (ineq rows, eq rows, upper bounds, lower bounds)
    infeasibility_witness: dict[str, np.ndarray] | None = None

    @property
    def ok(self) -> bool:
        return self.status is Status.OPTIMAL


def kkt_residuals(problem: QpProblem, x, lam, nu, mu) -> dict[str, float]:
    """Infinity-norm KKT residuals for ``P x + q + G'lam + A'nu + mu = 0``."""
    P, q = problem.hessian, problem.linear
    G, h, A, b = problem.ineq_matrix, problem.ineq_upper, problem.eq_matrix, problem.eq_rhs
    grad = P @ x + q + G.T @ lam + A.T @ nu + mu
    g_slack = G @ x - h
    e_res = A @ x - b
    up = np.where(np.isfinite(problem.var_upper), x - problem.var_upper, -np.inf)
    lo = np.where(np.isfinite(problem.var_lower), problem.var_lower - x, -np.inf)
    mu_up = np.maximum(mu, 0.0)
    mu_lo = np.maximum(-mu, 0.0)

    def vmax(*arrs):
        vals = [np.max(a) for a in arrs if a.size]
        return float(max(vals)) if vals else 0.0

    primal = max(0.0, vmax(g_slack, up, lo), vmax(np.abs(e_res)))
    dual = max(0.0, vmax(-lam))
    comp = vmax(
        np.abs(lam * g_slack),
        np.abs(mu_up * np.where(np.isfinite(up), up, 0.0)),
        np.abs(mu_lo * np.where(np.isfinite(lo), lo, 0.0)),
    )
    # bound multipliers on infinite bounds must vanish
    comp = max(comp, vmax(mu_up[~np.isfinite(up)]), vmax(mu_lo[~np.isfinite(lo)]))
    return {
        "stationarity": float(np.max(np.abs(grad))) if grad.size else 0.0,
        "primal_feas": primal,
        "dual_feas": dual,
        "complementarity": comp,
    }


def duality_gap(problem: QpProblem, x, lam, nu, mu) -> float:
    """``f(x) - L(x, duals)``; zero at a KKT point."""
    lo = np.where(np.isfinite(problem.var_lower), problem.var_lower - x, 0.0)
    up = np.where(np.isfinite(problem.var_upper), x - problem.var_upper, 0.0)
    term = lam @ (problem.ineq_matrix @ x - problem.ineq_upper) + nu @ (problem.eq_matrix @ x - problem.eq_rhs)
    term += np.maximum(mu, 0) @ up + np.maximum(-mu, 0) @ lo
    return float(abs(term))


_FACTOR_CACHE: "OrderedDict[bytes, np.ndarray]" = OrderedDict()


def _inverse_cholesky_transpose(P: np.ndarray) -> np.ndarray:
    key = P.tobytes()
    J = _FACTOR_CACHE.get(key)
    if J is not None:
        _FACTOR_CACHE.move_to_end(key)
        return J
    if not np.allclose(P, P.T, rtol=0, atol=1e-12 * max(1.0, np.max(np.abs(P)))):
        raise NotConvexError("hessian is not symmetric")
    try:
        L = np.linalg.cholesky(0.5 * (P + P.T))
    except np.linalg.LinAlgError as exc:
        raise NotConvexError("hessian is not positive definite") from exc
    J = np.ascontiguousarray(np.linalg.inv(L).T)
    _FACTOR_CACHE[key] = J
    if len(_FACTOR_CACHE) > 64:
        _FACTOR_CACHE.popitem(last=False)
    return J


def _stack(problem: QpProblem):
    """Rows in ``C x >= b`` form: equalities, inequalities, upper, lower bounds."""
    v = problem.n_vars
    eye = np.eye(v)
    up = np.flatnonzero(np.isfinite(problem.var_upper))
    lo = np.flatnonzero(np.isfinite(problem.var_lower))
    C = np.vstack([problem.eq_matrix, -problem.ineq_matrix, -eye[up], eye[lo]])
    b = np.concatenate([problem.eq_rhs, -problem.ineq_upper, -problem.var_upper[up], problem.var_lower[lo]])
    return C, b, up, lo


def solve(problem: QpProblem, warm_start=None, settings: SolverSettings = DEFAULT_SETTINGS) -> QpSolution:
    """Solve ``problem`` and certify the result through its KKT residuals.

    The dual active-set method starts from the unconstrained minimiser, so
    ``warm_start`` never changes the iterates; it is only used to report
    whether the warm point was already optimal.
    """
    J0 = _inverse_cholesky_transpose(problem.hessian)
    v = problem.n_vars
    C, b, up, lo = _stack(problem)
    meq = problem.eq_rhs.size
    n_in = problem.ineq_upper.size
    norms = np.linalg.norm(C, axis=1)
    live = norms > 1e-14
    # constant rows are decided without the kernel
    dead_bad = ~live & np.where(np.arange(len(b)) < meq, np.abs(b) > settings.feas_tol, b > settings.feas_tol)

    def split(vec):
        return vec[:meq], vec[meq:meq + n_in], vec[meq + n_in:meq + n_in + up.size], vec[meq + n_in + up.size:]

    if np.any(dead_bad):
        first = int(np.flatnonzero(dead_bad)[0])
        w = np.zeros(len(b))
        w[first] = 1.0 if b[first] > 0 else -1.0
        x = np.zeros(v)
        return _finish(problem, x, np.zeros(len(b)), Status.INFEASIBLE, 0, w, split, up, lo, settings)

    Cl = np.ascontiguousarray(C[live] / norms[live, None])
    bl = np.ascontiguousarray(b[live] / norms[live])
    meq_l = int(live[:meq].sum())
    x, duals_l, code, iters, witness_l = solve_dual_active_set(
        J0, np.ascontiguousarray(problem.linear), Cl, bl, meq_l, settings.max_iter, settings.active_tol
    )
    duals = np.zeros(len(b))
    duals[live] = duals_l / norms[live]
    witness = np.zeros(len(b))
    witness[live] = witness_l / norms[live]
    status = {OPTIMAL: Status.OPTIMAL, INFEASIBLE: Status.INFEASIBLE, MAX_ITER: Status.MAX_ITERATIONS}[code]
    sol = _finish(problem, x, duals, status, iters, witness, split, up, lo, settings, quiet=True)
    if code == OPTIMAL and not sol.ok:
        polished = _polish(problem.hessian, problem.linear, Cl, bl, meq_l, duals_l)
        if polished is not None:
            x, duals_l = polished
            duals[live] = duals_l / norms[live]
        sol = _finish(problem, x, duals, Status.OPTIMAL, iters, witness, split, up, lo, settings)
    if warm_start is not None and sol.ok:
        ws = np.asarray(warm_start, dtype=float)
        if abs(problem.objective(ws) - sol.objective) <= 1e-8 * (1 + abs(sol.objective)) and np.max(np.abs(ws - sol.primal)) > 1e-6:
            log.debug("warm start attains the optimum at a different point (degenerate problem)")
    return sol


def _polish(P, q, C, b, meq, duals):
    """Re-solve the KKT system on the active set found by the kernel.

    Returns ``None`` if the refined point leaves the feasible set or flips a
    multiplier sign, in which case the kernel result stands.
    """
    act = np.flatnonzero((np.arange(len(b)) < meq) | (duals > 0))
    v, na = P.shape[0], act.size
    K = np.zeros((v + na, v + na))
    K[:v, :v] = P
    K[:v, v:] = -C[act].T
    K[v:, :v] = C[act]
    rhs = np.concatenate([-q, b[act]])
    sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    x, y = sol[:v], sol[v:]
    if np.any(y[act >= meq] < 0) or np.any(C[meq:] @ x - b[meq:] < -1e-9):
        return None
    out = np.zeros(len(b))
    out[act] = y
    return x, out


def _finish(problem, x, duals, status, iters, witness, split, up, lo, settings, quiet=False) -> QpSolution:
    v = problem.n_vars
    d_eq, d_in, d_up, d_lo = split(duals)
    lam = d_in
    nu = -d_eq
    mu = np.zeros(v)
    mu[up] += d_up
    mu[lo] -= d_lo
    res = kkt_residuals(problem, x, lam, nu, mu)
    cert = None
    if status is Status.OPTIMAL and max(res.values()) > settings.kkt_tol:
        if not quiet:
            log.warning("active-set result failed KKT certification: %s", res)
        status = Status.MAX_ITERATIONS
    if status is Status.INFEASIBLE:
        w_eq, w_in, w_up, w_lo = split(witness)
        cert = {"eq": w_eq, "ineq": w_in, "upper": w_up, "lower": w_lo}
    return QpSolution(
        primal=x, ineq_duals=lam, eq_duals=nu, bound_duals=mu, status=status,
        kkt_residuals=res, objective=problem.objective(x), iterations=int(iters),
        infeasibility_witness=cert,
    )


def verify_infeasibility_witness(problem: QpProblem, witness: dict[str, np.ndarray], tol: float = 1e-9) -> bool:
    """Check the Farkas certificate: ``C'y = 0``, ``b'y > 0``, ``y >= 0`` off equalities."""
    C, b, up, lo = _stack(problem)
    y = np.concatenate([witness["eq"], witness["ineq"], witness["upper"], witness["lower"]])
    meq = problem.eq_rhs.size
    if np.any(y[meq:] < -tol):
        return False
    scale = max(1.0, np.max(np.abs(y)))
    return bool(np.max(np.abs(C.T @ y), initial=0.0) <= tol * scale * max(1.0, np.abs(C).max(initial=1.0)) and b @ y > tol * scale)


@dataclass
class FeasibilityReport:
    violations: dict[str, float]
    tol: float

    @property
    def max_violation(self) -> float:
        return max(self.violations.values(), default=0.0)

    @property
    def feasible(self) -> bool:
        return self.max_violation <= self.tol


def check_feasible(problem: QpProblem, point, tol: float = 1e-9) -> FeasibilityReport:
    """Largest violation per constraint family at ``point``."""
    x = np.asarray(point, dtype=float).reshape(problem.n_vars)
    out: dict[str, float] = {}
    bound = np.concatenate([x - problem.var_upper, problem.var_lower - x])
    bound = bound[np.isfinite(bound)]
    if bound.size:
        out["input_box"] = max(0.0, float(bound.max()))
    slack = problem.ineq_matrix @ x - problem.ineq_upper
    for name, sl in problem.ineq_groups.items():
        seg = slack[sl]
        out[name] = max(0.0, float(seg.max())) if seg.size else 0.0
    res = np.abs(problem.eq_matrix @ x - problem.eq_rhs)
    for name, sl in problem.eq_groups.items():
        seg = res[sl]
        out[name] = float(seg.max()) if seg.size else 0.0
    return FeasibilityReport(out, tol)
