"""Independent checks of the separation and feasibility guarantees.

All checks read history only; they never touch solver internals.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .constraints import GEOMETRIC_TOL, Prediction, ScaledGeometry, assemble_qp
from .dynamics import LinearModel, TimingConfig, as_time, discretize, expm
from .network import shift_plan
from .qp import check_feasible

ALGEBRA_TOL = 1e-9


def _nilpotency_index(A: np.ndarray) -> int | None:
    P = np.eye(A.shape[0])
    for k in range(1, A.shape[0] + 1):
        P = P @ A
        if not np.any(P):
            return k
    return None


def _box_magnitude(lo, hi) -> np.ndarray:
    return np.maximum(np.abs(lo), np.abs(hi))


def _scaled_corner_norm(w: np.ndarray, metric: np.ndarray) -> float:
    """max ||metric @ s| over s with |s_a| <= w_a (attained at a corner)."""
    best = 0.0
    for signs in itertools.product((1.0, -1.0), repeat=w.size):
        best = max(best, float(np.linalg.norm(metric @ (np.array(signs) * w))))
    return best


def axis_displacement_bound(model: LinearModel, horizon) -> tuple[np.ndarray, bool]:
    """Per-axis bound on position displacement over ``[0, horizon]``.

    Returns ``(w, certified)``. For nilpotent ``A`` the displacement is a
    polynomial in the elapsed time whose coefficients, bounded term by term
    with the box magnitudes, are nonnegative, so the bound at ``horizon`` is
    exact-arithmetic sound. Other models get a sampled bound inflated by 5%.
    """
    T = float(as_time(horizon)) if not isinstance(horizon, float) else horizon
    if T < 0:
        raise ValueError("horizon must be nonnegative")
    xm = _box_magnitude(model.x_min, model.x_max)
    um = _box_magnitude(model.u_min, model.u_max)
    if not (np.all(np.isfinite(xm)) and np.all(np.isfinite(um))):
        raise ValueError("displacement bound needs finite state and input boxes")
    d = model.d
    A, B = model.A, model.B
    nil = _nilpotency_index(A)
    if nil is not None:
        w = np.zeros(d)
        Ak = np.eye(model.n)
        for k in range(1, nil + 1):
            AkB = Ak @ B  # A^(k-1) B
            Ak = Ak @ A
            w += np.abs(Ak[:d]) @ xm * T ** k / math.factorial(k)
            w += np.abs(AkB[:d]) @ um * T ** k / math.factorial(k)
        return w, True
    # sampled fallback: |P (e^{A t} - I)| xm + int_0^t |P e^{A s} B| um ds on a dense grid
    taus = np.linspace(0.0, T, 201)
    w = np.zeros(d)
    integral = np.zeros(d)
    prev = np.abs(B[:d]) @ um
    for a, b in zip(taus[:-1], taus[1:]):
        cur = np.abs(expm(A * b)[:d] @ B) @ um
        integral += 0.5 * (prev + cur) * (b - a)
        prev = cur
        free = np.abs(expm(A * b)[:d] - np.eye(model.n)[:d]) @ xm
        w = np.maximum(w, free + integral)
    return 1.05 * w, False


def delta_p_max(model: LinearModel, geom: ScaledGeometry, horizon) -> float:
    """Bound on the scaled distance a vehicle can travel within ``horizon``.

    Distances are measured in the collision metric ``||Theta^-1 dp||``.
    """
    w, _ = axis_displacement_bound(model, horizon)
    return _scaled_corner_norm(w, geom.theta_inv)


def is_certified(model: LinearModel) -> bool:
    return _nilpotency_index(model.A) is not None


@dataclass
class Violation:
    round: int
    pair: tuple[int, int]
    time: float  # seconds, absolute for executed checks, plan-relative otherwise
    distance: float


@dataclass
class SeparationReport:
    min_scaled_distance_at_samples: float = math.inf
    min_scaled_distance_dense: float = math.inf
    min_scaled_distance_executed_samples: float = math.inf
    first_violation: Violation | None = None
    violations: int = 0
    guarantee_configured: bool | None = None
    certified_bound: bool | None = None
    delta_p_max: float | None = None
    proof_inequality_holds: bool | None = None
    threshold: float | None = None

    @property
    def ok(self) -> bool:
        return self.violations == 0 and self.proof_inequality_holds is not False

    def summary(self) -> dict:
        out = asdict(self)
        for key, val in out.items():
            if isinstance(val, float) and math.isinf(val):
                out[key] = None
        return out


def _pairwise_min(pos: np.ndarray, theta_inv: np.ndarray):
    """Pairwise scaled distances for ``pos`` of shape (N, S, d).

    Returns the global minimum and the (i, j, s) index of the minimum.
    """
    N = pos.shape[0]
    if N < 2:
        return math.inf, None, None
    i, j = np.triu_indices(N, 1)
    diff = (pos[j] - pos[i]) @ theta_inv
    dist = np.linalg.norm(diff, axis=-1)  # (pairs, S)
    flat = int(np.argmin(dist))
    p, s = np.unravel_index(flat, dist.shape)
    return float(dist[p, s]), dist, (i, j)


def check_lemma1(history, geom: ScaledGeometry, tol: float = GEOMETRIC_TOL) -> SeparationReport:
    """Scaled separation of all plans at every collision sample, every round."""
    report = SeparationReport(threshold=geom.r_hat_min)
    d = geom.theta.shape[0]
    for buf in history:
        timing = buf.plans[0].timing
        steps = np.arange(timing.h_c + 1) * timing.tc_steps
        pos = np.stack([p.states_at_steps(steps)[:, :d] for p in buf.plans])
        mn, dist, pairs = _pairwise_min(pos, geom.theta_inv)
        if dist is None:
            continue
        report.min_scaled_distance_at_samples = min(report.min_scaled_distance_at_samples, mn)
        bad = dist < geom.r_hat_min - tol
        count = int(bad.sum())
        if count and report.first_violation is None:
            p, h = map(int, np.argwhere(bad)[0])
            t = float(timing.T + h * timing.Tc)
            report.first_violation = Violation(buf.current_round, (int(pairs[0][p]), int(pairs[1][p])), t, float(dist[p, h]))
        report.violations += count
    return report


def executed_positions(history, model: LinearModel, substeps: int = 8):
    """Positions actually flown, sampled ``substeps`` times per base interval.

    Returns ``(times, positions, is_sample)`` where ``positions`` has shape
    (N, S, d) and ``is_sample`` marks collision sample instants.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    timing = history[0].plans[0].timing
    d = model.d
    spr = timing.steps_per_round
    sub = timing.base_step / substeps
    Ad, Bd = discretize(model, sub)
    times, chunks, sample_flags = [], [], []
    for buf in history:
        k = buf.current_round
        X = np.stack([p.states[:spr + 1] for p in buf.plans])  # plan start .. plan start + T
        U = np.stack([p.inputs for p in buf.plans])
        seg = np.empty((len(buf.plans), spr * substeps + 1, d))
        for j in range(spr):
            kappa = j // timing.ts_steps
            x = X[:, j]
            u = U[:, kappa] if kappa < U.shape[1] else np.zeros_like(U[:, 0])
            for s in range(substeps):
                seg[:, j * substeps + s] = x[:, :d]
                x = x @ Ad.T + u @ Bd.T
        seg[:, -1] = X[:, spr, :d]
        start = (k + 1) * timing.T
        t_rel = [start + i * sub for i in range(spr * substeps + 1)]
        flags = [((t - start) / timing.Tc).denominator == 1 for t in t_rel]
        # drop the segment end except in the last round; the next segment starts there
        keep = slice(None) if buf is history[-1] else slice(0, -1)
        times.extend(t_rel[keep])
        chunks.append(seg[:, keep])
        sample_flags.extend(flags[keep])
    return np.array([float(t) for t in times]), np.concatenate(chunks, axis=1), np.array(sample_flags)


def check_theorem2(
    history,
    model: LinearModel,
    geom: ScaledGeometry,
    tol: float = GEOMETRIC_TOL,
    substeps: int = 8,
) -> SeparationReport:
    """Continuous-time separation of the executed trajectories.

    Checks ``>= r_min`` on a grid ``substeps`` times finer than the base
    grid, and that dense minimum >= executed sample minimum - 2*delta_p_max.
    """
    timing = history[0].plans[0].timing
    dp = delta_p_max(model, geom, timing.Tc)
    report = SeparationReport(
        threshold=geom.r_min,
        delta_p_max=dp,
        certified_bound=is_certified(model),
        # the bound assumes box-feasible states at every collision sample
        guarantee_configured=(geom.r_hat_min - 2 * dp >= geom.r_min and timing.tc_steps % timing.tb_steps == 0),
    )
    times, pos, is_sample = executed_positions(history, model, substeps)
    mn, dist, pairs = _pairwise_min(pos, geom.theta_inv)
    if dist is None:
        report.proof_inequality_holds = True
        return report
    report.min_scaled_distance_dense = mn
    report.min_scaled_distance_executed_samples = float(dist[:, is_sample].min())
    bad = dist < geom.r_min - tol
    report.violations = int(bad.sum())
    if report.violations:
        p, s = map(int, np.argwhere(bad)[np.argmin(np.argwhere(bad)[:, 1])])
        rnd = int(math.floor(times[s] / float(timing.T))) - 1
        report.first_violation = Violation(rnd, (int(pairs[0][p]), int(pairs[1][p])), float(times[s]), float(dist[p, s]))
    report.proof_inequality_holds = bool(
        report.min_scaled_distance_dense >= report.min_scaled_distance_executed_samples - 2 * dp - tol
    )
    return report


@dataclass
class FeasibilityBreach:
    round: int
    uav: int
    reason: str
    violation: float = 0.0


@dataclass
class Theorem1Report:
    checked: int = 0
    max_violation: float = 0.0
    breaches: list[FeasibilityBreach] = field(default_factory=list)
    infeasible_events: int = 0
    unexplained_infeasible: int = 0
    numerical_failures: int = 0

    @property
    def ok(self) -> bool:
        return not self.breaches and self.unexplained_infeasible == 0

    def summary(self) -> dict:
        out = asdict(self)
        out["breaches"] = [asdict(b) for b in self.breaches[:20]]
        out["n_breaches"] = len(self.breaches)
        return out


def check_theorem1(history, tol: float = ALGEBRA_TOL, reassemble: bool = True) -> Theorem1Report:
    """Shifted previous plans must be feasible for every assembled QP.

    ``history`` is a run history (see :class:`etdmpc.sim.History`). With
    ``reassemble`` the QPs are rebuilt from the buffers; otherwise the
    violations logged during the run are used.
    """
    report = Theorem1Report()
    pred = Prediction(history.model, history.timing) if reassemble else None
    for rec in history.records:
        prev = history.buffers[rec.k]  # buffer of round k-1 (index 0 is round -1)
        for _, i in rec.assignment:
            if reassemble:
                prob = assemble_qp(i, prev, history.model, history.timing, history.geom,
                                   history.weights, history.scenario.targets[i], pred)
                shifted = shift_plan(prev.plans[i])
                viol = check_feasible(prob, shifted.inputs.reshape(-1), tol).max_violation
            else:
                viol = rec.shift_violation.get(i, math.nan)
            report.checked += 1
            report.max_violation = max(report.max_violation, viol)
            status = rec.status[i]
            if viol > tol:
                report.breaches.append(FeasibilityBreach(rec.k, i, "shifted plan infeasible", viol))
            if status == "infeasible":
                report.infeasible_events += 1
                if viol <= tol:
                    # a known feasible point exists, so the solver verdict is wrong
                    report.unexplained_infeasible += 1
                    report.breaches.append(FeasibilityBreach(rec.k, i, "solver reported infeasible", viol))
            elif status == "max_iterations":
                report.numerical_failures += 1
    return report
