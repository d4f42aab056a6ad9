"""Constraint rows of the per-vehicle planning QP.

Decision variables are the stacked piecewise-constant inputs of one plan;
states are eliminated through the exact affine map ``x = Phi x0 + Gamma U``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .dynamics import LinearModel, PlannedTrajectory, TimingConfig, discretize
from .qp import QpProblem

# Scaled-distance slack tolerated on the separation precondition (meters).
GEOMETRIC_TOL = 1e-6


class SeparationViolation(RuntimeError):
    """The previous plans of two vehicles were closer than ``r_hat_min``."""

    def __init__(self, i: int, j: int, h: int, distance: float, r_hat_min: float):
        self.i, self.j, self.h, self.distance = i, j, h, distance
        super().__init__(
            f"vehicles {i} and {j}: scaled distance {distance:.9f} < r_hat_min {r_hat_min} at sample {h}"
        )


@dataclass(frozen=True, eq=False)
class ScaledGeometry:
    theta: np.ndarray
    r_min: float
    r_hat_min: float

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        if theta.ndim == 1:
            theta = np.diag(theta)
        if theta.ndim != 2 or theta.shape[0] != theta.shape[1]:
            raise ValueError("theta must be a square matrix or a diagonal vector")
        if not np.allclose(theta, theta.T, atol=1e-12):
            raise ValueError("theta must be symmetric")
        if np.min(np.linalg.eigvalsh(theta)) <= 0:
            raise ValueError("theta must be positive definite")
        if not self.r_min > 0:
            raise ValueError("r_min must be positive")
        if self.r_hat_min < self.r_min:
            raise ValueError(f"r_hat_min ({self.r_hat_min}) must be >= r_min ({self.r_min})")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "r_min", float(self.r_min))
        object.__setattr__(self, "r_hat_min", float(self.r_hat_min))

    @cached_property
    def theta_inv(self) -> np.ndarray:
        inv = np.linalg.inv(self.theta)
        inv = 0.5 * (inv + inv.T)
        inv.setflags(write=False)
        return inv

    def scaled_distance(self, p, q) -> np.ndarray:
        diff = np.asarray(q, dtype=float) - np.asarray(p, dtype=float)
        return np.linalg.norm(diff @ self.theta_inv, axis=-1)

    @classmethod
    def default(cls, r_min: float = 0.2) -> "ScaledGeometry":
        return cls(np.diag([1.0, 1.0, 2.0]), r_min=r_min, r_hat_min=0.7)


@dataclass(frozen=True, eq=False)
class Weights:
    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        for name in ("Q", "R"):
            M = np.array(getattr(self, name), dtype=float)
            if M.ndim == 1:
                M = np.diag(M)
            if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
                raise ValueError(f"{name} must be a symmetric matrix")
            if np.min(np.linalg.eigvalsh(M)) <= 0:
                raise ValueError(f"{name} must be positive definite")
            M.setflags(write=False)
            object.__setattr__(self, name, M)

    @classmethod
    def default(cls, model: LinearModel, q_pos=1.0, q_vel=0.05, q_aux=0.01, r=0.01) -> "Weights":
        d, n = model.d, model.n
        q = np.full(n, q_aux)
        q[:d] = q_pos
        q[d:2 * d] = q_vel
        return cls(np.diag(q), np.diag(np.full(model.m, r)))


@dataclass(frozen=True, eq=False)
class HalfPlaneConstraintSet:
    """Rows ``(Theta^-1 n0)' p_i(h*Tc + T) <= offset`` for one vehicle.

    ``normals`` are the unit vectors ``n0`` in scaled coordinates and
    ``distance`` the scaled distance ``||n_ij||`` they were built from.
    """

    normals: np.ndarray
    offsets: np.ndarray
    distance: np.ndarray
    neighbor_ids: np.ndarray
    sample_index: np.ndarray
    theta_inv: np.ndarray
    h_c: int

    def __len__(self) -> int:
        return len(self.offsets)

    @property
    def position_coeffs(self) -> np.ndarray:
        """Coefficient of ``p_i`` in each row (``Theta^-1 n0``)."""
        return self.normals @ self.theta_inv

    def matrices(self) -> tuple[np.ndarray, np.ndarray]:
        """``(A_c, b_c)`` acting on stacked positions ``p(T), p(T+Tc), ...``."""
        d = self.normals.shape[1]
        A = np.zeros((len(self), d * (self.h_c + 1)))
        coeff = self.position_coeffs
        for r, h in enumerate(self.sample_index):
            A[r, d * h:d * (h + 1)] = coeff[r]
        return A, self.offsets.copy()

    def margins(self, positions: np.ndarray) -> np.ndarray:
        """``offset - lhs`` per row for candidate positions of shape (h_c+1, d)."""
        lhs = np.einsum("rd,rd->r", self.position_coeffs, positions[self.sample_index])
        return self.offsets - lhs


def _neighbor_sample_steps(timing: TimingConfig) -> np.ndarray:
    # h*Tc + 2T relative to the previous round = h*Tc + T after the plan start
    return np.arange(timing.h_c + 1) * timing.tc_steps + timing.steps_per_round


def difference_vectors(plan_i: PlannedTrajectory, plan_j: PlannedTrajectory, geom: ScaledGeometry) -> np.ndarray:
    """Scaled differences ``Theta^-1 (p_j - p_i)`` at ``h*Tc + 2T``, h = 0..h_c."""
    if plan_i is plan_j:
        raise ValueError("difference vectors need two distinct vehicles")
    timing = plan_i.timing
    d = geom.theta.shape[0]
    steps = _neighbor_sample_steps(timing)
    pi = plan_i.states_at_steps(steps)[:, :d]
    pj = plan_j.states_at_steps(steps)[:, :d]
    return (pj - pi) @ geom.theta_inv


def _half_planes(pi: np.ndarray, pj: np.ndarray, geom: ScaledGeometry, i: int, neighbor_ids: np.ndarray, h_c: int):
    """Rows for positions ``pi`` (S, d) against neighbors ``pj`` (K, S, d)."""
    n_vec = (pj - pi[None]) @ geom.theta_inv
    dist = np.linalg.norm(n_vec, axis=-1)
    bad = dist < geom.r_hat_min - GEOMETRIC_TOL
    if np.any(bad):
        k, h = map(int, np.argwhere(bad)[0])
        raise SeparationViolation(i, int(neighbor_ids[k]), h, float(dist[k, h]), geom.r_hat_min)
    n0 = n_vec / dist[..., None]
    # n0' Theta^-1 (p_j - p_i_new) >= (r_hat + |n|)/2
    rhs = np.einsum("ksd,ksd->ks", n0 @ geom.theta_inv, pj) - 0.5 * (geom.r_hat_min + dist)
    K, S = dist.shape
    return HalfPlaneConstraintSet(
        normals=n0.reshape(K * S, pi.shape[1]),
        offsets=rhs.reshape(-1),
        distance=dist.reshape(-1),
        neighbor_ids=np.repeat(neighbor_ids, S),
        sample_index=np.tile(np.arange(S), K),
        theta_inv=geom.theta_inv,
        h_c=h_c,
    )


def tvbvc_rows(plan_i: PlannedTrajectory, plan_j: PlannedTrajectory, geom: ScaledGeometry, i: int = 0, j: int = 1) -> HalfPlaneConstraintSet:
    """Separating half-planes of vehicle ``i`` against neighbor ``j``.

    Raises :class:`SeparationViolation` if the previous plans are closer than
    ``r_hat_min`` at any collision sample.
    """
    if i == j or plan_i is plan_j:
        raise ValueError("a vehicle has no half-plane against itself")
    timing = plan_i.timing
    d = geom.theta.shape[0]
    steps = _neighbor_sample_steps(timing)
    pi = plan_i.states_at_steps(steps)[:, :d]
    pj = plan_j.states_at_steps(steps)[:, :d]
    return _half_planes(pi, pj[None], geom, i, np.array([j]), timing.h_c)


def collision_constraints(uav_id: int, buffer, geom: ScaledGeometry) -> HalfPlaneConstraintSet:
    """Half-planes of ``uav_id`` against every other vehicle, ascending ids."""
    plans = buffer.plans
    timing = plans[uav_id].timing
    d = geom.theta.shape[0]
    steps = _neighbor_sample_steps(timing)
    others = np.array([j for j in range(len(plans)) if j != uav_id], dtype=int)
    pi = plans[uav_id].states_at_steps(steps)[:, :d]
    if others.size == 0:
        pj = np.zeros((0, len(steps), d))
    else:
        pj = np.stack([plans[j].states_at_steps(steps)[:, :d] for j in others])
    return _half_planes(pi, pj, geom, uav_id, others, timing.h_c)


class Prediction:
    """Condensed maps ``x(T + j*base) = Phi[j] x0 + Gamma[j] U`` on the base grid."""

    def __init__(self, model: LinearModel, timing: TimingConfig):
        self.model, self.timing = model, timing
        n, m, hs = model.n, model.m, timing.h_s
        J = timing.horizon_steps
        Ad, Bd = discretize(model, timing.base_step)
        Phi = np.empty((J + 1, n, n))
        Gamma = np.zeros((J + 1, n, m * hs))
        Phi[0] = np.eye(n)
        for j in range(J):
            k = j // timing.ts_steps
            Phi[j + 1] = Ad @ Phi[j]
            Gamma[j + 1] = Ad @ Gamma[j]
            Gamma[j + 1][:, m * k:m * (k + 1)] += Bd
        self.Phi, self.Gamma = Phi, Gamma
        d = model.d
        self.obj_steps = np.arange(timing.h_o + 1) * timing.to_steps
        self.box_steps = np.arange(timing.h_b + 1) * timing.tb_steps
        self.col_steps = np.arange(timing.h_c + 1) * timing.tc_steps
        # input held at each objective sample (zero at and past the horizon end)
        sel = np.zeros((timing.h_o + 1, m, m * hs))
        for kappa, step in enumerate(self.obj_steps):
            k = step // timing.ts_steps
            if k < hs:
                sel[kappa][:, m * k:m * (k + 1)] = np.eye(m)
        self.obj_input_sel = sel
        self.col_pos_gamma = Gamma[self.col_steps][:, :d, :]
        self.col_pos_phi = Phi[self.col_steps][:, :d, :]
        self.box_gamma = Gamma[self.box_steps].reshape(-1, m * hs)
        self.box_phi = Phi[self.box_steps].reshape(-1, n)
        self.term_gamma = Gamma[J][d:, :]
        self.term_phi = Phi[J][d:, :]
        self._hessians: dict[int, tuple[Weights, np.ndarray, np.ndarray]] = {}

    @property
    def n_vars(self) -> int:
        return self.model.m * self.timing.h_s

    def objective_terms(self, weights: Weights) -> tuple[np.ndarray, np.ndarray]:
        """Hessian ``P`` and the matrix ``W`` with ``q = W (Phi_o x0 - x_target)`` stacked."""
        hit = self._hessians.get(id(weights))
        if hit is not None and hit[0] is weights:
            return hit[1], hit[2]
        Go = self.Gamma[self.obj_steps]  # (K, n, v)
        P = 2.0 * (np.einsum("kav,ab,kbw->vw", Go, weights.Q, Go)
                   + np.einsum("kav,ab,kbw->vw", self.obj_input_sel, weights.R, self.obj_input_sel))
        P = 0.5 * (P + P.T)
        W = 2.0 * np.einsum("kav,ab->vkb", Go, weights.Q).reshape(self.n_vars, -1)
        self._hessians[id(weights)] = (weights, P, W)
        return P, W


def assemble_qp(
    uav_id: int,
    buffer,
    model: LinearModel,
    timing: TimingConfig,
    geom: ScaledGeometry,
    weights: Weights,
    target,
    prediction: Prediction | None = None,
) -> QpProblem:
    """Planning QP for ``uav_id`` in round ``buffer.current_round + 1``."""
    if weights.Q.shape != (model.n, model.n) or weights.R.shape != (model.m, model.m):
        raise ValueError("weight dimensions do not match the model")
    if prediction is None:
        prediction = Prediction(model, timing)
    elif prediction.model is not model or prediction.timing != timing:
        raise ValueError("prediction was built for a different model or timing")
    target = np.asarray(target, dtype=float)
    x_target = np.zeros(model.n)
    if target.size == model.d:
        x_target[:model.d] = target
    elif target.size == model.n:
        x_target[:] = target
    else:
        raise ValueError("target must be a position or a full state")

    prev = buffer.plans[uav_id]
    x0 = prev.state_at_step(timing.steps_per_round)

    P, W = prediction.objective_terms(weights)
    free_obj = prediction.Phi[prediction.obj_steps] @ x0 - x_target
    q = W @ free_obj.reshape(-1)
    const = float(np.einsum("ka,ab,kb->", free_obj, weights.Q, free_obj))

    hb1 = timing.h_b + 1
    free_box = prediction.box_phi @ x0
    box_hi = np.tile(model.x_max, hb1) - free_box
    box_lo = free_box - np.tile(model.x_min, hb1)

    halfplanes = collision_constraints(uav_id, buffer, geom)
    if len(halfplanes):
        coeff = halfplanes.position_coeffs  # (r, d)
        h = halfplanes.sample_index
        A_col = np.einsum("rd,rdv->rv", coeff, prediction.col_pos_gamma[h])
        free_pos = np.einsum("hdn,n->hd", prediction.col_pos_phi, x0)
        b_col = halfplanes.offsets - np.einsum("rd,rd->r", coeff, free_pos[h])
    else:
        A_col = np.zeros((0, prediction.n_vars))
        b_col = np.zeros(0)

    G = np.vstack([prediction.box_gamma, -prediction.box_gamma, A_col])
    hvec = np.concatenate([box_hi, box_lo, b_col])
    nb = prediction.box_gamma.shape[0]
    ineq_groups = {"state_box": slice(0, 2 * nb), "tvbvc": slice(2 * nb, 2 * nb + len(b_col))}

    return QpProblem(
        hessian=P,
        linear=q,
        ineq_matrix=G,
        ineq_upper=hvec,
        eq_matrix=prediction.term_gamma,
        eq_rhs=-prediction.term_phi @ x0,
        var_lower=np.tile(model.u_min, timing.h_s),
        var_upper=np.tile(model.u_max, timing.h_s),
        constant=const,
        ineq_groups=ineq_groups,
        eq_groups={"terminal": slice(0, model.n - model.d)},
    )
