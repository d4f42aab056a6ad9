"""Linear vehicle models, exact zero-order-hold discretization and plans.

Times are handled as :class:`fractions.Fraction` so that grid arithmetic
(round boundaries, sample points) is exact; matrices are plain float arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache, reduce

import numpy as np
import scipy.linalg

# Non-position components of a terminal state below this are snapped to 0.
TERMINAL_SNAP_TOL = 1e-9


def as_time(value) -> Fraction:
    """Convert seconds given as Fraction, int, float or ``"a/b"`` string."""
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise TypeError("time must be numeric")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise ValueError(f"time must be finite, got {value}")
        # repr gives the shortest decimal, so 0.1 -> 1/10 rather than the binary value
        return Fraction(repr(value))
    if isinstance(value, str):
        return Fraction(value.strip())
    raise TypeError(f"cannot interpret {value!r} as a time")


def _frozen(a, shape=None) -> np.ndarray:
    arr = np.array(a, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"expected shape {shape}, got {arr.shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class LinearModel:
    """Continuous-time model ``x' = A x + B u`` with state ``[p, v, y]``.

    The first ``pos_dim`` states are positions, the next ``pos_dim`` are
    velocities; anything after that is auxiliary state (acceleration, ...).
    """

    A: np.ndarray
    B: np.ndarray
    pos_dim: int
    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray

    def __post_init__(self):
        A = _frozen(self.A)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise ValueError("A must be square")
        n = A.shape[0]
        B = _frozen(self.B)
        if B.ndim != 2 or B.shape[0] != n:
            raise ValueError("B must have as many rows as A")
        m = B.shape[1]
        d = int(self.pos_dim)
        if d < 1 or 2 * d > n:
            raise ValueError("pos_dim must satisfy 1 <= 2*pos_dim <= n")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "pos_dim", d)
        for name, size in (("x_min", n), ("x_max", n), ("u_min", m), ("u_max", m)):
            object.__setattr__(self, name, _frozen(getattr(self, name), (size,)))

        block = np.zeros((d, n))
        block[:, d:2 * d] = np.eye(d)
        if not np.array_equal(A[:d], block):
            raise ValueError("position rows of A must be [0, I, 0]")
        if np.any(B[:d] != 0):
            raise ValueError("position rows of B must be zero")
        for lo, hi, what in ((self.x_min, self.x_max, "state"), (self.u_min, self.u_max, "input")):
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError(f"{what} box must be finite")
            if np.any(lo >= hi):
                raise ValueError(f"{what} box must satisfy min < max elementwise")

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def m(self) -> int:
        return self.B.shape[1]

    @property
    def d(self) -> int:
        return self.pos_dim

    @classmethod
    def triple_integrator(
        cls,
        v_max: float = 1.0,
        a_max: float = 2.0,
        u_max: float = 5.0,
        pos_lower=(-2.5, -2.5, 0.0),
        pos_upper=(2.5, 2.5, 5.0),
    ) -> "LinearModel":
        """Per-axis triple integrator: state ``[p, v, a]``, jerk input."""
        lo = np.asarray(pos_lower, dtype=float)
        hi = np.asarray(pos_upper, dtype=float)
        d = lo.size
        n, m = 3 * d, d
        A = np.zeros((n, n))
        A[:d, d:2 * d] = np.eye(d)
        A[d:2 * d, 2 * d:] = np.eye(d)
        B = np.zeros((n, m))
        B[2 * d:] = np.eye(d)
        ones = np.ones(d)
        x_min = np.concatenate([lo, -v_max * ones, -a_max * ones])
        x_max = np.concatenate([hi, v_max * ones, a_max * ones])
        return cls(A, B, d, x_min, x_max, -u_max * ones, u_max * ones)


def _gcd_fractions(values) -> Fraction:
    def g(a: Fraction, b: Fraction) -> Fraction:
        den = a.denominator * b.denominator // math.gcd(a.denominator, b.denominator)
        return Fraction(math.gcd(a.numerator * (den // a.denominator), b.numerator * (den // b.denominator)), den)

    return reduce(g, values)


def _ratio(num: Fraction, den: Fraction, what: str) -> int:
    q = num / den
    if q.denominator != 1 or q <= 0:
        raise ValueError(f"{what} must be a positive integer, got {q}")
    return int(q)


@dataclass(frozen=True)
class TimingConfig:
    """Round length ``T = T_calc + T_com`` and the four sample grids.

    ``Ts`` (inputs), ``To`` (objective), ``Tb`` (state box) and ``Tc``
    (collision) must each divide ``T``; every grid ends at ``H*T``.
    """

    T_calc: Fraction = Fraction(7, 30)
    T_com: Fraction = Fraction(1, 10)
    H: int = 15
    T: Fraction | None = None
    Ts: Fraction | None = None
    To: Fraction | None = None
    Tb: Fraction | None = None
    Tc: Fraction | None = None

    def __post_init__(self):
        T_calc = as_time(self.T_calc)
        T_com = as_time(self.T_com)
        if T_calc <= 0 or T_com <= 0:
            raise ValueError("T_calc and T_com must be positive")
        T = T_calc + T_com if self.T is None else as_time(self.T)
        if T != T_calc + T_com:
            raise ValueError(f"invariant T = T_calc + T_com violated: {T} != {T_calc} + {T_com}")
        if int(self.H) != self.H or self.H < 1:
            raise ValueError("H must be a positive integer")
        object.__setattr__(self, "H", int(self.H))
        for name, val in (("T_calc", T_calc), ("T_com", T_com), ("T", T)):
            object.__setattr__(self, name, val)
        for name in ("Ts", "To", "Tb", "Tc"):
            val = T if getattr(self, name) is None else as_time(getattr(self, name))
            if val <= 0:
                raise ValueError(f"{name} must be positive")
            # T/Ts = h_s/H in N
            _ratio(T, val, f"T/{name}")
            object.__setattr__(self, name, val)

    @property
    def h_s(self) -> int:
        return self.H * int(self.T / self.Ts)

    @property
    def h_o(self) -> int:
        return self.H * int(self.T / self.To)

    @property
    def h_b(self) -> int:
        return self.H * int(self.T / self.Tb)

    @property
    def h_c(self) -> int:
        return self.H * int(self.T / self.Tc)

    @property
    def base_step(self) -> Fraction:
        return _gcd_fractions([self.Ts, self.To, self.Tb, self.Tc])

    # integer step counts on the base grid
    @property
    def steps_per_round(self) -> int:
        return int(self.T / self.base_step)

    @property
    def ts_steps(self) -> int:
        return int(self.Ts / self.base_step)

    @property
    def to_steps(self) -> int:
        return int(self.To / self.base_step)

    @property
    def tb_steps(self) -> int:
        return int(self.Tb / self.base_step)

    @property
    def tc_steps(self) -> int:
        return int(self.Tc / self.base_step)

    @property
    def horizon_steps(self) -> int:
        """Base steps from plan start (``T``) to the horizon end (``H*T + T``)."""
        return self.H * self.steps_per_round

    def to_steps_exact(self, t) -> int:
        """Number of base steps in ``t``; rejects times off the base grid."""
        q = as_time(t) / self.base_step
        if q.denominator != 1:
            raise ValueError(f"time {t} is not a multiple of base_step {self.base_step}")
        return int(q)


def _nilpotent_expm(M: np.ndarray) -> np.ndarray | None:
    """Exact finite series for exp(M) if M is nilpotent, else None."""
    size = M.shape[0]
    out = np.eye(size)
    term = np.eye(size)
    for k in range(1, size + 1):
        term = term @ M / k
        if not np.any(term):
            return out
        out = out + term
    return None


def expm(M: np.ndarray) -> np.ndarray:
    E = _nilpotent_expm(M)
    if E is None:
        E = scipy.linalg.expm(M)
    return E


def discretize(model: LinearModel, step) -> tuple[np.ndarray, np.ndarray]:
    """Zero-order-hold maps ``(Ad, Bd)`` for a hold of length ``step``."""
    h = float(as_time(step)) if not isinstance(step, float) else step
    if not h > 0:
        raise ValueError("step must be positive")
    return _discretize_cached(model, h)


@lru_cache(maxsize=256)
def _discretize_cached(model: LinearModel, h: float) -> tuple[np.ndarray, np.ndarray]:
    n, m = model.n, model.m
    aug = np.zeros((n + m, n + m))
    aug[:n, :n] = model.A * h
    aug[:n, n:] = model.B * h
    E = expm(aug)
    Ad, Bd = E[:n, :n].copy(), E[:n, n:].copy()
    Ad.setflags(write=False)
    Bd.setflags(write=False)
    return Ad, Bd


def _step_inputs(inputs: np.ndarray, ts_steps: int, n_steps: int, m: int) -> np.ndarray:
    """Input applied on each base interval; zero past the end of ``inputs``."""
    out = np.zeros((n_steps, m))
    k = np.arange(n_steps) // ts_steps
    have = k < len(inputs)
    out[have] = inputs[k[have]]
    return out


def rollout(Ad: np.ndarray, Bd: np.ndarray, x0: np.ndarray, step_inputs: np.ndarray) -> np.ndarray:
    """States after 0..len(step_inputs) steps of ``x+ = Ad x + Bd u``."""
    xs = np.empty((len(step_inputs) + 1, Ad.shape[0]))
    x = np.asarray(x0, dtype=float)
    xs[0] = x
    for j, u in enumerate(step_inputs):
        x = Ad @ x + Bd @ u
        xs[j + 1] = x
    return xs


def propagate(model: LinearModel, timing: TimingConfig, x0, inputs, grid) -> np.ndarray:
    """Exact states at ``grid`` times (seconds after ``x0``).

    ``inputs`` are held for ``Ts`` each; missing intervals count as zero.
    Every grid time must lie on the base grid of ``timing``.
    """
    inputs = np.asarray(inputs, dtype=float).reshape(-1, model.m)
    idx = np.array([timing.to_steps_exact(t) for t in grid], dtype=int)
    if np.any(idx < 0):
        raise ValueError("grid times must be nonnegative")
    n_steps = int(idx.max()) if idx.size else 0
    Ad, Bd = discretize(model, timing.base_step)
    xs = rollout(Ad, Bd, np.asarray(x0, dtype=float), _step_inputs(inputs, timing.ts_steps, n_steps, model.m))
    return xs[idx]


@dataclass(frozen=True, eq=False)
class PlannedTrajectory:
    """A plan made in round ``planned_round`` (time origin ``k*T``).

    ``states[j]`` is the state at ``T + j*base_step`` relative to ``k*T``,
    for ``j = 0..horizon_steps``; beyond the last sample the vehicle holds.
    """

    planned_round: int
    inputs: np.ndarray
    states: np.ndarray
    timing: TimingConfig

    def __post_init__(self):
        inputs = _frozen(self.inputs)
        states = _frozen(self.states)
        if inputs.ndim != 2 or inputs.shape[0] != self.timing.h_s:
            raise ValueError(f"plan needs {self.timing.h_s} input vectors, got shape {inputs.shape}")
        if states.ndim != 2 or states.shape[0] != self.timing.horizon_steps + 1:
            raise ValueError(f"plan needs {self.timing.horizon_steps + 1} state samples, got {states.shape}")
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "states", states)

    @property
    def origin_state(self) -> np.ndarray:
        return self.states[0]

    @property
    def terminal_state(self) -> np.ndarray:
        return self.states[-1]

    def state_at_step(self, j: int) -> np.ndarray:
        """State ``j`` base steps after the plan start, with terminal hold."""
        if j < 0:
            raise ValueError("plans are undefined before their activation time")
        return self.states[min(j, len(self.states) - 1)]

    def states_at_steps(self, idx) -> np.ndarray:
        idx = np.asarray(idx)
        if np.any(idx < 0):
            raise ValueError("plans are undefined before their activation time")
        return self.states[np.minimum(idx, len(self.states) - 1)]


def evaluate_plan(plan: PlannedTrajectory, t) -> np.ndarray:
    """State of ``plan`` at time ``t`` relative to its round start."""
    timing = plan.timing
    t = as_time(t)
    if t < timing.T:
        raise ValueError(f"plan evaluated at {t} < T = {timing.T}")
    return plan.state_at_step(timing.to_steps_exact(t - timing.T))


def make_plan(model: LinearModel, timing: TimingConfig, planned_round: int, origin, inputs) -> PlannedTrajectory:
    """Roll ``inputs`` forward from ``origin`` over the whole horizon."""
    inputs = np.asarray(inputs, dtype=float).reshape(timing.h_s, model.m)
    Ad, Bd = discretize(model, timing.base_step)
    states = rollout(Ad, Bd, origin, _step_inputs(inputs, timing.ts_steps, timing.horizon_steps, model.m))
    tail = states[-1, model.d:]
    tail[np.abs(tail) <= TERMINAL_SNAP_TOL] = 0.0
    return PlannedTrajectory(planned_round, inputs, states, timing)


def hover_plan(model: LinearModel, timing: TimingConfig, planned_round: int, position) -> PlannedTrajectory:
    """Stationary plan at ``position`` with zero velocity and inputs."""
    x = np.zeros(model.n)
    x[:model.d] = position
    states = np.tile(x, (timing.horizon_steps + 1, 1))
    return PlannedTrajectory(planned_round, np.zeros((timing.h_s, model.m)), states, timing)
