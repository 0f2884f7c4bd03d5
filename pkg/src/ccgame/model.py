"""Problem-instance data model: dynamics, costs, constraints, risk budget.

Time indexing used throughout the package:

* stage matrices ``A[t], B[t][i], W[t]`` map time ``t`` to ``t+1`` and are
  indexed ``t = 0..T-1``;
* state costs and references apply to ``x_t`` for ``t = 1..T`` (the initial
  state is known and never penalized or constrained);
* input costs apply for ``t = 0..T-1``.

A scenario declares its dynamics either directly (``LtvGameDynamics``) or as
a unicycle model plus nominal trajectory, which :mod:`ccgame.linearize` turns
into a linear time-varying game in deviation coordinates.  In the latter case
``GameProblem.nominal_states`` carries the absolute-coordinate offset that
cost references and constraint offsets are folded against.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass

import numpy as np

from .errors import (
    BadProbability,
    DimensionMismatch,
    NotPositiveDefinite,
    ScenarioValidationError,
    SchemaError,
)

TOL_PSD = 1e-9
TOL_PD = 1e-12

SCENARIO_KEYS = {
    "agents", "horizon", "dt", "dynamics", "costs", "constraints",
    "risk_epsilon", "seed",
}


def _freeze(a):
    a = np.ascontiguousarray(np.asarray(a, dtype=float))
    a.setflags(write=False)
    return a


def coerce_matrix(spec, dim, name):
    """Accept scalar (-> scalar*I), flat list (-> diag) or nested list."""
    if np.isscalar(spec):
        return float(spec) * np.eye(dim)
    arr = np.asarray(spec, dtype=float)
    if arr.ndim == 1:
        if arr.shape[0] != dim:
            raise SchemaError(f"{name}: diagonal of length {arr.shape[0]}, expected {dim}")
        return np.diag(arr)
    if arr.shape != (dim, dim):
        raise SchemaError(f"{name}: shape {arr.shape}, expected ({dim}, {dim})")
    return arr


def min_symmetric_eig(mat):
    sym = (mat + mat.T) / 2.0
    return float(np.linalg.eigvalsh(sym)[0])


@dataclass(frozen=True)
class LtvGameDynamics:
    """Stacked linear time-varying game dynamics with Gaussian noise.

    A: (T, n_x, n_x); B: (T, N, n_x, n_u); W: (T, n_x, n_x); x0: (n_x,).
    """

    A: np.ndarray
    B: np.ndarray
    W: np.ndarray
    x0: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "A", _freeze(self.A))
        object.__setattr__(self, "B", _freeze(self.B))
        object.__setattr__(self, "W", _freeze(self.W))
        object.__setattr__(self, "x0", _freeze(self.x0))

    @property
    def T(self):
        return self.A.shape[0]

    @property
    def N(self):
        return self.B.shape[1]

    @property
    def n_x(self):
        return self.A.shape[1]

    @property
    def n_u(self):
        return self.B.shape[3]


@dataclass(frozen=True)
class CostSpec:
    """Per-agent quadratic tracking cost.

    Q: (T, n_x, n_x) weighting x_t for t = 1..T; R: (T, n_u, n_u) weighting
    u_t for t = 0..T-1; ref: (T, n_x) goal references for t = 1..T, entering
    the cost as ||x_t - ref_t||^2_Q.
    """

    Q: np.ndarray
    R: np.ndarray
    ref: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "Q", _freeze(self.Q))
        object.__setattr__(self, "R", _freeze(self.R))
        object.__setattr__(self, "ref", _freeze(self.ref))


@dataclass(frozen=True)
class BoxSpec:
    """Per-coordinate bounds on the full state; NaN marks an unconstrained side."""

    x_min: np.ndarray
    x_max: np.ndarray
    active_times: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "x_min", _freeze(self.x_min))
        object.__setattr__(self, "x_max", _freeze(self.x_max))
        if self.active_times is not None:
            object.__setattr__(self, "active_times", tuple(sorted(set(self.active_times))))

    kind = "box"

    def rows(self):
        """Atomic one-sided rows as (coord, side, bound)."""
        out = []
        for q in range(self.x_min.shape[0]):
            if not math.isnan(self.x_min[q]):
                out.append((q, "lower", float(self.x_min[q])))
            if not math.isnan(self.x_max[q]):
                out.append((q, "upper", float(self.x_max[q])))
        return out


@dataclass(frozen=True)
class CollisionSpec:
    """Pairwise keep-out: ||x^i_t - x^j_t||^2_C >= radius^2."""

    pair: tuple
    radius: float
    C: np.ndarray
    active_times: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "pair", (int(self.pair[0]), int(self.pair[1])))
        object.__setattr__(self, "C", _freeze(self.C))
        if self.active_times is not None:
            object.__setattr__(self, "active_times", tuple(sorted(set(self.active_times))))

    kind = "collision"


@dataclass(frozen=True)
class UnicycleDynamicsSpec:
    """Scenario-level unicycle declaration (before nominal defaulting).

    initial_states: (N, 4) rows [p_x, p_y, theta, v]; nominal_inputs either
    None (defaulted toward each agent's goal) or (N, T, 2) rows [a, omega];
    W: (n_x, n_x) discrete-time noise covariance of the stacked state.
    """

    initial_states: np.ndarray
    nominal_inputs: np.ndarray | None
    W: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "initial_states", _freeze(self.initial_states))
        if self.nominal_inputs is not None:
            object.__setattr__(self, "nominal_inputs", _freeze(self.nominal_inputs))
        object.__setattr__(self, "W", _freeze(self.W))


@dataclass(frozen=True)
class Scenario:
    num_agents: int
    horizon: int
    dt: float
    dynamics: object            # LtvGameDynamics | UnicycleDynamicsSpec
    costs: tuple                # per-agent CostSpec
    constraints: tuple          # BoxSpec | CollisionSpec
    risk_epsilon: float
    rng_seed: int
    state_dims: tuple           # per-agent substate dimension

    @property
    def n_x(self):
        return int(sum(self.state_dims))

    @property
    def agent_slices(self):
        out, o = [], 0
        for d in self.state_dims:
            out.append(slice(o, o + d))
            o += d
        return out


@dataclass(frozen=True)
class ValidatedScenario:
    """Marker wrapper returned by :func:`validate_scenario`."""

    scenario: Scenario

    def __getattr__(self, name):
        return getattr(self.scenario, name)


def _check_dims(v, s: Scenario):
    T, N, n_x = s.horizon, s.num_agents, s.n_x
    if N <= 0 or int(N) != N:
        v.append(DimensionMismatch("agents", "positive integer", N))
    if T <= 0 or int(T) != T:
        v.append(DimensionMismatch("horizon", "positive integer", T))
    if not (s.dt > 0):
        v.append(DimensionMismatch("dt", "> 0", s.dt))
    if not (0.0 < s.risk_epsilon < 1.0):
        v.append(BadProbability("risk_epsilon", s.risk_epsilon))
    if len(s.state_dims) != N:
        v.append(DimensionMismatch("state_dims", f"length {N}", len(s.state_dims)))


def _check_ltv(v, dyn: LtvGameDynamics, s: Scenario):
    T, N, n_x = s.horizon, s.num_agents, s.n_x
    if dyn.A.shape != (T, n_x, n_x):
        v.append(DimensionMismatch("A", (T, n_x, n_x), dyn.A.shape))
        return
    n_u = dyn.B.shape[3] if dyn.B.ndim == 4 else -1
    if dyn.B.shape != (T, N, n_x, n_u):
        v.append(DimensionMismatch("B", (T, N, n_x, "n_u"), dyn.B.shape))
    if dyn.W.shape != (T, n_x, n_x):
        v.append(DimensionMismatch("W", (T, n_x, n_x), dyn.W.shape))
    else:
        for t in range(T):
            lam = min_symmetric_eig(dyn.W[t])
            if lam < TOL_PD:
                v.append(NotPositiveDefinite(f"W[{t}]", lam))
                break
    if dyn.x0.shape != (n_x,):
        v.append(DimensionMismatch("x0", (n_x,), dyn.x0.shape))


def _check_unicycle(v, dyn: UnicycleDynamicsSpec, s: Scenario):
    T, N, n_x = s.horizon, s.num_agents, s.n_x
    if any(d != 4 for d in s.state_dims):
        v.append(DimensionMismatch("state_dims", "4 per unicycle agent", s.state_dims))
    if dyn.initial_states.shape != (N, 4):
        v.append(DimensionMismatch("initial_states", (N, 4), dyn.initial_states.shape))
    if dyn.nominal_inputs is not None and dyn.nominal_inputs.shape != (N, T, 2):
        v.append(DimensionMismatch("nominal_inputs", (N, T, 2), dyn.nominal_inputs.shape))
    if dyn.W.shape != (n_x, n_x):
        v.append(DimensionMismatch("noise", (n_x, n_x), dyn.W.shape))
    else:
        lam = min_symmetric_eig(dyn.W)
        if lam < TOL_PD:
            v.append(NotPositiveDefinite("W", lam))


def _check_costs(v, s: Scenario):
    T, n_x = s.horizon, s.n_x
    if len(s.costs) != s.num_agents:
        v.append(DimensionMismatch("costs", f"{s.num_agents} entries", len(s.costs)))
        return
    n_u = _scenario_n_u(s)
    for i, c in enumerate(s.costs):
        if c.Q.shape != (T, n_x, n_x):
            v.append(DimensionMismatch(f"costs[{i}].Q", (T, n_x, n_x), c.Q.shape))
            continue
        if c.R.shape != (T, n_u, n_u):
            v.append(DimensionMismatch(f"costs[{i}].R", (T, n_u, n_u), c.R.shape))
            continue
        if c.ref.shape != (T, n_x):
            v.append(DimensionMismatch(f"costs[{i}].ref", (T, n_x), c.ref.shape))
        for t in range(T):
            lam = min_symmetric_eig(c.Q[t])
            if lam < -TOL_PSD:
                v.append(NotPositiveDefinite(f"costs[{i}].Q[{t + 1}]", lam))
                break
        for t in range(T):
            lam = min_symmetric_eig(c.R[t])
            if lam < TOL_PD:
                v.append(NotPositiveDefinite(f"costs[{i}].R[{t}]", lam))
                break


def _check_constraints(v, s: Scenario):
    T, n_x = s.horizon, s.n_x
    for k, con in enumerate(s.constraints):
        if con.active_times is not None:
            bad = [t for t in con.active_times if not (1 <= t <= T)]
            if bad:
                v.append(DimensionMismatch(f"constraints[{k}].active_times",
                                           f"subset of 1..{T}", bad))
        if con.kind == "box":
            if con.x_min.shape != (n_x,) or con.x_max.shape != (n_x,):
                v.append(DimensionMismatch(f"constraints[{k}] bounds", (n_x,),
                                           (con.x_min.shape, con.x_max.shape)))
                continue
            both = ~np.isnan(con.x_min) & ~np.isnan(con.x_max)
            if np.any(con.x_min[both] >= con.x_max[both]):
                q = int(np.where(both & (con.x_min >= con.x_max))[0][0])
                v.append(DimensionMismatch(f"constraints[{k}].x_min[{q}]",
                                           f"< x_max[{q}]={con.x_max[q]}", con.x_min[q]))
        elif con.kind == "collision":
            i, j = con.pair
            if not (0 <= i < s.num_agents and 0 <= j < s.num_agents and i != j):
                v.append(DimensionMismatch(f"constraints[{k}].pair",
                                           "distinct agents", con.pair))
                continue
            if s.state_dims[i] != s.state_dims[j]:
                v.append(DimensionMismatch(f"constraints[{k}].pair",
                                           "equal substate dims",
                                           (s.state_dims[i], s.state_dims[j])))
                continue
            d = s.state_dims[i]
            if con.C.shape != (d, d):
                v.append(DimensionMismatch(f"constraints[{k}].C", (d, d), con.C.shape))
                continue
            lam = min_symmetric_eig(con.C)
            if lam < -TOL_PSD:
                v.append(NotPositiveDefinite(f"constraints[{k}].C", lam))
            if not (con.radius > 0):
                v.append(DimensionMismatch(f"constraints[{k}].radius", "> 0", con.radius))


def _scenario_n_u(s: Scenario):
    if isinstance(s.dynamics, LtvGameDynamics):
        B = s.dynamics.B
        return B.shape[3] if B.ndim == 4 else -1
    return 2


def validate_scenario(s) -> ValidatedScenario:
    """Dimension- and definiteness-check a scenario.

    Returns a ``ValidatedScenario`` or raises ``ScenarioValidationError``
    carrying the full list of violations.  Idempotent: an already validated
    scenario is returned unchanged.
    """
    if isinstance(s, ValidatedScenario):
        return s
    v = []
    _check_dims(v, s)
    if not v:
        if isinstance(s.dynamics, LtvGameDynamics):
            _check_ltv(v, s.dynamics, s)
        elif isinstance(s.dynamics, UnicycleDynamicsSpec):
            _check_unicycle(v, s.dynamics, s)
        else:
            v.append(DimensionMismatch("dynamics", "LtvGameDynamics or UnicycleDynamicsSpec",
                                       type(s.dynamics).__name__))
        _check_costs(v, s)
        _check_constraints(v, s)
    if v:
        raise ScenarioValidationError(v)
    return ValidatedScenario(s)


# ---------------------------------------------------------------------------
# Assembly into a solver-ready problem


@dataclass(frozen=True)
class GameProblem:
    """Solver-ready instance in solver coordinates.

    For unicycle scenarios the solver operates on deviations from the nominal
    trajectory; ``nominal_states`` (T+1, n_x) holds the absolute offset and is
    zero for direct LTV scenarios.  Cost arrays are indexed by absolute time:
    Q, ref have length T+1 with index 0 zeroed; R has length T.
    """

    dyn: LtvGameDynamics
    Q: np.ndarray               # (N, T+1, n_x, n_x)
    R: np.ndarray               # (N, T, n_u, n_u)
    ref: np.ndarray             # (N, T+1, n_x)
    constraints: tuple
    nominal_states: np.ndarray  # (T+1, n_x) absolute offset
    nominal_inputs: np.ndarray  # (T, N, n_u) absolute offset
    state_dims: tuple
    dt: float
    risk_epsilon: float
    rng_seed: int
    fingerprint: str = ""

    def __post_init__(self):
        for name in ("Q", "R", "ref", "nominal_states", "nominal_inputs"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    @property
    def T(self):
        return self.dyn.T

    @property
    def N(self):
        return self.dyn.N

    @property
    def n_x(self):
        return self.dyn.n_x

    @property
    def n_u(self):
        return self.dyn.n_u

    @property
    def agent_slices(self):
        out, o = [], 0
        for d in self.state_dims:
            out.append(slice(o, o + d))
            o += d
        return out

    def position_indices(self, i):
        """Indices of agent i's planar position within the full state."""
        sl = self.agent_slices[i]
        take = min(2, self.state_dims[i])
        return list(range(sl.start, sl.start + take))

    def to_absolute(self, states):
        """Map solver-coordinate state trajectories (.., T+1, n_x) to absolute."""
        return np.asarray(states) + self.nominal_states


def assemble_dynamics(vs) -> LtvGameDynamics:
    """Concrete LTV dynamics for a validated scenario (linearizing if needed)."""
    vs = validate_scenario(vs)
    s = vs.scenario
    if isinstance(s.dynamics, LtvGameDynamics):
        return s.dynamics
    return assemble_problem(vs).dyn


def default_nominal_inputs(s: Scenario) -> np.ndarray:
    """Deterministic nominal: turn-then-cruise straight line toward each goal.

    The first input aligns heading/speed with a constant-speed line that
    reaches the goal position at the final step; all later inputs are zero.
    """
    T, dt = s.horizon, s.dt
    out = np.zeros((s.num_agents, T, 2))
    for i in range(s.num_agents):
        px, py, th, vel = s.dynamics.initial_states[i]
        goal = s.costs[i].ref[-1][s.agent_slices[i]]
        gx, gy = goal[0], goal[1]
        dist = math.hypot(gx - px, gy - py)
        if dist < 1e-12:
            out[i, 0] = [-vel / dt, 0.0]
            continue
        psi = math.atan2(gy - py, gx - px)
        v_star = dist / (T * dt)
        dth = (psi - th + math.pi) % (2 * math.pi) - math.pi
        out[i, 0] = [(v_star - vel) / dt, dth / dt]
    return out


def assemble_problem(vs, nominal_inputs=None) -> GameProblem:
    """Build the solver-ready problem, linearizing unicycle dynamics if needed.

    ``nominal_inputs`` (N, T, 2) overrides the scenario/default nominal and is
    used by the outer relinearization loop.
    """
    from . import linearize  # local import; linearize depends on this module

    vs = validate_scenario(vs)
    s = vs.scenario
    T, N, n_x = s.horizon, s.num_agents, s.n_x
    n_u = _scenario_n_u(s)

    Q = np.zeros((N, T + 1, n_x, n_x))
    R = np.zeros((N, T, n_u, n_u))
    ref = np.zeros((N, T + 1, n_x))
    for i, c in enumerate(s.costs):
        Q[i, 1:] = c.Q
        R[i] = c.R
        ref[i, 1:] = c.ref

    if isinstance(s.dynamics, LtvGameDynamics):
        dyn = s.dynamics
        nominal_states = np.zeros((T + 1, n_x))
        nominal_inputs_abs = np.zeros((T, N, n_u))
    else:
        if nominal_inputs is None:
            nominal_inputs = s.dynamics.nominal_inputs
        if nominal_inputs is None:
            nominal_inputs = default_nominal_inputs(s)
        spec = linearize.UnicycleSpec(
            initial_states=s.dynamics.initial_states,
            nominal_inputs=np.asarray(nominal_inputs, dtype=float),
            dt=s.dt,
        )
        nominal = linearize.nominal_rollout(spec)
        dyn = linearize.linearize_unicycle(spec, nominal, W=s.dynamics.W)
        nominal_states = nominal.stacked_states()
        nominal_inputs_abs = np.transpose(spec.nominal_inputs, (1, 0, 2))
        # deviation coordinates: references shift by the nominal trajectory
        ref = ref - nominal_states[None, :, :]
        ref[:, 0, :] = 0.0

    return GameProblem(
        dyn=dyn, Q=Q, R=R, ref=ref,
        constraints=tuple(s.constraints),
        nominal_states=nominal_states,
        nominal_inputs=nominal_inputs_abs,
        state_dims=tuple(s.state_dims),
        dt=s.dt, risk_epsilon=s.risk_epsilon, rng_seed=s.rng_seed,
        fingerprint=scenario_fingerprint(s),
    )


# ---------------------------------------------------------------------------
# Scenario file schema (UTF-8 JSON)


def _matrix_seq(spec, T, dim, name):
    """Matrix or list of T matrices -> (T, dim, dim)."""
    arr = np.asarray(spec, dtype=float) if not np.isscalar(spec) else None
    if arr is not None and arr.ndim == 3:
        if arr.shape != (T, dim, dim):
            raise SchemaError(f"{name}: shape {arr.shape}, expected ({T}, {dim}, {dim})")
        return arr
    single = coerce_matrix(spec, dim, name)
    return np.repeat(single[None, :, :], T, axis=0)


def _reject_unknown(d, allowed, where):
    unknown = set(d) - set(allowed)
    if unknown:
        raise SchemaError(f"{where}: unknown key(s) {sorted(unknown)}")


def _embed_agent_matrix(spec, s_dims, agent, name):
    n_x = sum(s_dims)
    if not np.isscalar(spec):
        arr = np.asarray(spec, dtype=float)
        dim = arr.shape[0] if arr.ndim >= 1 else None
        if arr.ndim == 2 and arr.shape == (n_x, n_x):
            return arr
        if arr.ndim == 1 and arr.shape[0] == n_x:
            return np.diag(arr)
    d = s_dims[agent]
    block = coerce_matrix(spec, d, name)
    out = np.zeros((n_x, n_x))
    o = int(sum(s_dims[:agent]))
    out[o:o + d, o:o + d] = block
    return out


def _embed_agent_vector(vec, s_dims, agent, name):
    n_x = sum(s_dims)
    arr = np.asarray(vec, dtype=float)
    if arr.shape == (n_x,):
        return arr
    d = s_dims[agent]
    if arr.shape != (d,):
        raise SchemaError(f"{name}: length {arr.shape}, expected {d} or {n_x}")
    out = np.zeros(n_x)
    o = int(sum(s_dims[:agent]))
    out[o:o + d] = arr
    return out


def _parse_dynamics(d, N, T, state_dims):
    _reject_unknown(d, {"type", "A", "B", "W", "x0", "initial_states",
                        "nominal_inputs", "noise"}, "dynamics")
    kind = d.get("type")
    n_x = sum(state_dims)
    if kind == "ltv":
        A = _matrix_seq(d["A"], T, n_x, "dynamics.A")
        Braw = d["B"]
        first = np.asarray(Braw[0], dtype=float)
        if first.ndim == 3:        # list over time of per-player matrices
            B = np.asarray(Braw, dtype=float)
        else:                      # per-player, constant over time
            B = np.repeat(np.asarray(Braw, dtype=float)[None, :, :, :], T, axis=0)
        W = _matrix_seq(d["W"], T, n_x, "dynamics.W")
        x0 = np.asarray(d["x0"], dtype=float)
        return LtvGameDynamics(A=A, B=B, W=W, x0=x0)
    if kind == "unicycle":
        init = np.asarray(d["initial_states"], dtype=float)
        nom = d.get("nominal_inputs")
        nom = None if nom is None else np.asarray(nom, dtype=float)
        W = _parse_noise(d.get("noise", 1e-6), N, state_dims)
        return UnicycleDynamicsSpec(initial_states=init, nominal_inputs=nom, W=W)
    raise SchemaError(f"dynamics.type: expected 'ltv' or 'unicycle', got {kind!r}")


def _parse_noise(spec, N, state_dims):
    n_x = sum(state_dims)
    if isinstance(spec, dict):
        _reject_unknown(spec, {"per_agent_diag", "diag", "matrix"}, "dynamics.noise")
        if "per_agent_diag" in spec:
            blocks = []
            for d in state_dims:
                vals = np.asarray(spec["per_agent_diag"], dtype=float)
                if vals.shape != (d,):
                    raise SchemaError(f"noise.per_agent_diag: length {vals.shape}, expected {d}")
                blocks.append(np.diag(vals))
            out = np.zeros((n_x, n_x))
            o = 0
            for b in blocks:
                out[o:o + b.shape[0], o:o + b.shape[0]] = b
                o += b.shape[0]
            return out
        if "diag" in spec:
            return np.diag(np.asarray(spec["diag"], dtype=float))
        return coerce_matrix(spec["matrix"], n_x, "dynamics.noise.matrix")
    return coerce_matrix(spec, n_x, "dynamics.noise")


def _parse_cost(d, i, T, n_u, state_dims):
    n_x = sum(state_dims)
    if "Q" in d or "ref" in d:
        # full per-time form
        _reject_unknown(d, {"Q", "R", "ref"}, f"costs[{i}]")
        Q = _matrix_seq(d["Q"], T, n_x, f"costs[{i}].Q")
        R = _matrix_seq(d["R"], T, n_u, f"costs[{i}].R")
        ref = np.asarray(d.get("ref", np.zeros((T, n_x))), dtype=float)
        if ref.ndim == 1:
            ref = np.repeat(ref[None, :], T, axis=0)
        return CostSpec(Q=Q, R=R, ref=ref)
    _reject_unknown(d, {"Q_stage", "Q_terminal", "R", "goal"}, f"costs[{i}]")
    q_stage = _embed_agent_matrix(d.get("Q_stage", 0.0), state_dims, i, f"costs[{i}].Q_stage")
    q_term = _embed_agent_matrix(d.get("Q_terminal", 0.0), state_dims, i, f"costs[{i}].Q_terminal")
    Q = np.repeat(q_stage[None, :, :], T, axis=0)
    Q[T - 1] = q_term + q_stage
    R = np.repeat(coerce_matrix(d["R"], n_u, f"costs[{i}].R")[None, :, :], T, axis=0)
    goal = d.get("goal")
    if goal is None:
        ref = np.zeros((T, n_x))
    else:
        ref = np.repeat(_embed_agent_vector(goal, state_dims, i, f"costs[{i}].goal")[None, :],
                        T, axis=0)
    return CostSpec(Q=Q, R=R, ref=ref)


def _bounds_array(spec, state_dims, agent, name):
    n_x = sum(state_dims)
    if spec is None:
        return np.full(n_x, np.nan)
    vals = [np.nan if v is None else float(v) for v in spec]
    arr = np.asarray(vals, dtype=float)
    if agent is None:
        if arr.shape != (n_x,):
            raise SchemaError(f"{name}: length {arr.shape[0]}, expected {n_x}")
        return arr
    d = state_dims[agent]
    if arr.shape != (d,):
        raise SchemaError(f"{name}: length {arr.shape[0]}, expected {d}")
    out = np.full(n_x, np.nan)
    o = int(sum(state_dims[:agent]))
    out[o:o + d] = arr
    return out


def default_collision_weight(dim):
    """Selector of the planar position coordinates within a substate difference."""
    C = np.zeros((dim, dim))
    for q in range(min(2, dim)):
        C[q, q] = 1.0
    return C


def _parse_constraint(d, k, state_dims):
    kind = d.get("type")
    if kind == "box":
        _reject_unknown(d, {"type", "agent", "x_min", "x_max", "active_times"},
                        f"constraints[{k}]")
        agent = d.get("agent")
        x_min = _bounds_array(d.get("x_min"), state_dims, agent, f"constraints[{k}].x_min")
        x_max = _bounds_array(d.get("x_max"), state_dims, agent, f"constraints[{k}].x_max")
        at = d.get("active_times")
        return BoxSpec(x_min=x_min, x_max=x_max,
                       active_times=None if at is None else tuple(at))
    if kind == "collision":
        _reject_unknown(d, {"type", "pair", "radius", "weight", "active_times"},
                        f"constraints[{k}]")
        i, j = d["pair"]
        dim = state_dims[int(i)]
        w = d.get("weight")
        C = default_collision_weight(dim) if w is None else coerce_matrix(
            w, dim, f"constraints[{k}].weight")
        at = d.get("active_times")
        return CollisionSpec(pair=(int(i), int(j)), radius=float(d["radius"]), C=C,
                             active_times=None if at is None else tuple(at))
    raise SchemaError(f"constraints[{k}].type: expected 'box' or 'collision', got {kind!r}")


def scenario_from_dict(doc: dict) -> Scenario:
    if not isinstance(doc, dict):
        raise SchemaError("scenario document must be a JSON object")
    _reject_unknown(doc, SCENARIO_KEYS | {"state_dims"}, "scenario")
    for key in ("agents", "horizon", "dt", "dynamics", "costs", "risk_epsilon", "seed"):
        if key not in doc:
            raise SchemaError(f"scenario: missing required key {key!r}")
    N = int(doc["agents"])
    T = int(doc["horizon"])
    dtype = doc["dynamics"].get("type")
    if dtype == "unicycle":
        state_dims = tuple([4] * N)
    elif "state_dims" in doc:
        state_dims = tuple(int(d) for d in doc["state_dims"])
    elif N == 1:
        state_dims = (len(doc["dynamics"]["x0"]),)
    else:
        raise SchemaError("scenario: 'state_dims' required for multi-agent ltv dynamics")
    dynamics = _parse_dynamics(doc["dynamics"], N, T, state_dims)
    n_u = dynamics.n_u if isinstance(dynamics, LtvGameDynamics) else 2
    costs = tuple(_parse_cost(c, i, T, n_u, state_dims)
                  for i, c in enumerate(doc["costs"]))
    constraints = tuple(_parse_constraint(c, k, state_dims)
                        for k, c in enumerate(doc.get("constraints", [])))
    return Scenario(
        num_agents=N, horizon=T, dt=float(doc["dt"]), dynamics=dynamics,
        costs=costs, constraints=constraints,
        risk_epsilon=float(doc["risk_epsilon"]), rng_seed=int(doc["seed"]),
        state_dims=state_dims,
    )


def scenario_to_dict(s: Scenario) -> dict:
    """Emit the lossless (full-form) scenario document."""
    if isinstance(s.dynamics, LtvGameDynamics):
        dyn = {"type": "ltv", "A": s.dynamics.A.tolist(), "B": s.dynamics.B.tolist(),
               "W": s.dynamics.W.tolist(), "x0": s.dynamics.x0.tolist()}
    else:
        nom = s.dynamics.nominal_inputs
        dyn = {"type": "unicycle",
               "initial_states": s.dynamics.initial_states.tolist(),
               "nominal_inputs": None if nom is None else nom.tolist(),
               "noise": {"matrix": s.dynamics.W.tolist()}}
    costs = [{"Q": c.Q.tolist(), "R": c.R.tolist(), "ref": c.ref.tolist()}
             for c in s.costs]
    cons = []
    for c in s.constraints:
        at = None if c.active_times is None else list(c.active_times)
        if c.kind == "box":
            cons.append({"type": "box",
                         "x_min": [None if math.isnan(v) else v for v in c.x_min],
                         "x_max": [None if math.isnan(v) else v for v in c.x_max],
                         "active_times": at})
        else:
            cons.append({"type": "collision", "pair": list(c.pair),
                         "radius": c.radius, "weight": c.C.tolist(),
                         "active_times": at})
    return {
        "agents": s.num_agents, "horizon": s.horizon, "dt": s.dt,
        "state_dims": list(s.state_dims), "dynamics": dyn, "costs": costs,
        "constraints": cons, "risk_epsilon": s.risk_epsilon, "seed": s.rng_seed,
    }


def save_scenario(s: Scenario, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(s), fh, indent=1)
        fh.write("\n")


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path}: not valid JSON ({exc})") from exc
    return scenario_from_dict(doc)


def file_fingerprint(path) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def scenario_fingerprint(s: Scenario) -> str:
    """Content hash of a scenario (canonical JSON of its numeric payload)."""
    def conv(o):
        if isinstance(o, np.ndarray):
            return o.tolist()
        if isinstance(o, (np.floating, np.integer)):
            return o.item()
        raise TypeError(type(o).__name__)

    payload = {
        "agents": s.num_agents, "horizon": s.horizon, "dt": s.dt,
        "risk_epsilon": s.risk_epsilon, "seed": s.rng_seed,
        "state_dims": list(s.state_dims),
        "dynamics": _dynamics_payload(s.dynamics),
        "costs": [{"Q": c.Q, "R": c.R, "ref": c.ref} for c in s.costs],
        "constraints": [_constraint_payload(c) for c in s.constraints],
    }
    blob = json.dumps(payload, sort_keys=True, default=conv, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()


def _dynamics_payload(dyn):
    if isinstance(dyn, LtvGameDynamics):
        return {"type": "ltv", "A": dyn.A, "B": dyn.B, "W": dyn.W, "x0": dyn.x0}
    return {"type": "unicycle", "initial_states": dyn.initial_states,
            "nominal_inputs": dyn.nominal_inputs, "W": dyn.W}


def _constraint_payload(c):
    if c.kind == "box":
        return {"type": "box", "x_min": c.x_min, "x_max": c.x_max,
                "active_times": c.active_times}
    return {"type": "collision", "pair": list(c.pair), "radius": c.radius,
            "C": c.C, "active_times": c.active_times}
