"""Unicycle kinematics: nominal rollout and linearization to LTV game dynamics.

The unicycle state is [p_x, p_y, theta, v] with inputs [a, omega]; forward
Euler at step dt discretizes both the nominal rollout and the Jacobians.  The
linearized game operates on deviations from the nominal trajectory, with the
initial deviation zero (the initial state is known).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import LtvGameDynamics, _freeze


@dataclass(frozen=True)
class UnicycleSpec:
    initial_states: np.ndarray   # (N, 4)
    nominal_inputs: np.ndarray   # (N, T, 2)
    dt: float

    def __post_init__(self):
        object.__setattr__(self, "initial_states", _freeze(self.initial_states))
        object.__setattr__(self, "nominal_inputs", _freeze(self.nominal_inputs))
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.nominal_inputs.ndim != 3 or self.nominal_inputs.shape[2] != 2:
            raise ValueError(f"nominal_inputs shape {self.nominal_inputs.shape}, expected (N, T, 2)")

    @property
    def N(self):
        return self.initial_states.shape[0]

    @property
    def T(self):
        return self.nominal_inputs.shape[1]


@dataclass(frozen=True)
class NominalTrajectory:
    states: np.ndarray   # (N, T+1, 4)

    def __post_init__(self):
        object.__setattr__(self, "states", _freeze(self.states))

    def stacked_states(self):
        """Per-time stacked state (T+1, 4N)."""
        n, tp1, _ = self.states.shape
        return np.transpose(self.states, (1, 0, 2)).reshape(tp1, 4 * n)


def unicycle_step(state, u, dt):
    px, py, th, v = state
    a, w = u
    return np.array([
        px + dt * v * np.cos(th),
        py + dt * v * np.sin(th),
        th + dt * w,
        v + dt * a,
    ])


def nominal_rollout(spec: UnicycleSpec) -> NominalTrajectory:
    """Forward-Euler integration of the nominal inputs for every agent."""
    N, T = spec.N, spec.T
    states = np.zeros((N, T + 1, 4))
    states[:, 0, :] = spec.initial_states
    for i in range(N):
        for t in range(T):
            states[i, t + 1] = unicycle_step(states[i, t], spec.nominal_inputs[i, t], spec.dt)
    return NominalTrajectory(states=states)


def unicycle_jacobians(state, dt):
    """Discrete Jacobians (I + dt*df/dx, dt*df/du) at a nominal state."""
    _, _, th, v = state
    A = np.eye(4)
    A[0, 2] = -dt * v * np.sin(th)
    A[0, 3] = dt * np.cos(th)
    A[1, 2] = dt * v * np.cos(th)
    A[1, 3] = dt * np.sin(th)
    B = np.zeros((4, 2))
    B[2, 1] = dt
    B[3, 0] = dt
    return A, B


def linearize_unicycle(spec: UnicycleSpec, nominal: NominalTrajectory,
                       W) -> LtvGameDynamics:
    """Stack per-agent Jacobians block-diagonally into shared-state dynamics.

    W is the (n_x, n_x) per-step noise covariance, taken as given in the
    discrete-time deviation coordinates and replicated over the horizon.
    """
    N, T = spec.N, spec.T
    n_x = 4 * N
    A = np.zeros((T, n_x, n_x))
    B = np.zeros((T, N, n_x, 2))
    for t in range(T):
        for i in range(N):
            Ai, Bi = unicycle_jacobians(nominal.states[i, t], spec.dt)
            sl = slice(4 * i, 4 * i + 4)
            A[t, sl, sl] = Ai
            B[t, i, sl, :] = Bi
    W = np.asarray(W, dtype=float)
    if W.ndim == 2:
        W = np.repeat(W[None, :, :], T, axis=0)
    return LtvGameDynamics(A=A, B=B, W=W, x0=np.zeros(n_x))
