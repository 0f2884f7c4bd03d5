import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from ccgame import scenarios
from ccgame.dualascent import DualAscentOptions, prepare_game, run_dual_ascent
from ccgame.model import (BoxSpec, CollisionSpec, CostSpec, LtvGameDynamics,
                          Scenario, validate_scenario)


def spd(rng, n, scale=1.0):
    m = rng.normal(size=(n, n))
    return scale * (m @ m.T / n + 0.1 * np.eye(n))


def make_ltv_scenario(state_dims, T, A_blocks, B_blocks, x0, W_diag, Q_list,
                      R_list, goal_list, constraints, eps=0.05, dt=0.1, seed=1):
    """Assemble a block-diagonal LTV scenario from per-agent pieces."""
    N = len(state_dims)
    n_x = sum(state_dims)
    n_u = B_blocks[0].shape[1]
    offs = np.cumsum([0] + list(state_dims))
    A = np.zeros((n_x, n_x))
    B = np.zeros((N, n_x, n_u))
    for i in range(N):
        sl = slice(offs[i], offs[i + 1])
        A[sl, sl] = A_blocks[i]
        B[i, sl, :] = B_blocks[i]
    A_seq = np.repeat(A[None], T, axis=0)
    B_seq = np.repeat(B[None], T, axis=0)
    W_seq = np.repeat(np.diag(W_diag)[None], T, axis=0)
    dyn = LtvGameDynamics(A=A_seq, B=B_seq, W=W_seq, x0=np.asarray(x0, float))
    costs = []
    for i in range(N):
        Q = np.repeat(Q_list[i][None], T, axis=0)
        R = np.repeat(R_list[i][None], T, axis=0)
        ref = np.repeat(np.asarray(goal_list[i], float)[None], T, axis=0)
        costs.append(CostSpec(Q=Q, R=R, ref=ref))
    return Scenario(num_agents=N, horizon=T, dt=dt, dynamics=dyn,
                    costs=tuple(costs), constraints=tuple(constraints),
                    risk_epsilon=eps, rng_seed=seed, state_dims=tuple(state_dims))


def random_small_scenario(rng, N=None, with_rows=True):
    """Random decoupled LTV game with a few single-time box rows (M <= 20)."""
    N = N if N is not None else int(rng.integers(1, 4))
    state_dims = [int(rng.integers(1, 4)) for _ in range(N)]
    while sum(state_dims) > 12:
        state_dims[np.argmax(state_dims)] -= 1
    T = int(rng.integers(4, 12))
    n_u = int(rng.integers(1, 3))
    n_x = sum(state_dims)

    A_blocks, B_blocks, Q_list, R_list, goal_list = [], [], [], [], []
    offs = np.cumsum([0] + list(state_dims))
    for i, d in enumerate(state_dims):
        Ai = rng.normal(size=(d, d))
        rad = max(np.abs(np.linalg.eigvals(Ai)))
        A_blocks.append(Ai / max(rad / 1.02, 1.0))
        Bi = rng.normal(size=(d, n_u))
        B_blocks.append(Bi)
        Qi = np.zeros((n_x, n_x))
        Qi[offs[i]:offs[i + 1], offs[i]:offs[i + 1]] = spd(rng, d, scale=1.0)
        Q_list.append(Qi)
        R_list.append(np.diag(rng.uniform(0.5, 2.0, n_u)))
        goal = np.zeros(n_x)
        goal[offs[i]:offs[i + 1]] = rng.normal(size=d)
        goal_list.append(goal)
    x0 = rng.normal(size=n_x) * 0.5
    W_diag = rng.uniform(1e-5, 5e-4, n_x)

    cons = []
    if with_rows:
        for _ in range(int(rng.integers(3, 12))):
            q = int(rng.integers(0, n_x))
            t = int(rng.integers(1, T + 1))
            x_min = np.full(n_x, np.nan)
            x_max = np.full(n_x, np.nan)
            bound = float(rng.normal() * 1.5)
            if rng.random() < 0.5:
                x_max[q] = bound
            else:
                x_min[q] = bound
            cons.append(BoxSpec(x_min=x_min, x_max=x_max, active_times=(t,)))
    return make_ltv_scenario(state_dims, T, A_blocks, B_blocks, x0, W_diag,
                             Q_list, R_list, goal_list, cons,
                             seed=int(rng.integers(0, 2**31)))


def scalar_single_agent_instance(T=3, bound=0.4, goal=1.0):
    """N=1 scalar chain with one active upper bound at the final time."""
    x_min = np.array([np.nan])
    x_max = np.array([bound])
    con = BoxSpec(x_min=x_min, x_max=x_max, active_times=(T,))
    return make_ltv_scenario(
        [1], T, [np.array([[1.0]])], [np.array([[1.0]])], [0.0], [1e-8],
        [np.array([[1.0]])], [np.array([[1.0]])], [np.array([goal])], [con])


def scalar_two_agent_instance(T=3, radius=0.5):
    """Two decoupled scalar agents pulled together, one collision row at T."""
    con = CollisionSpec(pair=(0, 1), radius=radius, C=np.array([[1.0]]),
                        active_times=(T,))
    return make_ltv_scenario(
        [1, 1], T,
        [np.array([[1.0]]), np.array([[1.0]])],
        [np.array([[1.0]]), np.array([[1.0]])],
        [0.4, -0.4], [1e-8, 1e-8],
        [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])],
        [np.array([[1.0]]), np.array([[1.0]])],
        [np.array([0.1, 0.0]), np.array([0.0, -0.1])], [con])


def double_integrator_instance(T=3, dt=0.5, bound=0.5, goal=1.0):
    """N=1 two-state (position, velocity) chain with one position bound."""
    x_min = np.array([np.nan, np.nan])
    x_max = np.array([bound, np.nan])
    con = BoxSpec(x_min=x_min, x_max=x_max, active_times=(T,))
    return make_ltv_scenario(
        [2], T, [np.array([[1.0, dt], [0.0, 1.0]])],
        [np.array([[0.0], [dt]])], [0.0, 0.0], [1e-8, 1e-8],
        [np.diag([2.0, 0.1])], [np.array([[1.0]])],
        [np.array([goal, 0.0])], [con], dt=dt)


# ---------------------------------------------------------------------------
# Session-scoped heavy artifacts shared across test modules


@pytest.fixture(scope="session")
def mini_scenario():
    return scenarios.make_intersection_mini()


@pytest.fixture(scope="session")
def mini_prep(mini_scenario):
    return prepare_game(validate_scenario(mini_scenario))


@pytest.fixture(scope="session")
def mini_report(mini_prep):
    return run_dual_ascent(mini_prep, DualAscentOptions(k_max=20000, tol_feas=0.0))


@pytest.fixture(scope="session")
def intersection_prep():
    return prepare_game(validate_scenario(scenarios.make_intersection()))


@pytest.fixture(scope="session")
def intersection_report(intersection_prep):
    return run_dual_ascent(intersection_prep,
                           DualAscentOptions(k_max=20000, tol_feas=0.0))


@pytest.fixture(scope="session")
def random_scenarios():
    rng = np.random.default_rng(20240625)
    return [random_small_scenario(rng) for _ in range(5)]
