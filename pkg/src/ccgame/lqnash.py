"""Linear feedback Nash equilibrium of multiplier-parameterized LQG games.

Each player minimizes a quadratic tracking cost plus a shared state-linear
term ``lam^T (lmat^T xstack + c)``; the equilibrium is linear state feedback
``u^i_t = -K^i_t x_t - alpha^i_t`` obtained by a backward sweep of coupled
Riccati recursions.  At every stage all players' gains (and affine terms)
are solved simultaneously from one block linear system whose diagonal blocks
are ``R^i + B^i' P^i B^i`` and off-diagonal blocks ``B^i' P^i B^j``.

Value-function convention: ``V^i_t(x) = x' P^i_t x + 2 zeta^i_t' x + const``,
so the per-stage linear coefficient entering the zeta recursion is half the
gradient of the stage cost's linear part (the multiplier contributes
``0.5 * l_t lam`` and a goal reference contributes ``-Q^i_t r^i_t``).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularStageSystem
from .model import GameProblem, _freeze

RCOND_MIN = 1e-12


@dataclass(frozen=True)
class FeedbackPolicy:
    """Per-time, per-player linear feedback: u^i_t = -K[t, i] x_t - alpha[t, i]."""

    K: np.ndarray        # (T, N, n_u, n_x)
    alpha: np.ndarray    # (T, N, n_u)

    def __post_init__(self):
        object.__setattr__(self, "K", _freeze(self.K))
        object.__setattr__(self, "alpha", _freeze(self.alpha))

    @property
    def T(self):
        return self.K.shape[0]

    @property
    def N(self):
        return self.K.shape[1]

    def inputs_at(self, t, x):
        """(N, n_u) inputs of all players at state x."""
        return -self.K[t] @ np.asarray(x) - self.alpha[t]

    def replace_player(self, i, K_i, alpha_i):
        K = np.array(self.K)
        alpha = np.array(self.alpha)
        K[:, i] = K_i
        alpha[:, i] = alpha_i
        return FeedbackPolicy(K=K, alpha=alpha)


@dataclass(frozen=True)
class RiccatiState:
    P: np.ndarray        # (T+1, N, n_x, n_x)
    zeta: np.ndarray     # (T+1, N, n_x)
    F: np.ndarray        # (T, n_x, n_x) closed-loop A - sum_j B^j K^j

    def __post_init__(self):
        for name in ("P", "zeta", "F"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))


def _stage_matrix(P_next, B, R, t):
    """Joint block system over players; raises on near-singularity."""
    N, _, n_u = B.shape
    S = np.zeros((N * n_u, N * n_u))
    for i in range(N):
        BtP = B[i].T @ P_next[i]
        for j in range(N):
            blk = BtP @ B[j]
            if i == j:
                blk = blk + R[i]
            S[i * n_u:(i + 1) * n_u, j * n_u:(j + 1) * n_u] = blk
    sv = np.linalg.svd(S, compute_uv=False)
    rcond = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
    if rcond < RCOND_MIN:
        raise SingularStageSystem(t, rcond)
    return S


def solve_stage_gains(P_next, A, B, R, t=0):
    """All players' gains at one stage from the joint block solve.

    P_next: (N, n_x, n_x); A: (n_x, n_x); B: (N, n_x, n_u); R: (N, n_u, n_u).
    Returns K: (N, n_u, n_x).
    """
    N, _, n_u = B.shape
    S = _stage_matrix(P_next, B, R, t)
    Y = np.concatenate([B[i].T @ P_next[i] @ A for i in range(N)], axis=0)
    K = np.linalg.solve(S, Y)
    return K.reshape(N, n_u, -1)


def stage_linear_terms(problem: GameProblem, conset=None, lam=None):
    """Half linear coefficients s[i, t] = 0.5 l_t lam - Q^i_t r^i_t, t = 1..T."""
    N, T, n_x = problem.N, problem.T, problem.n_x
    s = np.zeros((N, T + 1, n_x))
    for i in range(N):
        s[i] = -np.einsum("tab,tb->ta", problem.Q[i], problem.ref[i])
    if conset is not None and lam is not None and conset.M > 0:
        lam = np.asarray(lam, dtype=float)
        lterm = (conset.lmat @ lam).reshape(T, n_x)
        s[:, 1:, :] += 0.5 * lterm[None, :, :]
    return s


def backward_recursion(problem: GameProblem, conset=None, lam=None):
    """Backward sweep t = T-1..0 producing the feedback NE policy.

    Returns (FeedbackPolicy, RiccatiState).  With lam = 0 (or no constraint
    set) and zero references the affine terms vanish and the policy is the
    unconstrained LQ-game equilibrium.
    """
    dyn = problem.dyn
    N, T, n_x, n_u = problem.N, problem.T, problem.n_x, problem.n_u
    s = stage_linear_terms(problem, conset, lam)

    P = np.zeros((T + 1, N, n_x, n_x))
    zeta = np.zeros((T + 1, N, n_x))
    F = np.zeros((T, n_x, n_x))
    K = np.zeros((T, N, n_u, n_x))
    alpha = np.zeros((T, N, n_u))

    for i in range(N):
        P[T, i] = problem.Q[i, T]
        zeta[T, i] = s[i, T]

    for t in range(T - 1, -1, -1):
        A, B, R = dyn.A[t], dyn.B[t], problem.R[:, t]
        S = _stage_matrix(P[t + 1], B, R, t)
        YK = np.concatenate([B[i].T @ P[t + 1, i] @ A for i in range(N)], axis=0)
        Ya = np.concatenate([B[i].T @ zeta[t + 1, i] for i in range(N)])
        sol = np.linalg.solve(S, np.concatenate([YK, Ya[:, None]], axis=1))
        K[t] = sol[:, :n_x].reshape(N, n_u, n_x)
        alpha[t] = sol[:, n_x].reshape(N, n_u)

        F[t] = A - np.einsum("iab,ibc->ac", B, K[t])
        Ba = np.einsum("iab,ib->a", B, alpha[t])
        for i in range(N):
            Pn = (F[t].T @ P[t + 1, i] @ F[t]
                  + K[t, i].T @ R[i] @ K[t, i] + problem.Q[i, t])
            P[t, i] = (Pn + Pn.T) / 2.0
            zeta[t, i] = (F[t].T @ (zeta[t + 1, i] - P[t + 1, i] @ Ba)
                          + K[t, i].T @ R[i] @ alpha[t, i] + s[i, t])

    return (FeedbackPolicy(K=K, alpha=alpha),
            RiccatiState(P=P, zeta=zeta, F=F))


def integrate_expected(dyn, policy: FeedbackPolicy):
    """Mean closed-loop trajectory (T+1, n_x): the zero-noise integration."""
    T, n_x = dyn.T, dyn.n_x
    xs = np.zeros((T + 1, n_x))
    xs[0] = dyn.x0
    for t in range(T):
        u = policy.inputs_at(t, xs[t])
        xs[t + 1] = dyn.A[t] @ xs[t] + np.einsum("iab,ib->a", dyn.B[t], u)
    return xs


def mean_inputs(dyn, policy: FeedbackPolicy, mean_traj=None):
    """(T, N, n_u) inputs along the mean trajectory."""
    if mean_traj is None:
        mean_traj = integrate_expected(dyn, policy)
    return np.stack([policy.inputs_at(t, mean_traj[t]) for t in range(dyn.T)])


def closed_loop_covariance(dyn, policy: FeedbackPolicy):
    """Sigma-hat recursion under the feedback loop: S+ = F S F' + W."""
    T, n_x = dyn.T, dyn.n_x
    S = np.zeros((T + 1, n_x, n_x))
    for t in range(T):
        F = dyn.A[t] - np.einsum("iab,ibc->ac", dyn.B[t], policy.K[t])
        Sn = F @ S[t] @ F.T + dyn.W[t]
        S[t + 1] = (Sn + Sn.T) / 2.0
    return S


def evaluate_cost(problem: GameProblem, policy: FeedbackPolicy, i):
    """Exact expected cost of player i under the Gaussian closed loop.

    Mean-trajectory cost plus the trace terms from the closed-loop state
    covariance (inputs contribute tr(R K Sigma K')).
    """
    dyn = problem.dyn
    T = problem.T
    xs = integrate_expected(dyn, policy)
    Sig = closed_loop_covariance(dyn, policy)
    total = 0.0
    for t in range(1, T + 1):
        e = xs[t] - problem.ref[i, t]
        Q = problem.Q[i, t]
        total += float(e @ Q @ e) + float(np.trace(Q @ Sig[t]))
    for t in range(T):
        u = policy.inputs_at(t, xs[t])[i]
        R = problem.R[i, t]
        total += float(u @ R @ u)
        total += float(np.trace(R @ policy.K[t, i] @ Sig[t] @ policy.K[t, i].T))
    return total


def evaluate_lagrangian(problem: GameProblem, policy: FeedbackPolicy, i,
                        lam=None, conset=None):
    """J^i plus lam^T g at the policy's expected trajectory."""
    cost = evaluate_cost(problem, policy, i)
    if conset is None or lam is None or conset.M == 0:
        return cost
    g = conset.evaluate(integrate_expected(problem.dyn, policy))
    return cost + float(np.asarray(lam) @ g)


def best_response(problem: GameProblem, policy: FeedbackPolicy, i,
                  lam=None, conset=None):
    """Player i's optimal linear policy against the other players' policies.

    Absorbs the others' feedback into drift dynamics and runs the
    single-player affine-LQR backward sweep on the same Lagrangian.
    Returns (K_i, alpha_i) with shapes (T, n_u, n_x), (T, n_u).
    """
    dyn = problem.dyn
    N, T, n_x, n_u = problem.N, problem.T, problem.n_x, problem.n_u
    s = stage_linear_terms(problem, conset, lam)[i]

    P = problem.Q[i, T].copy()
    zeta = s[T].copy()
    K_i = np.zeros((T, n_u, n_x))
    a_i = np.zeros((T, n_u))
    for t in range(T - 1, -1, -1):
        A, B = dyn.A[t], dyn.B[t]
        others = [j for j in range(N) if j != i]
        Atil = A - sum(B[j] @ policy.K[t, j] for j in others) if others else A
        drift = -sum((B[j] @ policy.alpha[t, j] for j in others), np.zeros(n_x))
        Bi, R = B[i], problem.R[i, t]
        S = R + Bi.T @ P @ Bi
        sv = np.linalg.svd(S, compute_uv=False)
        rcond = float(sv[-1] / sv[0]) if sv[0] > 0 else 0.0
        if rcond < RCOND_MIN:
            raise SingularStageSystem(t, rcond)
        K_i[t] = np.linalg.solve(S, Bi.T @ P @ Atil)
        a_i[t] = np.linalg.solve(S, Bi.T @ (P @ drift + zeta))
        F = Atil - Bi @ K_i[t]
        delta = drift - Bi @ a_i[t]
        Pn = F.T @ P @ F + K_i[t].T @ R @ K_i[t] + problem.Q[i, t]
        zeta = F.T @ (zeta + P @ delta) + K_i[t].T @ R @ a_i[t] + s[t]
        P = (Pn + Pn.T) / 2.0
    return K_i, a_i


def affine_response(problem: GameProblem, conset):
    """Exact affine map lam -> g at the equilibrium, in one batched sweep.

    The stage gains do not depend on lam, and zeta (hence alpha and the mean
    trajectory) is affine in it, so propagating matrix-valued coefficients
    reproduces exactly what M+1 unit-probe solves would measure.  Returns
    (G, ctilde) with g(lam) = G @ lam + ctilde, G of shape (M, M).
    """
    dyn = problem.dyn
    N, T, n_x, n_u = problem.N, problem.T, problem.n_x, problem.n_u
    M = conset.M
    ref_lin = np.stack([np.einsum("tab,tb->ta", problem.Q[i], problem.ref[i])
                        for i in range(N)])

    # zeta^i_t = Z[i] @ lam + z[i]; columns 0..M-1 carry Z, column M carries z
    C = np.zeros((N, n_x, M + 1))
    for i in range(N):
        C[i, :, :M] = 0.5 * conset.l_block(T)
        C[i, :, M] = -ref_lin[i, T]
    K = np.zeros((T, N, n_u, n_x))
    aC = np.zeros((T, N, n_u, M + 1))
    F = np.zeros((T, n_x, n_x))
    P = np.stack([problem.Q[i, T] for i in range(N)])

    for t in range(T - 1, -1, -1):
        A, B, R = dyn.A[t], dyn.B[t], problem.R[:, t]
        S = _stage_matrix(P, B, R, t)
        YK = np.concatenate([B[i].T @ P[i] @ A for i in range(N)], axis=0)
        Ya = np.concatenate([B[i].T @ C[i] for i in range(N)], axis=0)
        sol = np.linalg.solve(S, np.concatenate([YK, Ya], axis=1))
        K[t] = sol[:, :n_x].reshape(N, n_u, n_x)
        aC[t] = sol[:, n_x:].reshape(N, n_u, M + 1)

        F[t] = A - np.einsum("iab,ibc->ac", B, K[t])
        BaC = np.einsum("iab,ibm->am", B, aC[t])
        P_new = np.zeros_like(P)
        C_new = np.zeros_like(C)
        for i in range(N):
            Pn = F[t].T @ P[i] @ F[t] + K[t, i].T @ R[i] @ K[t, i] + problem.Q[i, t]
            P_new[i] = (Pn + Pn.T) / 2.0
            C_new[i] = (F[t].T @ (C[i] - P[i] @ BaC)
                        + K[t, i].T @ R[i] @ aC[t, i])
            if t >= 1:
                C_new[i, :, :M] += 0.5 * conset.l_block(t)
                C_new[i, :, M] += -ref_lin[i, t]
        P, C = P_new, C_new

    # forward sweep of the affine mean trajectory
    X = np.zeros((n_x, M + 1))
    X[:, M] = dyn.x0
    xstack = np.zeros((T * n_x, M + 1))
    for t in range(T):
        BaC = np.einsum("iab,ibm->am", dyn.B[t], aC[t])
        X = F[t] @ X - BaC
        xstack[t * n_x:(t + 1) * n_x] = X
    gmap = conset.lmat.T @ xstack
    G = gmap[:, :M]
    ctilde = gmap[:, M] + conset.c
    return G, ctilde


# ---------------------------------------------------------------------------
# Policy persistence


def policy_to_dict(policy: FeedbackPolicy, fingerprint: str) -> dict:
    return {
        "fingerprint": fingerprint,
        "horizon": policy.T,
        "players": policy.N,
        "K": policy.K.tolist(),
        "alpha": policy.alpha.tolist(),
    }


def policy_from_dict(doc: dict):
    """Returns (FeedbackPolicy, fingerprint)."""
    policy = FeedbackPolicy(K=np.asarray(doc["K"], dtype=float),
                            alpha=np.asarray(doc["alpha"], dtype=float))
    return policy, str(doc.get("fingerprint", ""))
