"""Independent oracles used by the tests.

Everything here is deliberately implemented without touching the package's
solver path: dense prediction-matrix algebra, direct KKT linear solves, a
textbook Riccati recursion, a series-based normal CDF with bisection
inversion, and finite-difference Jacobians.
"""

import math

import numpy as np


# ---------------------------------------------------------------------------
# Normal CDF via the classic series, quantile via bisection


def series_normal_cdf(x):
    """Phi(x) = 1/2 + phi(x) * sum x^(2n+1) / (1*3*...*(2n+1))."""
    x = float(x)
    if x < -40.0:
        return 0.0
    if x > 40.0:
        return 1.0
    term = x
    total = x
    n = 0
    while abs(term) > 1e-18 * max(1.0, abs(total)) and n < 500:
        n += 1
        term *= x * x / (2 * n + 1)
        total += term
    phi = math.exp(-x * x / 2.0) / math.sqrt(2.0 * math.pi)
    return 0.5 + phi * total


def bisect_normal_quantile(p, lo=-12.0, hi=12.0):
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if series_normal_cdf(mid) < p:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-13:
            break
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# Dense prediction algebra for LTV systems


def prediction_matrices(A_seq, B_seq):
    """xstack(t=1..T) = TT @ x0 + sum_i SS[i] @ u^i, u^i time-stacked.

    A_seq: (T, n_x, n_x); B_seq: (T, N, n_x, n_u).
    Returns TT (T*n_x, n_x) and SS list of (T*n_x, T*n_u).
    """
    T, n_x, _ = A_seq.shape
    N, n_u = B_seq.shape[1], B_seq.shape[3]
    TT = np.zeros((T * n_x, n_x))
    SS = [np.zeros((T * n_x, T * n_u)) for _ in range(N)]
    Phi = np.eye(n_x)
    for t in range(1, T + 1):
        Phi = A_seq[t - 1] @ Phi
        TT[(t - 1) * n_x:t * n_x] = Phi
    for i in range(N):
        for k in range(T):
            Phi = B_seq[k, i]
            for t in range(k + 1, T + 1):
                SS[i][(t - 1) * n_x:t * n_x, k * n_u:(k + 1) * n_u] = Phi
                if t < T:
                    Phi = A_seq[t] @ Phi
    return TT, SS


def stacked_cost_blocks(problem, i):
    """(Qbig, rbig, Rbig) for player i over t=1..T / inputs 0..T-1."""
    T, n_x = problem.T, problem.n_x
    Qbig = np.zeros((T * n_x, T * n_x))
    rbig = np.zeros(T * n_x)
    for t in range(1, T + 1):
        Qbig[(t - 1) * n_x:t * n_x, (t - 1) * n_x:t * n_x] = problem.Q[i, t]
        rbig[(t - 1) * n_x:t * n_x] = problem.ref[i, t]
    n_u = problem.n_u
    Rbig = np.zeros((T * n_u, T * n_u))
    for t in range(T):
        Rbig[t * n_u:(t + 1) * n_u, t * n_u:(t + 1) * n_u] = problem.R[i, t]
    return Qbig, rbig, Rbig


def dense_game_inputs(problem, lmat, cvec, lam):
    """Joint per-player stationarity solve at a fixed multiplier.

    Valid as the feedback-NE mean trajectory when the game decouples given
    the multiplier (block-diagonal dynamics, own-substate costs).
    Returns (u list per player, xstack, mean trajectory (T+1, n_x)).
    """
    dyn = problem.dyn
    N, T, n_x, n_u = problem.N, problem.T, problem.n_x, problem.n_u
    TT, SS = prediction_matrices(dyn.A, dyn.B)
    lam = np.asarray(lam, dtype=float)
    H = np.zeros((N * T * n_u, N * T * n_u))
    b = np.zeros(N * T * n_u)
    for i in range(N):
        Qbig, rbig, Rbig = stacked_cost_blocks(problem, i)
        sl = slice(i * T * n_u, (i + 1) * T * n_u)
        row = np.zeros((T * n_u, N * T * n_u))
        for j in range(N):
            row[:, j * T * n_u:(j + 1) * T * n_u] = 2 * SS[i].T @ Qbig @ SS[j]
        row[:, sl] += 2 * Rbig
        H[sl] = row
        b[sl] = -2 * SS[i].T @ Qbig @ (TT @ dyn.x0 - rbig) - SS[i].T @ lmat @ lam
    u = np.linalg.solve(H, b)
    xstack = TT @ dyn.x0 + sum(SS[i] @ u[i * T * n_u:(i + 1) * T * n_u]
                               for i in range(N))
    traj = np.vstack([dyn.x0, xstack.reshape(T, n_x)])
    return [u[i * T * n_u:(i + 1) * T * n_u] for i in range(N)], xstack, traj


def dense_kkt_single_row(problem, lmat, cvec):
    """(u, lambda, trajectory) for a single shared constraint row via KKT.

    Tries the inactive case first; otherwise appends the active-constraint
    row and solves the square KKT system.  Decoupled instances only.
    """
    dyn = problem.dyn
    N, T, n_x, n_u = problem.N, problem.T, problem.n_x, problem.n_u
    assert lmat.shape[1] == 1
    _, xstack, traj = dense_game_inputs(problem, lmat, cvec, np.zeros(1))
    g = lmat.T @ xstack + cvec
    if g[0] <= 0:
        return np.zeros(1), traj
    TT, SS = prediction_matrices(dyn.A, dyn.B)
    dim = N * T * n_u
    H = np.zeros((dim + 1, dim + 1))
    b = np.zeros(dim + 1)
    for i in range(N):
        Qbig, rbig, Rbig = stacked_cost_blocks(problem, i)
        sl = slice(i * T * n_u, (i + 1) * T * n_u)
        for j in range(N):
            H[sl, j * T * n_u:(j + 1) * T * n_u] = 2 * SS[i].T @ Qbig @ SS[j]
        H[sl, sl] += 2 * Rbig
        H[sl, dim:dim + 1] = SS[i].T @ lmat
        b[sl] = -2 * SS[i].T @ Qbig @ (TT @ dyn.x0 - rbig)
    for j in range(N):
        H[dim, j * T * n_u:(j + 1) * T * n_u] = (lmat.T @ SS[j])[0]
    b[dim] = -(cvec[0] + float(lmat[:, 0] @ TT @ dyn.x0))
    sol = np.linalg.solve(H, b)
    u, lam = sol[:dim], sol[dim]
    assert lam >= -1e-9, "oracle: active-set guess wrong (negative multiplier)"
    xstack = TT @ dyn.x0 + sum(SS[i] @ u[i * T * n_u:(i + 1) * T * n_u]
                               for i in range(N))
    traj = np.vstack([dyn.x0, xstack.reshape(T, n_x)])
    return np.array([lam]), traj


def dense_best_response(problem, policy, i, lam, lmat, cvec):
    """Player i's optimum against fixed affine policies, by one dense solve.

    Absorbs the others' feedback into time-varying dynamics plus drift and
    minimizes the Lagrangian over player i's open-loop inputs; the optimal
    mean trajectory coincides with the feedback best response's.
    Returns (mean trajectory, lagrangian value of the deterministic part).
    """
    dyn = problem.dyn
    N, T, n_x, n_u = problem.N, problem.T, problem.n_x, problem.n_u
    others = [j for j in range(N) if j != i]
    Atil = np.zeros((T, n_x, n_x))
    drift = np.zeros((T, n_x))
    for t in range(T):
        Atil[t] = dyn.A[t] - sum(dyn.B[t, j] @ policy.K[t, j] for j in others)
        drift[t] = -sum((dyn.B[t, j] @ policy.alpha[t, j] for j in others),
                        np.zeros(n_x))
    Bsingle = dyn.B[:, i:i + 1]
    TT, SS = prediction_matrices(Atil, Bsingle)
    # drift contribution: D[t] = sum_{k<t} Phi(t,k+1) drift[k]
    D = np.zeros(T * n_x)
    for k in range(T):
        Phi = drift[k]
        for t in range(k + 1, T + 1):
            D[(t - 1) * n_x:t * n_x] += Phi
            if t < T:
                Phi = Atil[t] @ Phi
    Qbig, rbig, Rbig = stacked_cost_blocks(problem, i)
    S = SS[0]
    base = TT @ dyn.x0 + D
    H = 2 * (S.T @ Qbig @ S + Rbig)
    b = -2 * S.T @ Qbig @ (base - rbig) - S.T @ lmat @ np.asarray(lam)
    u = np.linalg.solve(H, b)
    xstack = base + S @ u
    traj = np.vstack([dyn.x0, xstack.reshape(T, n_x)])
    value = float((xstack - rbig) @ Qbig @ (xstack - rbig) + u @ Rbig @ u
                  + np.asarray(lam) @ (lmat.T @ xstack + cvec))
    return traj, value


# ---------------------------------------------------------------------------
# Plain single-player Riccati (textbook form)


def lqr_oracle(A_seq, B_seq, Q_seq, R_seq, W_seq, x0):
    """Finite-horizon LQR: gains and exact stochastic cost.

    Q_seq indexed 1..T supplied as (T, n, n) (cost on x_1..x_T);
    returns (K (T, m, n), cost).
    """
    T, n, _ = A_seq.shape
    m = B_seq.shape[2]
    P = Q_seq[T - 1].copy()
    Ks = np.zeros((T, m, n))
    trace_cost = 0.0
    for t in range(T - 1, -1, -1):
        A, B, R = A_seq[t], B_seq[t], R_seq[t]
        G = R + B.T @ P @ B
        Ks[t] = np.linalg.inv(G) @ (B.T @ P @ A)
        trace_cost += float(np.trace(P @ W_seq[t]))
        Pn = A.T @ P @ A - A.T @ P @ B @ Ks[t] + (Q_seq[t - 1] if t >= 1 else 0.0)
        P = (Pn + Pn.T) / 2.0
    cost = float(x0 @ P @ x0) + trace_cost
    return Ks, cost


# ---------------------------------------------------------------------------
# Finite differences


def numeric_jacobians(step_fn, state, u, dt, h=1e-6):
    """Central-difference Jacobians of a one-step integrator."""
    n, m = len(state), len(u)
    A = np.zeros((n, n))
    B = np.zeros((n, m))
    for q in range(n):
        e = np.zeros(n)
        e[q] = h
        A[:, q] = (step_fn(state + e, u, dt) - step_fn(state - e, u, dt)) / (2 * h)
    for q in range(m):
        e = np.zeros(m)
        e[q] = h
        B[:, q] = (step_fn(state, u + e, dt) - step_fn(state, u - e, dt)) / (2 * h)
    return A, B
