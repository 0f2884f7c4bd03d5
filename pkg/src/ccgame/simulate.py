"""Seeded Monte Carlo rollouts, safety statistics and the central-MPC baseline.

Noise is drawn from counter-based Philox streams keyed by (seed, sample
index), so sample s is bit-identical no matter how many samples are run or
how work is scheduled.  Safety is judged on realized states against the
original quadratic/box predicates, never the affine surrogates.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import lqnash, uncertainty
from .dualascent import DualAscentOptions, PreparedGame, run_dual_ascent
from .errors import FactorizationFailure
from .model import BoxSpec, CollisionSpec, GameProblem, LtvGameDynamics, _freeze

WILSON_Z = 1.959963984540054   # inverse_normal_cdf(0.975)
PSD_TOL = 1e-10


def noise_factors(W):
    """Per-step factors L_t with L_t L_t' = W_t (eigen route tolerates PSD)."""
    T = W.shape[0]
    out = np.zeros_like(W)
    for t in range(T):
        sym = (W[t] + W[t].T) / 2.0
        vals, vecs = np.linalg.eigh(sym)
        scale = max(1.0, float(np.max(np.abs(vals))))
        if vals[0] < -PSD_TOL * scale:
            raise FactorizationFailure(t, vals[0])
        out[t] = vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None)))
    return out


def sample_noise(seed, sample_index, T, n_x):
    """Standard-normal draws (T, n_x) from the sample's own Philox stream."""
    key = [int(seed) & 0xFFFFFFFFFFFFFFFF, int(sample_index) & 0xFFFFFFFFFFFFFFFF]
    rng = np.random.Generator(np.random.Philox(key=key))
    return rng.standard_normal((T, n_x))


def max_threads():
    try:
        return max(1, int(os.environ.get("CCGAME_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class RolloutBatch:
    """Closed-loop sample trajectories in solver coordinates."""

    states: np.ndarray   # (S, T+1, n_x)
    inputs: np.ndarray   # (S, T, N, n_u)
    costs: np.ndarray    # (S, N) realized per-player cost
    seed: int
    method: str = "lqg_game"

    def __post_init__(self):
        for name in ("states", "inputs", "costs"):
            object.__setattr__(self, name, _freeze(getattr(self, name)))

    @property
    def samples(self):
        return self.states.shape[0]


def realized_costs(problem: GameProblem, states, inputs):
    """Per-sample per-player cost of realized trajectories (solver coords)."""
    S = states.shape[0]
    T, N = problem.T, problem.N
    costs = np.zeros((S, N))
    for i in range(N):
        err = states[:, 1:, :] - problem.ref[i, 1:][None, :, :]
        costs[:, i] += np.einsum("sta,tab,stb->s", err, problem.Q[i, 1:], err)
        u = inputs[:, :, i, :]
        costs[:, i] += np.einsum("sta,tab,stb->s", u, problem.R[i], u)
    return costs


def rollout(problem: GameProblem, policy: lqnash.FeedbackPolicy, seed, samples,
            method="lqg_game") -> RolloutBatch:
    """S independent seeded rollouts of the feedback policy under the noise model.

    The recursion runs sample by sample with the same expressions as
    integrate_expected, so sample s is bit-identical regardless of batch size
    and the zero-noise limit reproduces the expected trajectory exactly.
    """
    dyn = problem.dyn
    T, N, n_x, n_u = problem.T, problem.N, problem.n_x, problem.n_u
    S = int(samples)
    factors = noise_factors(dyn.W)

    states = np.zeros((S, T + 1, n_x))
    inputs = np.zeros((S, T, N, n_u))

    def run_sample(s):
        z = sample_noise(seed, s, T, n_x)
        x = dyn.x0
        states[s, 0] = x
        for t in range(T):
            u = policy.inputs_at(t, x)
            inputs[s, t] = u
            x = dyn.A[t] @ x + np.einsum("iab,ib->a", dyn.B[t], u) + factors[t] @ z[t]
            states[s, t + 1] = x

    workers = max_threads()
    if workers > 1 and S > 1:
        # samples write disjoint slices; ordering cannot affect the result
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(run_sample, range(S)))
    else:
        for s in range(S):
            run_sample(s)
    costs = realized_costs(problem, states, inputs)
    return RolloutBatch(states=states, inputs=inputs, costs=costs,
                        seed=int(seed), method=method)


# ---------------------------------------------------------------------------
# Safety statistics


def wilson_interval(violations, n, z=WILSON_Z):
    if n == 0:
        return 0.0, 1.0
    p = violations / n
    denom = 1.0 + z * z / n
    center = (p + z * z / (2 * n)) / denom
    half = z * math.sqrt(p * (1.0 - p) / n + z * z / (4 * n * n)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def _violations_mask(problem: GameProblem, abs_states):
    """(S,) bool: any original predicate violated at any active time."""
    S, Tp1, _ = abs_states.shape
    T = Tp1 - 1
    slices = problem.agent_slices
    bad = np.zeros(S, dtype=bool)
    for spec in problem.constraints:
        times = range(1, T + 1) if spec.active_times is None else spec.active_times
        if isinstance(spec, BoxSpec):
            for q, side, bound in spec.rows():
                vals = abs_states[:, list(times), q]
                if side == "upper":
                    bad |= np.any(vals > bound, axis=1)
                else:
                    bad |= np.any(vals < bound, axis=1)
        elif isinstance(spec, CollisionSpec):
            i, j = spec.pair
            d = abs_states[:, list(times), slices[i]] - abs_states[:, list(times), slices[j]]
            sq = np.einsum("sta,ab,stb->st", d, spec.C, d)
            bad |= np.any(sq < spec.radius ** 2, axis=1)
    return bad


@dataclass(frozen=True)
class SafetyStats:
    method: str
    samples: int
    seed: int
    violations: int
    rate: float
    wilson_lo: float
    wilson_hi: float
    cost_mean: float
    cost_std: float
    travel_mean_s: float
    travel_flagged: int

    def csv_row(self):
        return {
            "method": self.method, "samples": self.samples, "seed": self.seed,
            "cost_mean": self.cost_mean, "cost_std": self.cost_std,
            "travel_mean_s": self.travel_mean_s, "collision_rate": self.rate,
            "wilson_lo": self.wilson_lo, "wilson_hi": self.wilson_hi,
        }


def travel_time(batch: RolloutBatch, problem: GameProblem, tolerance=0.1):
    """Per-sample first t*dt at which every agent is within goal tolerance.

    Samples that never arrive are recorded at T*dt and flagged.
    Returns (times (S,), flagged (S,) bool).
    """
    abs_states = problem.to_absolute(batch.states)
    T = problem.T
    S = batch.samples
    goals_abs = problem.ref[:, T, :] + problem.nominal_states[T][None, :]
    within = np.ones((S, T + 1), dtype=bool)
    for i in range(problem.N):
        idx = problem.position_indices(i)
        err = abs_states[:, :, idx] - goals_abs[i, idx][None, None, :]
        within &= np.linalg.norm(err, axis=2) <= tolerance
    times = np.full(S, T * problem.dt)
    flagged = np.ones(S, dtype=bool)
    any_within = np.any(within, axis=1)
    first = np.argmax(within, axis=1)
    times[any_within] = first[any_within] * problem.dt
    flagged[any_within] = False
    return times, flagged


def evaluate_safety(batch: RolloutBatch, problem: GameProblem,
                    goal_tolerance=0.1) -> SafetyStats:
    """Joint-violation counting over the original predicates plus cost stats."""
    abs_states = problem.to_absolute(batch.states)
    bad = _violations_mask(problem, abs_states)
    S = batch.samples
    violations = int(np.sum(bad))
    lo, hi = wilson_interval(violations, S)
    total = batch.costs.sum(axis=1)
    times, flagged = travel_time(batch, problem, goal_tolerance)
    return SafetyStats(
        method=batch.method, samples=S, seed=batch.seed,
        violations=violations, rate=violations / S,
        wilson_lo=lo, wilson_hi=hi,
        cost_mean=float(np.mean(total)),
        cost_std=float(np.std(total, ddof=1)) if S > 1 else 0.0,
        travel_mean_s=float(np.mean(times)),
        travel_flagged=int(np.sum(flagged)),
    )


# ---------------------------------------------------------------------------
# Central MPC baseline (single aggregated agent, receding horizon)


def slice_problem(problem: GameProblem, tau, x0) -> GameProblem:
    """Remaining-horizon subproblem starting at absolute time tau with state x0."""
    dyn = problem.dyn
    sub_dyn = LtvGameDynamics(A=dyn.A[tau:], B=dyn.B[tau:], W=dyn.W[tau:],
                              x0=np.asarray(x0, dtype=float))
    Q = np.array(problem.Q[:, tau:])
    Q[:, 0] = 0.0                      # the replan-time state is known
    ref = np.array(problem.ref[:, tau:])
    ref[:, 0] = 0.0
    cons = []
    T = problem.T
    for spec in problem.constraints:
        times = range(1, T + 1) if spec.active_times is None else spec.active_times
        shifted = tuple(t - tau for t in times if t >= tau + 1)
        if not shifted:
            continue
        cons.append(replace(spec, active_times=shifted))
    return GameProblem(
        dyn=sub_dyn, Q=Q, R=problem.R[:, tau:], ref=ref, constraints=tuple(cons),
        nominal_states=problem.nominal_states[tau:],
        nominal_inputs=problem.nominal_inputs[tau:],
        state_dims=problem.state_dims, dt=problem.dt,
        risk_epsilon=problem.risk_epsilon, rng_seed=problem.rng_seed,
        fingerprint=problem.fingerprint,
    )


def aggregate_problem(problem: GameProblem) -> GameProblem:
    """Treat all agents as one: stacked inputs, summed cost, shared constraints."""
    dyn = problem.dyn
    T, N, n_x, n_u = problem.T, problem.N, problem.n_x, problem.n_u
    B = np.transpose(dyn.B, (0, 2, 1, 3)).reshape(T, 1, n_x, N * n_u)
    R = np.zeros((1, T, N * n_u, N * n_u))
    for t in range(T):
        for i in range(N):
            R[0, t, i * n_u:(i + 1) * n_u, i * n_u:(i + 1) * n_u] = problem.R[i, t]
    Q = problem.Q.sum(axis=0, keepdims=True)
    ref = np.zeros((1, T + 1, n_x))
    for t in range(1, T + 1):
        rhs = np.einsum("iab,ib->a", problem.Q[:, t], problem.ref[:, t])
        ref[0, t] = np.linalg.lstsq(Q[0, t], rhs, rcond=None)[0]
    return GameProblem(
        dyn=LtvGameDynamics(A=dyn.A, B=B, W=dyn.W, x0=dyn.x0),
        Q=Q, R=R, ref=ref, constraints=problem.constraints,
        nominal_states=problem.nominal_states,
        nominal_inputs=problem.nominal_inputs.reshape(T, 1, N * n_u),
        state_dims=problem.state_dims, dt=problem.dt,
        risk_epsilon=problem.risk_epsilon, rng_seed=problem.rng_seed,
        fingerprint=problem.fingerprint,
    )


def _prepare_subgame(problem_agg: GameProblem) -> PreparedGame:
    cov = uncertainty.propagate_covariance(problem_agg.dyn)
    policy0, _ = lqnash.backward_recursion(problem_agg)
    dev = lqnash.integrate_expected(problem_agg.dyn, policy0)
    reference = problem_agg.nominal_states + dev
    conset = uncertainty.assemble_constraints(problem_agg, cov, reference)
    return PreparedGame(problem=problem_agg, cov=cov, conset=conset,
                        reference_means=_freeze(np.asarray(reference)))


@dataclass
class MpcRun:
    states: np.ndarray         # (T+1, n_x) solver coordinates
    inputs: np.ndarray         # (T, N, n_u)
    failures: list             # (step, error message)
    replans: int
    solve_seconds: float


def central_mpc_run(problem: GameProblem, seed, sample_index=0, replan_every=1,
                    options: DualAscentOptions | None = None) -> MpcRun:
    """One noisy receding-horizon episode of the aggregated single agent.

    Replans every ``replan_every`` steps over the remaining (shrinking)
    horizon; on a replan failure the previous plan keeps driving and the
    failure is recorded with its step index.
    """
    options = options or DualAscentOptions(k_max=500)
    T, N, n_x, n_u = problem.T, problem.N, problem.n_x, problem.n_u
    factors = noise_factors(problem.dyn.W)
    z = sample_noise(seed, sample_index, T, n_x)

    states = np.zeros((T + 1, n_x))
    inputs = np.zeros((T, N, n_u))
    states[0] = problem.dyn.x0
    plan = None
    plan_offset = 0
    failures = []
    replans = 0
    solve_seconds = 0.0
    for t in range(T):
        if t % replan_every == 0 or plan is None:
            try:
                sub = aggregate_problem(slice_problem(problem, t, states[t]))
                prepared = _prepare_subgame(sub)
                report = run_dual_ascent(prepared, options)
                plan = report.policy
                plan_offset = t
                replans += 1
                solve_seconds += report.solve_seconds
            except Exception as exc:   # noqa: BLE001 - recorded and survived
                failures.append((t, f"{type(exc).__name__}: {exc}"))
                if plan is None:
                    raise
        u_flat = plan.inputs_at(t - plan_offset, states[t])[0]
        u = u_flat.reshape(N, n_u)
        inputs[t] = u
        states[t + 1] = (problem.dyn.A[t] @ states[t]
                         + np.einsum("iab,ib->a", problem.dyn.B[t], u)
                         + factors[t] @ z[t])
    return MpcRun(states=states, inputs=inputs, failures=failures,
                  replans=replans, solve_seconds=solve_seconds)


def central_mpc(problem: GameProblem, seed, samples, replan_every=1,
                options: DualAscentOptions | None = None):
    """Seeded batch of MPC episodes; returns (RolloutBatch, failures, seconds/step).

    Episode s uses the same noise stream as rollout sample s, so game-policy
    and MPC statistics are paired across sample indices.
    """
    S = int(samples)
    runs = [None] * S

    def one(s):
        try:
            return central_mpc_run(problem, seed, s, replan_every, options)
        except Exception as exc:   # noqa: BLE001 - per-seed failure, recorded
            return (0, f"{type(exc).__name__}: {exc}")

    workers = max_threads()
    if workers > 1 and S > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            for s, run in enumerate(pool.map(one, range(S))):
                runs[s] = run
    else:
        for s in range(S):
            runs[s] = one(s)

    failures = []
    good = []
    for s, r in enumerate(runs):
        if isinstance(r, tuple):
            failures.append((s, r[0], r[1]))
        else:
            good.append((s, r))
            failures.extend((s, step, msg) for step, msg in r.failures)
    if not good:
        raise RuntimeError(f"all {S} MPC seeds failed; first: {failures[0][2]}")
    states = np.stack([r.states for _, r in good])
    inputs = np.stack([r.inputs for _, r in good])
    costs = realized_costs(problem, states, inputs)
    batch = RolloutBatch(states=states, inputs=inputs, costs=costs,
                         seed=int(seed), method="central_mpc")
    total_replans = sum(r.replans for _, r in good)
    sec_per_step = (sum(r.solve_seconds for _, r in good) / total_replans
                    if total_replans else 0.0)
    return batch, failures, sec_per_step


# ---------------------------------------------------------------------------
# CSV output

STATS_HEADER = ["method", "samples", "seed", "cost_mean", "cost_std",
                "travel_mean_s", "collision_rate", "wilson_lo", "wilson_hi"]


def format_stats_row(row: dict) -> str:
    return ",".join(repr(row[k]) if isinstance(row[k], float) else str(row[k])
                    for k in STATS_HEADER)


def write_stats_csv(path, stats_rows):
    lines = [",".join(STATS_HEADER)]
    lines += [format_stats_row(r.csv_row() if isinstance(r, SafetyStats) else r)
              for r in stats_rows]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def dump_trajectories(dirpath, batch: RolloutBatch, problem: GameProblem):
    """One CSV per sample; unicycle scenarios use the t,agent,px,py,theta,v,a,omega schema."""
    os.makedirs(dirpath, exist_ok=True)
    abs_states = problem.to_absolute(batch.states)
    abs_inputs = batch.inputs + problem.nominal_inputs[None, :, :, :]
    unicycle = all(d == 4 for d in problem.state_dims) and batch.inputs.shape[3] == 2
    for s in range(batch.samples):
        lines = ["t,agent,px,py,theta,v,a,omega" if unicycle
                 else "t,agent," + ",".join(f"x{q}" for q in range(max(problem.state_dims)))
                 + "," + ",".join(f"u{q}" for q in range(batch.inputs.shape[3]))]
        for t in range(problem.T + 1):
            for i in range(problem.N):
                sl = problem.agent_slices[i]
                xs = abs_states[s, t, sl]
                us = abs_inputs[s, t - 1, i] if t >= 1 else np.zeros(batch.inputs.shape[3])
                vals = [repr(float(v)) for v in list(xs) + list(us)]
                lines.append(f"{t},{i}," + ",".join(vals))
        with open(os.path.join(dirpath, f"sample_{s:05d}.csv"), "w",
                  encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")
