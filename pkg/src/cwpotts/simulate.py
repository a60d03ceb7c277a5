"""Monte Carlo simulation of the Glauber dynamics.

The lumped chain on colour counts is simulated by a compiled kernel that
consumes exactly one uniform per step (inverse CDF over the q*q moves), so a
bounded run and an unbounded run driven by the same stream agree until the
first rejected move.  The configuration-level step is kept for small checks and
for code paths where vertex identity matters.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from .model import (InvalidInput, ModelParams, ProportionsVector, proportions_of,
                    site_update_distribution)

BLOCK = 1 << 16


def trial_rng(seed: int, trial: int) -> np.random.Generator:
    """Independent counter-based stream for one trial."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed) & (2**64 - 1), int(trial)])))


@dataclass(frozen=True)
class RunSpec:
    params: ModelParams
    start: object = "monochromatic"
    steps: int = 0
    seed: int = 0
    trials: int = 1
    bounded_rho: float | None = None
    record_every: int | None = None
    watch_coordinate: int = 0
    watch_thresholds: tuple = ()
    stop_when_hit: bool = False  # end a trial early once every watched threshold is reached

    def __post_init__(self):
        if self.steps < 0:
            raise InvalidInput("steps must be >= 0")
        if self.trials < 1:
            raise InvalidInput("trials must be >= 1")
        if self.record_every is not None and self.record_every < 1:
            raise InvalidInput("record_every must be >= 1")
        if self.bounded_rho is not None and self.bounded_rho <= 0:
            raise InvalidInput("bounded_rho must be positive")

    @property
    def stride(self) -> int:
        if self.record_every is not None:
            return self.record_every
        return max(1, self.steps // 10_000)

    def start_counts(self) -> np.ndarray:
        q, n = self.params.q, self.params.n
        st = self.start
        if isinstance(st, str):
            if st == "monochromatic":
                return np.asarray(ProportionsVector.monochromatic(q, n).counts, dtype=np.int64)
            if st == "equiproportional":
                return np.asarray(ProportionsVector.equiproportional(q, n).counts, dtype=np.int64)
            raise InvalidInput(f"unknown start {st!r}")
        if isinstance(st, ProportionsVector):
            c = np.asarray(st.counts, dtype=np.int64)
        else:  # a configuration; only its colour counts matter for the lumped chain
            c = np.asarray(proportions_of(st, self.params).counts, dtype=np.int64)
        if c.size != q or c.sum() != n:
            raise InvalidInput("start does not match (q, n)")
        return c


@dataclass
class Trajectory:
    times: np.ndarray
    counts: np.ndarray  # (T, q)
    hits: dict = field(default_factory=dict)  # threshold -> first passage time or None
    n: int = 1

    @property
    def proportions(self) -> np.ndarray:
        return self.counts / self.n

    @property
    def final(self) -> np.ndarray:
        return self.counts[-1]


# ---------------------------------------------------------------- compiled kernels

@numba.njit(cache=True, nogil=True)
def _choose_move(c, n, beta, u, w):
    """Map one uniform to a move (i, j) with probability s_i g_j(s - e_i/n)."""
    q = c.shape[0]
    m = -1e300
    for k in range(q):
        x = 2.0 * beta * c[k] / n
        if x > m:
            m = x
    W = 0.0
    for k in range(q):
        w[k] = math.exp(2.0 * beta * c[k] / n - m)
        W += w[k]
    f = math.exp(-2.0 * beta / n)
    acc = 0.0
    i_last = -1
    for i in range(q):
        if c[i] == 0:
            continue
        i_last = i
        pi = c[i] / n
        if u >= acc + pi:
            acc += pi
            continue
        # conditional on colour i, pick j by the shifted tilt
        v = (u - acc) / pi
        Z = W - w[i] * (1.0 - f)
        cum = 0.0
        for j in range(q):
            wj = w[j] * f if j == i else w[j]
            cum += wj / Z
            if v < cum:
                return i, j
        return i, i  # only reachable through rounding: stay
    return i_last, i_last


@numba.njit(cache=True, nogil=True)
def _run_block(c, n, beta, us, bound, t0, stride, rec_t, rec_c, nrec,
               watch_k, thr, direction, tau):
    """Advance counts ``c`` in place through ``len(us)`` steps.

    bound <= 0 disables the rho-bounded rejection; otherwise a move that puts
    any count at or above ``bound`` is rejected.  Records every ``stride``
    steps into rec_t / rec_c starting at position ``nrec``; returns the new
    record count.  First-passage times of coordinate ``watch_k`` across the
    thresholds are written into ``tau`` (-1 while unresolved).
    """
    q = c.shape[0]
    w = np.empty(q)
    for s in range(us.shape[0]):
        i, j = _choose_move(c, n, beta, us[s], w)
        if i != j:
            if bound > 0 and c[j] + 1 >= bound:
                pass
            else:
                c[i] -= 1
                c[j] += 1
        t = t0 + s + 1
        x = c[watch_k] / n
        for h in range(thr.shape[0]):
            if tau[h] < 0:
                if (direction[h] > 0 and x >= thr[h]) or (direction[h] < 0 and x <= thr[h]):
                    tau[h] = t
        if t % stride == 0:
            rec_t[nrec] = t
            for k in range(q):
                rec_c[nrec, k] = c[k]
            nrec += 1
    return nrec


@numba.njit(cache=True, nogil=True)
def _kn_block(c, n, beta, us, y, t_stop, t0, state):
    """K_n bookkeeping: max over steps of D(S^1) minus the exact drift, stop at S^1 <= y.

    ``state`` = [max_gap, stopped_flag].  The gap is evaluated at the current
    state before each move, including the state at which S^1 first reaches y.
    """
    q = c.shape[0]
    w = np.empty(q)
    f = math.exp(-2.0 * beta / n)
    for s in range(us.shape[0]):
        t = t0 + s
        if state[1] > 0 or t > t_stop:
            state[1] = 1.0
            return
        x = c[0] / n
        # exact conditional drift of coordinate 0
        m = -1e300
        for k in range(q):
            v = 2.0 * beta * c[k] / n
            if v > m:
                m = v
        W = 0.0
        for k in range(q):
            w[k] = math.exp(2.0 * beta * c[k] / n - m)
            W += w[k]
        dr = -x
        for i in range(q):
            if c[i] == 0:
                continue
            Z = W - w[i] * (1.0 - f)
            w0 = w[0] * f if i == 0 else w[0]
            dr += (c[i] / n) * w0 / Z
        E = math.exp(2.0 * beta * (1.0 - q * x) / (q - 1))
        D = -x + 1.0 / (1.0 + (q - 1) * E)
        if D - dr > state[0]:
            state[0] = D - dr
        if x <= y:
            state[1] = 1.0
            return
        i, j = _choose_move(c, n, beta, us[s], w)
        if i != j:
            c[i] -= 1
            c[j] += 1


# ---------------------------------------------------------------- single steps

def glauber_step(config: Sequence[int], rng: np.random.Generator, params: ModelParams) -> np.ndarray:
    """Resample one uniformly chosen vertex from its heat-bath conditional."""
    a = np.array(config, dtype=np.int64)
    counts = np.bincount(a, minlength=params.q)
    u = int(rng.integers(params.n))
    p = site_update_distribution(counts, int(a[u]), params)
    a[u] = int(rng.choice(params.q, p=p))
    return a


def proportions_step(s, rng: np.random.Generator, params: ModelParams, bounded_rho: float | None = None) -> np.ndarray:
    """One step of the lumped chain from counts ``s`` (optionally rho-bounded)."""
    c = np.array(getattr(s, "counts", s), dtype=np.int64)
    bound = _bound(params, bounded_rho)
    if bound > 0 and np.any(c >= bound):
        raise InvalidInput("bounded start lies outside the allowed region")
    w = np.empty(params.q)
    i, j = _choose_move(c, float(params.n), params.beta, rng.random(), w)
    if i != j and not (bound > 0 and c[j] + 1 >= bound):
        c[i] -= 1
        c[j] += 1
    return c


def _bound(params: ModelParams, rho: float | None) -> float:
    """Count threshold n(1/q + rho) for the rejection rule, or 0 when unbounded."""
    if rho is None:
        return 0.0
    return params.n * (1.0 / params.q + rho)


# ---------------------------------------------------------------- trajectories

def _directions(c0: np.ndarray, n: int, k: int, thresholds) -> np.ndarray:
    x0 = c0[k] / n
    return np.array([1 if t >= x0 else -1 for t in thresholds], dtype=np.int64)


def simulate_trial(spec: RunSpec, trial: int) -> Trajectory:
    p = spec.params
    c = spec.start_counts().copy()
    bound = _bound(p, spec.bounded_rho)
    if bound > 0 and np.any(c >= bound):
        raise InvalidInput("bounded start lies outside the allowed region")
    rng = trial_rng(spec.seed, trial)
    stride = spec.stride
    nmax = spec.steps // stride + 1
    rec_t = np.empty(nmax + 1, dtype=np.int64)
    rec_c = np.empty((nmax + 1, p.q), dtype=np.int64)
    rec_t[0] = 0
    rec_c[0] = c
    nrec = 1
    thr = np.asarray(spec.watch_thresholds, dtype=float)
    direction = _directions(c, p.n, spec.watch_coordinate, thr)
    tau = np.full(thr.size, -1, dtype=np.int64)
    x0 = c[spec.watch_coordinate] / p.n
    for h in range(thr.size):
        if (direction[h] > 0 and x0 >= thr[h]) or (direction[h] < 0 and x0 <= thr[h]):
            tau[h] = 0
    done = 0
    while done < spec.steps:
        m = min(BLOCK, spec.steps - done)
        us = rng.random(m)
        nrec = _run_block(c, float(p.n), p.beta, us, bound, done, stride, rec_t, rec_c, nrec,
                          spec.watch_coordinate, thr, direction, tau)
        done += m
        if spec.stop_when_hit and thr.size and np.all(tau >= 0):
            break
    times, counts = rec_t[:nrec], rec_c[:nrec]
    if times[-1] != done:
        times = np.append(times, done)
        counts = np.vstack([counts, c])
    hits = {float(t): (int(v) if v >= 0 else None) for t, v in zip(thr, tau)}
    return Trajectory(times.copy(), counts.copy(), hits, p.n)


def run_trajectories(spec: RunSpec, threads: int = 1) -> list[Trajectory]:
    """All trials of a spec; trial k always uses the stream derived from (seed, k)."""
    if threads <= 1 or spec.trials == 1:
        return [simulate_trial(spec, k) for k in range(spec.trials)]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(lambda k: simulate_trial(spec, k), range(spec.trials)))


def hitting_times(traj: Trajectory, k: int, thresholds) -> dict:
    """First recorded times at which S^k reaches each threshold.

    A threshold at or above the starting value is approached from below
    (first t with S^k >= x), otherwise from above (first t with S^k <= x).
    Thresholds never reached map to None.  Exact when the trajectory was
    recorded at every step.
    """
    x = traj.counts[:, k] / traj.n
    out = {}
    for thr in thresholds:
        if not 0 <= thr <= 1:
            raise InvalidInput("thresholds must lie in [0, 1]")
        hit = x >= thr if thr >= x[0] else x <= thr
        idx = np.flatnonzero(hit)
        out[float(thr)] = int(traj.times[idx[0]]) if idx.size else None
    return out


def drift_sharpness_Kn(spec: RunSpec, y: float, delta: float, t: int) -> float:
    """Fraction of trials in which D(S^1) exceeds the exact drift by more than ``delta``
    at some time up to min(t, first time S^1 <= y)."""
    p = spec.params
    if y <= 1.0 / p.q:
        raise InvalidInput("y must exceed 1/q")
    exceed = 0
    for trial in range(spec.trials):
        c = np.asarray(ProportionsVector.monochromatic(p.q, p.n).counts, dtype=np.int64).copy()
        rng = trial_rng(spec.seed, trial)
        state = np.array([-np.inf, 0.0])
        done = 0
        while state[1] == 0 and done <= t:
            m = min(BLOCK, t + 1 - done)
            _kn_block(c, float(p.n), p.beta, rng.random(m), y, t, done, state)
            done += m
        if state[0] > delta:
            exceed += 1
    return exceed / spec.trials


@dataclass
class MomentProfile:
    times: np.ndarray
    mean: np.ndarray  # (T, q)
    var: np.ndarray  # (T, q)
    mean_se: np.ndarray
    var_se: np.ndarray
    sq_norm_centered: np.ndarray  # E ||S_t - 1/q||^2 per time
    sq_norm_se: np.ndarray
    trials: int


def moment_profile(spec: RunSpec, threads: int = 1) -> MomentProfile:
    if spec.trials < 30:
        raise InvalidInput("moment profiles need at least 30 trials")
    trajs = run_trajectories(spec, threads)
    S = np.stack([tr.proportions for tr in trajs])  # (trials, T, q)
    m = spec.trials
    mean = S.mean(axis=0)
    var = S.var(axis=0, ddof=1)
    sq = ((S - 1.0 / spec.params.q) ** 2).sum(axis=2)
    return MomentProfile(trajs[0].times, mean, var, np.sqrt(var / m), var * math.sqrt(2.0 / (m - 1)),
                         sq.mean(axis=0), sq.std(axis=0, ddof=1) / math.sqrt(m), m)

