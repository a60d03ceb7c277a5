"""Couplings of two copies of the Glauber dynamics.

Single-draw primitives (best coupling, A-semi-independent coupling), the
pair processes built from them (independent, coordinate-wise, synchronized,
basket-wise), the staged overall coupling, and the coalescence-based upper
bound on total variation.

Pair processes run at the configuration level because the basket-wise stage
needs vertex identity.  Each side always moves by "pick a colour I with
probability S^I, recolour a uniform vertex of colour I with a colour drawn
from g(S - e_I/n)", which is exactly one Glauber step, so every coupling here
has the right marginals.
"""
from __future__ import annotations

import math
from bisect import bisect_left, insort
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.stats import binomtest

from .constants import alpha1
from .exact import enumerate_states, stationary_distribution
from .model import InvalidInput, ModelParams, tilt

# ---------------------------------------------------------------- draws from uniforms


def _inv_cdf(p: Sequence[float], u: float) -> int:
    """Smallest index whose cumulative mass exceeds u (last positive index on round-off)."""
    acc = 0.0
    last = 0
    for k, pk in enumerate(p):
        if pk > 0:
            last = k
            acc += pk
            if u < acc:
                return k
    return last


def _best_couple(p, pt, u0: float, u1: float, u2: float):
    """Overlap/residual best coupling driven by three uniforms."""
    q = len(p)
    ov = [min(p[k], pt[k]) for k in range(q)]
    w = sum(ov)
    if u0 < w:
        x = _inv_cdf([o / w for o in ov], u1)
        return x, x
    r = 1.0 - w
    x = _inv_cdf([(p[k] - ov[k]) / r for k in range(q)], u1)
    xt = _inv_cdf([(pt[k] - ov[k]) / r for k in range(q)], u2)
    return x, xt


def _conditional(p, members: Sequence[bool]):
    m = sum(pk for pk, inside in zip(p, members) if inside)
    if m <= 0:
        return None, 0.0
    return [pk / m if inside else 0.0 for pk, inside in zip(p, members)], m


def _semi_couple(p, pt, A: Sequence[bool], u: float, u1: float, u2: float, u3: float):
    """A-semi-independent coupling driven by four uniforms (``u`` is the shared one)."""
    pA, mA = _conditional(p, A)
    ptA, mtA = _conditional(pt, A)
    if u <= min(mA, mtA) and mA > 0 and mtA > 0:
        return _best_couple(pA, ptA, u1, u2, u3)
    notA = [not a for a in A]
    if u < mA:
        x = _inv_cdf(pA, u1)
    else:
        x = _inv_cdf(_conditional(p, notA)[0], u1)
    if u < mtA:
        xt = _inv_cdf(ptA, u2)
    else:
        xt = _inv_cdf(_conditional(pt, notA)[0], u2)
    return x, xt


def _best_couple_batch(P: np.ndarray, Pt: np.ndarray, U: np.ndarray):
    """Vectorised best coupling: rows of P and Pt are distributions, U has 3 columns."""
    ov = np.minimum(P, Pt)
    w = ov.sum(axis=1)
    same = U[:, 0] < w
    wsafe = np.where(w > 0, w, 1.0)[:, None]
    rsafe = np.where(w < 1, 1.0 - w, 1.0)[:, None]
    x_same = _inv_cdf_batch(ov / wsafe, U[:, 1])
    x = _inv_cdf_batch((P - ov) / rsafe, U[:, 1])
    xt = _inv_cdf_batch((Pt - ov) / rsafe, U[:, 2])
    x = np.where(same, x_same, x)
    xt = np.where(same, x_same, xt)
    return x, xt


def _inv_cdf_batch(P: np.ndarray, u: np.ndarray) -> np.ndarray:
    cum = np.cumsum(P, axis=1)
    idx = (u[:, None] >= cum).sum(axis=1)
    # round-off: fall back on the last index with positive mass
    last = P.shape[1] - 1 - np.argmax((P > 0)[:, ::-1], axis=1)
    return np.minimum(idx, last)


def maximal_coupling_sample(nu, nu_tilde, rng: np.random.Generator, size: int | None = None):
    """Draw (X, X~) with X ~ nu, X~ ~ nu_tilde and P(X != X~) = TV(nu, nu_tilde)."""
    nu = np.asarray(nu, dtype=float)
    nut = np.asarray(nu_tilde, dtype=float)
    m = 1 if size is None else int(size)
    U = rng.random((m, 3))
    x, xt = _best_couple_batch(np.broadcast_to(nu, (m, nu.size)), np.broadcast_to(nut, (m, nut.size)), U)
    if size is None:
        return int(x[0]), int(xt[0])
    return x, xt


def semi_independent_sample(nu, nu_tilde, A: Iterable[int], rng: np.random.Generator, size: int | None = None):
    """Draw from the A-semi-independent coupling; vectorised over ``size`` draws."""
    nu = np.asarray(nu, dtype=float)
    nut = np.asarray(nu_tilde, dtype=float)
    q = nu.size
    inA = np.zeros(q, dtype=bool)
    inA[list(A)] = True
    m = 1 if size is None else int(size)
    U = rng.random((m, 4))
    mA, mtA = nu[inA].sum(), nut[inA].sum()
    x = np.empty(m, dtype=np.int64)
    xt = np.empty(m, dtype=np.int64)
    joint = (U[:, 0] <= min(mA, mtA)) & (mA > 0) & (mtA > 0)
    if joint.any():
        pA = np.where(inA, nu, 0) / mA
        ptA = np.where(inA, nut, 0) / mtA
        k = int(joint.sum())
        a, b = _best_couple_batch(np.broadcast_to(pA, (k, q)), np.broadcast_to(ptA, (k, q)), U[joint, 1:4])
        x[joint], xt[joint] = a, b
    rest = ~joint
    if rest.any():
        for side, p, mass, col, out in ((0, nu, mA, 1, x), (1, nut, mtA, 2, xt)):
            useA = rest & (U[:, 0] < mass)
            useC = rest & ~useA
            if useA.any():
                cond = np.where(inA, p, 0) / mass
                out[useA] = _inv_cdf_batch(np.broadcast_to(cond, (int(useA.sum()), q)), U[useA, col])
            if useC.any():
                cond = np.where(~inA, p, 0) / (1.0 - mass)
                out[useC] = _inv_cdf_batch(np.broadcast_to(cond, (int(useC.sum()), q)), U[useC, col])
    if size is None:
        return int(x[0]), int(xt[0])
    return x, xt


# ---------------------------------------------------------------- configuration-level pairs


class _Uniforms:
    """Buffered stream of U(0,1) draws from a numpy Generator."""

    def __init__(self, rng: np.random.Generator, block: int = 8192):
        self.rng = rng
        self.block = block
        self.buf = rng.random(block).tolist()
        self.i = 0

    def __call__(self) -> float:
        if self.i == self.block:
            self.buf = self.rng.random(self.block).tolist()
            self.i = 0
        u = self.buf[self.i]
        self.i += 1
        return u


class _Chain:
    """A configuration with per-(basket, colour) vertex pools kept sorted by vertex index."""

    def __init__(self, colors, q: int, basket=None):
        self.q = q
        self.colors = [int(c) for c in colors]
        self.n = len(self.colors)
        self.counts = [0] * q
        for c in self.colors:
            self.counts[c] += 1
        self.set_baskets(basket)

    def set_baskets(self, basket):
        self.basket = [0] * self.n if basket is None else [int(b) for b in basket]
        self.nb = max(self.basket) + 1
        self.pools = [[[] for _ in range(self.q)] for _ in range(self.nb)]
        for v, (b, c) in enumerate(zip(self.basket, self.colors)):
            self.pools[b][c].append(v)  # v increasing, so already sorted
        self.bcounts = [[len(self.pools[b][k]) for k in range(self.q)] for b in range(self.nb)]

    def props(self):
        return [c / self.n for c in self.counts]

    def pick(self, color: int, u: float, first_basket: int = 0):
        """Uniform vertex of ``color`` among baskets >= first_basket; returns (vertex, basket, rank)."""
        total = sum(self.bcounts[b][color] for b in range(first_basket, self.nb))
        r = min(int(u * total), total - 1)
        return self.at_rank(color, r, first_basket)

    def pick_in(self, color: int, u: float, basket: int):
        """Uniform vertex of ``color`` inside one basket."""
        pool = self.pools[basket][color]
        r = min(int(u * len(pool)), len(pool) - 1)
        return pool[r], basket, r

    def at_rank(self, color: int, r: int, first_basket: int = 0):
        rank = r
        for b in range(first_basket, self.nb):
            k = self.bcounts[b][color]
            if r < k:
                return self.pools[b][color][r], b, rank
            r -= k
        raise IndexError("rank beyond the pool")

    def recolor(self, v: int, new: int):
        old = self.colors[v]
        if old == new:
            return
        b = self.basket[v]
        pool = self.pools[b][old]
        del pool[bisect_left(pool, v)]
        insort(self.pools[b][new], v)
        self.bcounts[b][old] -= 1
        self.bcounts[b][new] += 1
        self.counts[old] -= 1
        self.counts[new] += 1
        self.colors[v] = new

    def update_law(self, i: int, beta: float):
        s = [c / self.n for c in self.counts]
        s[i] -= 1.0 / self.n
        return tilt(np.array(s), beta).tolist()

    def glauber(self, u: Callable[[], float], beta: float):
        i = _inv_cdf(self.props(), u())
        j = _inv_cdf(self.update_law(i, beta), u())
        if j != i:
            v, _, _ = self.pick(i, u())
            self.recolor(v, j)


STAGES = ("independent", "coordinatewise", "synchronized", "basketwise", "done")


@dataclass
class CoupledState:
    """Two configurations of the same model advanced under a coupling."""

    params: ModelParams
    a: _Chain
    b: _Chain
    stage: str = "independent"
    sub_stage: int = 0
    t: int = 0

    @classmethod
    def from_configs(cls, sigma, sigma_tilde, params: ModelParams) -> "CoupledState":
        s, st = np.asarray(sigma), np.asarray(sigma_tilde)
        for x in (s, st):
            if x.size != params.n or x.min() < 0 or x.max() >= params.q:
                raise InvalidInput("configurations must have length n and colours in range(q)")
        return cls(params, _Chain(s, params.q), _Chain(st, params.q))

    @property
    def sigma(self) -> np.ndarray:
        return np.array(self.a.colors)

    @property
    def sigma_tilde(self) -> np.ndarray:
        return np.array(self.b.colors)

    @property
    def coalesced_S(self) -> bool:
        return self.a.counts == self.b.counts

    @property
    def coalesced_baskets(self) -> bool:
        return self.a.bcounts == self.b.bcounts

    def l1(self) -> float:
        return sum(abs(x - y) for x, y in zip(self.a.counts, self.b.counts)) / self.params.n

    def set_baskets(self, assignment):
        self.a.set_baskets(assignment)
        self.b.set_baskets(assignment)

    def basket_matrices(self):
        sizes = np.maximum([sum(row) for row in self.a.bcounts], 1)[:, None]
        M = np.array(self.a.bcounts, dtype=float) / sizes
        Mt = np.array(self.b.bcounts, dtype=float) / sizes
        return M, Mt

    # ---- single coupled steps; each consumes uniforms from ``u``

    def step_independent(self, u):
        beta = self.params.beta
        self.a.glauber(u, beta)
        self.b.glauber(u, beta)

    def _apply(self, chain: _Chain, i: int, j: int, u, bound: float):
        uu = u()  # drawn either way so stream usage does not depend on the outcome
        if i == j:
            return
        if bound and chain.counts[j] + 1 >= bound:
            return
        v, _, _ = chain.pick(i, uu)
        chain.recolor(v, j)

    def step_semi(self, u, A):
        beta = self.params.beta
        i, it = _semi_couple(self.a.props(), self.b.props(), A, u(), u(), u(), u())
        j, jt = _semi_couple(self.a.update_law(i, beta), self.b.update_law(it, beta), A, u(), u(), u(), u())
        self._apply(self.a, i, j, u, 0.0)
        self._apply(self.b, it, jt, u, 0.0)

    def step_synchronized(self, u, bound: float = 0.0):
        beta = self.params.beta
        i, it = _best_couple(self.a.props(), self.b.props(), u(), u(), u())
        j, jt = _best_couple(self.a.update_law(i, beta), self.b.update_law(it, beta), u(), u(), u())
        # sigma's move is checked and applied first, then sigma-tilde's
        self._apply(self.a, i, j, u, bound)
        self._apply(self.b, it, jt, u, bound)

    def step_basketwise(self, u, m: int):
        """One basket-wise step while basket ``m`` is the one being equalised.

        Requires equal colour counts; preserves them exactly.
        """
        beta = self.params.beta
        i = _inv_cdf(self.a.props(), u())
        j = _inv_cdf(self.a.update_law(i, beta), u())
        uv, ut = u(), u()
        if i == j:
            return "none"
        v, bv, _ = self.a.pick(i, uv)
        if bv < m:
            vt, _, _ = self.b.pick_in(i, ut, bv)
            case = "A"
        elif self.a.bcounts[m][i] != self.b.bcounts[m][i] and self.a.bcounts[m][j] != self.b.bcounts[m][j]:
            vt, _, _ = self.b.pick(i, ut, first_basket=m)
            case = "B"
        else:
            # same rank in the (basket, vertex index) enumeration of colour-i vertices in baskets >= m
            offset = sum(self.a.bcounts[b][i] for b in range(m, bv))
            pos = bisect_left(self.a.pools[bv][i], v)
            vt, _, _ = self.b.at_rank(i, offset + pos, first_basket=m)
            case = "C"
        self.a.recolor(v, j)
        self.b.recolor(vt, j)
        return case


def _as_stream(rng) -> _Uniforms:
    return rng if isinstance(rng, _Uniforms) else _Uniforms(rng)


def _rho_bound(params: ModelParams, rho: float | None) -> float:
    return 0.0 if rho is None else params.n * (1.0 / params.q + rho)


# ---------------------------------------------------------------- pair processes


def synchronized_run(pair: CoupledState, steps: int, rho: float | None, rng) -> np.ndarray:
    """Advance ``pair`` under the synchronized coupling; returns the l1 distance at t = 0..steps.

    With ``rho`` set, moves leaving {s : s^k < 1/q + rho} are rejected on each side.
    """
    bound = _rho_bound(pair.params, rho)
    if bound and (max(pair.a.counts) >= bound or max(pair.b.counts) >= bound):
        raise InvalidInput("start lies outside the rho-bounded region")
    u = _as_stream(rng)
    pair.stage = "synchronized"
    out = np.empty(steps + 1)
    out[0] = pair.l1()
    for t in range(steps):
        pair.step_synchronized(u, bound)
        pair.t += 1
        out[t + 1] = pair.l1()
    return out


@dataclass
class CoordinatewiseReport:
    stage_times: list  # T^(k) for k = 1..q-1 (None when the stage hit its cap)
    completed: bool
    gaps: list  # |S^k - S~^k| * n at the end
    final_l1: float
    final_sup_distance: float  # max over both chains of ||S - 1/q||_inf, scaled by sqrt(n)


def coordinatewise_run(pair: CoupledState, y: Sequence[float], stage_time_cap: int, rng) -> CoordinatewiseReport:
    """Coordinate-wise coupling: stage k pairs moves with the {colours < k}-semi-independent
    coupling until |S^k - S~^k| <= y_k / n.  Each stage may take at most ``stage_time_cap`` steps."""
    q, n = pair.params.q, pair.params.n
    if len(y) != q - 1 or any(v <= 0 for v in y):
        raise InvalidInput("need q - 1 positive thresholds")
    if stage_time_cap < 1:
        raise InvalidInput("cap must be >= 1")
    u = _as_stream(rng)
    pair.stage = "coordinatewise"
    times = []
    completed = True
    for k in range(q - 1):
        pair.sub_stage = k + 1
        A = [c < k for c in range(q)]
        steps = 0
        while abs(pair.a.counts[k] - pair.b.counts[k]) > y[k]:
            if steps >= stage_time_cap:
                break
            pair.step_semi(u, A)
            pair.t += 1
            steps += 1
        if abs(pair.a.counts[k] - pair.b.counts[k]) > y[k]:
            times.append(None)
            completed = False
            break
        times.append(steps)
    gaps = [abs(x - z) for x, z in zip(pair.a.counts, pair.b.counts)]
    sup = max(max(abs(c / n - 1 / q) for c in ch.counts) for ch in (pair.a, pair.b)) * math.sqrt(n)
    return CoordinatewiseReport(times, completed, gaps, pair.l1(), sup)


@dataclass
class BasketPartition:
    assignment: np.ndarray
    sizes: np.ndarray
    lam: float = 0.0

    @classmethod
    def from_colors(cls, colors, q: int, lam: float = 0.0) -> "BasketPartition":
        a = np.asarray(colors, dtype=np.int64)
        sizes = np.bincount(a, minlength=q)
        return cls(a, sizes, lam)

    def is_lambda_partition(self, lam: float) -> bool:
        return bool(self.sizes.min() > lam * self.assignment.size)


def basketwise_run(pair: CoupledState, baskets: BasketPartition | None, time_cap: int, rng,
                   check_invariants: bool = False):
    """Basket-wise coupling from a pair with equal colour counts.

    Returns (coalescence time or None, case counts).  Keeps S = S~ at every
    step; with ``check_invariants`` this and the persistence of equalised
    baskets are asserted after each step.
    """
    if not pair.coalesced_S:
        raise InvalidInput("basket-wise coupling needs equal colour counts")
    if baskets is not None:
        pair.set_baskets(baskets.assignment)
    u = _as_stream(rng)
    pair.stage = "basketwise"
    cases = {"A": 0, "B": 0, "C": 0, "none": 0}
    m = _first_unequal_basket(pair, 0)
    steps = 0
    while m < pair.a.nb:
        if steps >= time_cap:
            return None, cases
        pair.sub_stage = m + 1
        cases[pair.step_basketwise(u, m)] += 1
        pair.t += 1
        steps += 1
        if check_invariants:
            assert pair.a.counts == pair.b.counts, "colour counts diverged"
            for b in range(m):
                assert pair.a.bcounts[b] == pair.b.bcounts[b], "an equalised basket drifted"
        m = _first_unequal_basket(pair, m)
    pair.stage = "done"
    return steps, cases


def _first_unequal_basket(pair: CoupledState, start: int) -> int:
    m = start
    while m < pair.a.nb and pair.a.bcounts[m] == pair.b.bcounts[m]:
        m += 1
    return m


# ---------------------------------------------------------------- overall coupling


@dataclass(frozen=True)
class StageParams:
    """Budgets of the overall coupling; gammas are in units of n steps.

    Stage 2 lasts ``t2_factor * alpha1 * n log n`` steps.
    """

    gamma1: float = 10.0
    t2_factor: float = 1.0
    y: tuple | None = None
    gamma3: float = 10.0
    gamma4: float = 10.0
    gamma5: float = 10.0

    def thresholds(self, q: int) -> tuple:
        return tuple(self.y) if self.y is not None else (1.0,) * (q - 1)


class PiSampler:
    """Exact draws from the Gibbs measure: counts by inverse CDF over the lumped
    stationary law, then a uniformly random placement of the colours."""

    def __init__(self, params: ModelParams):
        self.params = params
        space = enumerate_states(params)
        self.states = space.states
        self.cdf = np.cumsum(stationary_distribution(space))

    def counts(self, rng: np.random.Generator) -> np.ndarray:
        idx = int(np.searchsorted(self.cdf, rng.random() * self.cdf[-1], side="right"))
        return self.states[min(idx, len(self.states) - 1)]

    def __call__(self, rng: np.random.Generator) -> np.ndarray:
        c = self.counts(rng)
        return rng.permutation(np.repeat(np.arange(self.params.q), c))


@dataclass
class CoalescenceReport:
    stage_ends: dict
    coalesced_S: bool
    coalesced_baskets: bool
    cap_exceeded: list
    total_steps: int
    mismatch_at: dict = field(default_factory=dict)  # time -> basket matrices differ


def overall_run(sigma0, params: ModelParams, stage_params: StageParams, pi_sampler, rng,
                record_times: Sequence[int] = (), horizon: int | None = None) -> CoalescenceReport:
    """Run the five-stage overall coupling from ``sigma0`` against a stationary copy.

    Stages: independent for gamma1*n; baskets frozen as the colour classes of
    sigma; independent for t2; coordinate-wise up to gamma3*n (ends early on
    success); synchronized until the counts agree (budget gamma4*n, overruns
    recorded); basket-wise until the basket matrices agree (budget gamma5*n).
    Each switch happens at a stopping time, so both sides remain Glauber
    chains throughout and the mismatch probability of the basket matrices at
    any time bounds the distance to stationarity.  Before the baskets exist
    the comparison is between colour counts.

    ``horizon`` (default: sum of all budgets) is the total number of steps;
    ``record_times`` are the times at which mismatch is recorded.
    """
    q, n = params.q, params.n
    t1 = int(round(stage_params.gamma1 * n))
    t2 = t1 + int(round(stage_params.t2_factor * alpha1(params.beta, q) * n * math.log(n)))
    cap3 = int(round(stage_params.gamma3 * n))
    cap4 = int(round(stage_params.gamma4 * n))
    cap5 = int(round(stage_params.gamma5 * n))
    if horizon is None:
        horizon = t2 + cap3 + cap4 + cap5
    record = sorted(set(int(t) for t in record_times if 0 <= t <= horizon))
    u = _Uniforms(rng)
    pair = CoupledState.from_configs(np.asarray(sigma0), pi_sampler(rng), params)
    A_k = [[c < k for c in range(q)] for k in range(q - 1)]
    y = stage_params.thresholds(q)
    ends: dict = {}
    caps: list = []
    mismatch: dict = {}
    rec_i = 0
    stage, k, stage_start = "independent", 0, 0

    def mism():
        return pair.a.bcounts != pair.b.bcounts

    t = 0
    while True:
        while rec_i < len(record) and record[rec_i] == t:
            mismatch[t] = mism()
            rec_i += 1
        # stage transitions (all decided from the present state and time only)
        if stage == "independent" and t == t1:
            pair.set_baskets(pair.sigma)
            ends["stage1"] = t
        if stage == "independent" and t >= t2:
            ends["stage2"] = t
            stage, k, stage_start = "coordinatewise", 0, t
        if stage == "coordinatewise":
            while k < q - 1 and abs(pair.a.counts[k] - pair.b.counts[k]) <= y[k]:
                k += 1
            if k == q - 1 or t - stage_start >= cap3:
                if k < q - 1:
                    caps.append("coordinatewise")
                ends["stage3"] = t
                stage, stage_start = "synchronized", t
        if stage == "synchronized":
            if pair.coalesced_S:
                ends["stage4"] = t
                stage, stage_start, k = "basketwise", t, 0
            elif t - stage_start == cap4:
                caps.append("synchronized")
        if stage == "basketwise":
            k = _first_unequal_basket(pair, k)
            if k >= pair.a.nb:
                ends["stage5"] = t
                stage = "done"
            elif t - stage_start == cap5:
                caps.append("basketwise")
        if t >= horizon:
            break
        if stage == "independent":
            pair.step_independent(u)
        elif stage == "coordinatewise":
            pair.step_semi(u, A_k[k])
        elif stage == "synchronized":
            pair.step_synchronized(u)
        elif stage == "basketwise":
            pair.step_basketwise(u, k)
        else:  # done: keep the basket matrices glued
            pair.step_basketwise(u, pair.a.nb)
        t += 1
    return CoalescenceReport(ends, pair.coalesced_S, pair.coalesced_baskets, caps, t, mismatch)


@dataclass
class TVCurve:
    times: np.ndarray
    bound: np.ndarray  # fraction of runs not coalesced
    lo: np.ndarray
    hi: np.ndarray
    trials: int
    confidence: float


def wilson_interval(k: int, m: int, confidence: float):
    ci = binomtest(k, m).proportion_ci(confidence_level=confidence, method="wilson")
    return ci.low, ci.high


def coupling_tv_curve(sigma0, params: ModelParams, times: Sequence[int], trials: int, seed: int,
                      stage_params: StageParams = StageParams(), confidence: float = 0.9973) -> TVCurve:
    """Estimate P(basket matrices differ at t) over independent overall-coupling runs.

    Run k uses the stream derived from (seed, k).  The default confidence
    level is the two-sided 3-sigma Wilson interval.
    """
    from .simulate import trial_rng

    times = np.asarray(sorted(set(int(t) for t in times)))
    sampler = PiSampler(params)
    horizon = int(times.max())
    fails = np.zeros(times.size, dtype=np.int64)
    for trial in range(trials):
        rep = overall_run(sigma0, params, stage_params, sampler, trial_rng(seed, trial),
                          record_times=times, horizon=horizon)
        fails += np.array([rep.mismatch_at[int(t)] for t in times], dtype=np.int64)
    lo, hi = zip(*(wilson_interval(int(f), trials, confidence) for f in fails))
    return TVCurve(times, fails / trials, np.array(lo), np.array(hi), trials, confidence)


# ---------------------------------------------------------------- vectorised lumped synchronized coupling


def synchronized_l1_batch(c0, ct0, params: ModelParams, steps: int, pairs: int, seed: int,
                          rho: float | None = None) -> np.ndarray:
    """Mean l1 distance E||S_t - S~_t|| for t = 0..steps over many synchronized pairs.

    Works on colour counts only, which is all the l1 distance depends on.
    """
    q, n, beta = params.q, params.n, params.beta
    from .simulate import trial_rng

    rng = trial_rng(seed, 0)
    C = np.tile(np.asarray(c0, dtype=np.int64), (pairs, 1))
    Ct = np.tile(np.asarray(ct0, dtype=np.int64), (pairs, 1))
    bound = _rho_bound(params, rho)
    rows = np.arange(pairs)
    out = np.empty(steps + 1)
    out[0] = np.abs(C - Ct).sum(axis=1).mean() / n
    for t in range(steps):
        U = rng.random((pairs, 6))
        I, It = _best_couple_batch(C / n, Ct / n, U[:, :3])
        sh = C.astype(float)
        sh[rows, I] -= 1
        sht = Ct.astype(float)
        sht[rows, It] -= 1
        J, Jt = _best_couple_batch(tilt(sh / n, beta), tilt(sht / n, beta), U[:, 3:])
        for M, a, b in ((C, I, J), (Ct, It, Jt)):
            move = a != b
            if bound:
                move &= M[rows, b] + 1 < bound
            M[rows[move], a[move]] -= 1
            M[rows[move], b[move]] += 1
        out[t + 1] = np.abs(C - Ct).sum(axis=1).mean() / n
    return out
