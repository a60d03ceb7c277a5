"""Exact lumped chain on colour counts.

Everything here is deterministic linear algebra: the state space of all
compositions of ``n`` into ``q`` parts, the stationary law, the transition
kernel, distribution evolution and total-variation profiles, restricted-start
profiles, half-line bottleneck ratios, and a brute-force configuration chain
used as an oracle for the lumping.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.special import gammaln, logsumexp

from .model import InvalidInput, ModelParams, TooLarge, tilt

log = logging.getLogger(__name__)

STATE_CAP = 2_000_000
MATERIALIZE_CAP = 100_000
SCAN_ALL_CAP = 5_000
RENORM_TOL = 1e-10
FULL_RECORD_STEPS = 100_000


def n_states(q: int, n: int) -> int:
    return math.comb(n + q - 1, q - 1)


def _compositions(n: int, q: int) -> np.ndarray:
    """All compositions of n into q parts, first coordinate descending, then the next..."""
    if q == 1:
        return np.array([[n]], dtype=np.int64)
    blocks = []
    for first in range(n, -1, -1):
        rest = _compositions(n - first, q - 1)
        blocks.append(np.column_stack([np.full(len(rest), first, dtype=np.int64), rest]))
    return np.vstack(blocks)


def _rank(counts: np.ndarray, n: int) -> np.ndarray:
    """Position of each row of ``counts`` in the enumeration order of ``_compositions``.

    Compositions ahead of ``c`` that share its first ``k`` entries have a larger
    k-th entry; there are C(m - c_k - 1 + r - 1, r - 1) of them, where m is the
    mass left and r = q - k the number of parts left.
    """
    counts = np.atleast_2d(counts)
    q = counts.shape[1]
    rank = np.zeros(counts.shape[0], dtype=np.int64)
    left = np.full(counts.shape[0], n, dtype=np.int64)
    for k in range(q - 1):
        r = q - k
        top = left - counts[:, k] - 1  # mass to distribute once the k-th part exceeds c_k
        ok = top >= 0
        # C(top + r - 1, r - 1), exact in integers
        vals = np.zeros_like(top)
        t = top[ok]
        acc = np.ones_like(t)
        for j in range(1, r):
            acc = acc * (t + j) // j
        vals[ok] = acc
        rank += vals
        left = left - counts[:, k]
    return rank


@dataclass(frozen=True, eq=False)
class StateSpace:
    params: ModelParams
    states: np.ndarray  # (N, q) int64 counts, read-only

    def __len__(self):
        return self.states.shape[0]

    def index(self, counts) -> int:
        c = np.asarray(counts, dtype=np.int64)
        if c.shape != (self.params.q,) or c.sum() != self.params.n or np.any(c < 0):
            raise InvalidInput(f"{tuple(c)} is not a state of this space")
        return int(_rank(c[None, :], self.params.n)[0])

    def indices(self, counts: np.ndarray) -> np.ndarray:
        return _rank(np.asarray(counts, dtype=np.int64), self.params.n)

    @property
    def proportions(self) -> np.ndarray:
        return self.states / self.params.n

    def monochromatic_index(self, color: int = 0) -> int:
        c = np.zeros(self.params.q, dtype=np.int64)
        c[color] = self.params.n
        return self.index(c)


def enumerate_states(params: ModelParams, cap: int = STATE_CAP) -> StateSpace:
    size = n_states(params.q, params.n)
    if size > cap:
        raise TooLarge(f"{size} states exceed the cap {cap}")
    st = _compositions(params.n, params.q)
    st.setflags(write=False)
    return StateSpace(params, st)


def log_stationary_weights(space: StateSpace) -> np.ndarray:
    n, beta = space.params.n, space.params.beta
    c = space.states
    log_multi = gammaln(n + 1) - gammaln(c + 1).sum(axis=1)
    return log_multi + beta * (c * c).sum(axis=1) / n


def stationary_distribution(space: StateSpace) -> np.ndarray:
    lw = log_stationary_weights(space)
    return np.exp(lw - logsumexp(lw))


def _move_table(space: StateSpace, rows: slice | None = None):
    """For each state and each ordered pair (i, j): move probability and target index.

    Returns arrays of shape (m, q, q): ``prob[s, i, j] = s_i g_j(s - e_i/n)`` and
    the index of ``c - e_i + e_j`` (the state itself when i == j).
    """
    q, n, beta = space.params.q, space.params.n, space.params.beta
    c = space.states if rows is None else space.states[rows]
    m = c.shape[0]
    prob = np.zeros((m, q, q))
    dest = np.zeros((m, q, q), dtype=np.int64)
    own = space.indices(c) if rows is not None else np.arange(m)
    for i in range(q):
        shifted = c.astype(float)
        shifted[:, i] -= 1.0
        g = tilt(shifted / n, beta)
        prob[:, i, :] = (c[:, i] / n)[:, None] * g
        for j in range(q):
            if j == i:
                dest[:, i, j] = own
                continue
            tgt = c.copy()
            has = tgt[:, i] > 0
            tgt[has, i] -= 1
            tgt[has, j] += 1
            d = np.where(has, 0, own)
            d[has] = space.indices(tgt[has])
            dest[:, i, j] = d
    return prob, dest


def transition_row(s, params: ModelParams) -> dict:
    """Sparse one-step law from counts ``s``: mapping target counts -> probability."""
    c = np.asarray(getattr(s, "counts", s), dtype=np.int64)
    q, n = params.q, params.n
    if c.shape != (q,) or c.sum() != n or np.any(c < 0):
        raise InvalidInput(f"invalid counts {tuple(c)}")
    out: dict = {}
    stay = 0.0
    for i in range(q):
        if c[i] == 0:
            continue
        shifted = c.astype(float)
        shifted[i] -= 1.0
        g = tilt(shifted / n, params.beta)
        for j in range(q):
            p = c[i] / n * g[j]
            if j == i:
                stay += p
            else:
                t = c.copy()
                t[i] -= 1
                t[j] += 1
                out[tuple(int(v) for v in t)] = out.get(tuple(int(v) for v in t), 0.0) + p
    out[tuple(int(v) for v in c)] = stay
    return out


def transition_matrix(space: StateSpace) -> sparse.csr_matrix:
    prob, dest = _move_table(space)
    N, q = len(space), space.params.q
    rows = np.repeat(np.arange(N), q * q)
    P = sparse.coo_matrix((prob.ravel(), (rows, dest.ravel())), shape=(N, N)).tocsr()
    P.sum_duplicates()
    return P


class Kernel:
    """Applies the lumped kernel to distributions (row vectors, or columns of a matrix).

    Materialises the sparse transpose when the space is small enough; above
    ``materialize_cap`` states it recomputes move probabilities block by block
    on every application, keeping memory linear in the number of states.
    """

    def __init__(self, space: StateSpace, materialize_cap: int = MATERIALIZE_CAP, block: int = 50_000):
        self.space = space
        self.block = block
        self.materialized = len(space) <= materialize_cap
        if self.materialized:
            self.PT = transition_matrix(space).T.tocsr()

    def apply(self, dist: np.ndarray) -> np.ndarray:
        if self.materialized:
            return self.PT @ dist
        N = len(self.space)
        out = np.zeros_like(dist)
        for lo in range(0, N, self.block):
            sl = slice(lo, min(N, lo + self.block))
            prob, dest = _move_table(self.space, sl)
            src = dist[sl]
            if dist.ndim == 1:
                w = (prob * src[:, None, None]).ravel()
                out += np.bincount(dest.ravel(), weights=w, minlength=N)
            else:
                for col in range(dist.shape[1]):
                    w = (prob * src[:, col][:, None, None]).ravel()
                    out[:, col] += np.bincount(dest.ravel(), weights=w, minlength=N)
        return out


@dataclass
class _MassGuard:
    corrections: int = 0
    max_drift: float = 0.0

    def check(self, dist: np.ndarray) -> np.ndarray:
        tot = dist.sum(axis=0)
        err = np.max(np.abs(tot - 1.0))
        self.max_drift = max(self.max_drift, float(err))
        if err > RENORM_TOL:
            self.corrections += 1
            log.info("renormalising distribution, mass error %.3e", err)
            return dist / tot
        return dist


def evolve_distribution(dist: np.ndarray, steps: int, space: StateSpace, kernel: Kernel | None = None) -> np.ndarray:
    if steps < 0:
        raise InvalidInput("steps must be >= 0")
    kernel = kernel or Kernel(space)
    guard = _MassGuard()
    v = np.array(dist, dtype=float)
    for _ in range(steps):
        v = guard.check(kernel.apply(v))
    return v


def tv_distance(p: np.ndarray, q: np.ndarray) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


@dataclass
class MixingProfile:
    """TV distance to stationarity as a function of time.

    ``times`` and ``d`` hold the recorded points (every step unless the run is
    long); ``t_mix`` maps each epsilon to its first crossing time, found exactly
    because d is checked at every step, or None if it was not crossed by
    ``t_max``.
    """

    start: object
    times: np.ndarray
    d: np.ndarray
    t_mix: dict
    t_max: int
    pi_excluded: float | None = None
    n_starts: int = 1
    renormalisations: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def window(self) -> dict:
        out = {}
        for e, t in self.t_mix.items():
            t2 = self.t_mix.get(1 - e)
            if e < 0.5 and t is not None and t2 is not None:
                out[e] = t - t2
        return out

    def resolved(self, eps: float) -> bool:
        return self.t_mix.get(eps) is not None


def _run_profile(space, starts: np.ndarray, t_max: int, eps_list, kernel=None,
                 stop_when_resolved=True, record_every=None):
    """Evolve point masses at the given start indices, tracking the worst TV."""
    kernel = kernel or Kernel(space)
    pi = stationary_distribution(space)
    N = len(space)
    eps_list = sorted(set(float(e) for e in eps_list))
    if starts.size == 1:
        v = np.zeros(N)
        v[starts[0]] = 1.0
        tv = lambda v: 0.5 * np.abs(v - pi).sum()
    else:
        v = np.zeros((N, starts.size))
        v[starts, np.arange(starts.size)] = 1.0
        tv = lambda v: 0.5 * np.abs(v - pi[:, None]).sum(axis=0).max()
    if record_every is None:
        record_every = 1 if t_max <= FULL_RECORD_STEPS else max(1, t_max // FULL_RECORD_STEPS)
    guard = _MassGuard()
    t_mix = {e: None for e in eps_list}
    times, ds = [0], [tv(v)]
    d = ds[0]
    for e in eps_list:
        if d <= e:
            t_mix[e] = 0
    t = 0
    while t < t_max:
        if stop_when_resolved and all(x is not None for x in t_mix.values()):
            break
        v = guard.check(kernel.apply(v))
        t += 1
        d = tv(v)
        for e in eps_list:
            if t_mix[e] is None and d <= e:
                t_mix[e] = t
        if t % record_every == 0:
            times.append(t)
            ds.append(d)
    if times[-1] != t:
        times.append(t)
        ds.append(d)
    return np.array(times), np.array(ds), t_mix, guard.corrections


def _start_index(space: StateSpace, start) -> int:
    if isinstance(start, str):
        if start == "monochromatic":
            return space.monochromatic_index(0)
        raise InvalidInput(f"unknown start label {start!r}")
    if np.isscalar(start):
        return int(start)
    return space.index(getattr(start, "counts", start))


def mixing_profile(start, t_max: int, eps_list: Iterable[float], space: StateSpace,
                   kernel: Kernel | None = None, stop_when_resolved: bool = True,
                   record_every: int | None = None) -> MixingProfile:
    if t_max < 1:
        raise InvalidInput("t_max must be >= 1")
    idx = _start_index(space, start)
    times, d, t_mix, nren = _run_profile(space, np.array([idx]), t_max, eps_list, kernel,
                                         stop_when_resolved, record_every)
    return MixingProfile(start, times, d, t_mix, t_max, renormalisations=nren)


def worst_case_profile(space: StateSpace, t_max: int, eps_list, mode: str = "monochromatic",
                       kernel: Kernel | None = None, scan_cap: int = SCAN_ALL_CAP,
                       stop_when_resolved: bool = True) -> MixingProfile:
    if mode == "monochromatic":
        return mixing_profile("monochromatic", t_max, eps_list, space, kernel, stop_when_resolved)
    if mode != "scan-all":
        raise InvalidInput(f"unknown mode {mode!r}")
    if len(space) > scan_cap:
        raise TooLarge(f"scan-all over {len(space)} states exceeds cap {scan_cap}")
    starts = np.arange(len(space))
    times, d, t_mix, nren = _run_profile(space, starts, t_max, eps_list, kernel, stop_when_resolved)
    return MixingProfile("scan-all", times, d, t_mix, t_max, n_starts=starts.size, renormalisations=nren)


def s_rho_mask(space: StateSpace, rho: float) -> np.ndarray:
    """States whose proportions lie within sup-distance ``rho`` of uniform (strict)."""
    q = space.params.q
    return np.max(np.abs(space.proportions - 1.0 / q), axis=1) < rho


def restricted_mixing_profile(space: StateSpace, rho: float, t_max: int, eps_list,
                              kernel: Kernel | None = None, stop_when_resolved: bool = True) -> MixingProfile:
    """Worst TV over starts inside the sup-norm ball of radius rho around uniform."""
    if rho <= 0:
        raise InvalidInput("rho must be positive")
    mask = s_rho_mask(space, rho)
    starts = np.nonzero(mask)[0]
    if starts.size == 0:
        raise InvalidInput(f"no states within rho={rho} of the uniform vector")
    pi = stationary_distribution(space)
    times, d, t_mix, nren = _run_profile(space, starts, t_max, eps_list, kernel, stop_when_resolved)
    return MixingProfile(f"S_rho({rho})", times, d, t_mix, t_max, pi_excluded=float(pi[~mask].sum()),
                         n_starts=starts.size, renormalisations=nren)


def bottleneck_ratio(space: StateSpace, mask: np.ndarray, P: sparse.csr_matrix | None = None,
                     pi: np.ndarray | None = None) -> float:
    """Stationary flow out of the set ``mask`` divided by its mass (generic, matrix based)."""
    P = transition_matrix(space) if P is None else P
    pi = stationary_distribution(space) if pi is None else pi
    mask = np.asarray(mask, dtype=bool)
    flow = (pi[mask][:, None] * P[mask][:, ~mask].toarray()).sum() if mask.any() else 0.0
    return float(flow / pi[mask].sum())


@dataclass(frozen=True)
class BottleneckResult:
    phi_star: float
    best_cut: float
    cheeger_bound: float
    cut_mass: float
    degenerate: bool


def bottleneck_scan(space: StateSpace) -> BottleneckResult:
    """Minimise the bottleneck ratio over half-line cuts {s : s^1 >= x}.

    Only a move that takes colour 1 from c to c - 1 leaves the cut at
    x = c/n, so its outflow is the stationary mass on the boundary layer
    times the probability of losing one vertex of colour 1 there.
    """
    q, n, beta = space.params.q, space.params.n, space.params.beta
    pi = stationary_distribution(space)
    c = space.states
    shifted = c.astype(float)
    shifted[:, 0] -= 1.0
    g0 = tilt(shifted / n, beta)[:, 0]
    p_down = np.where(c[:, 0] > 0, c[:, 0] / n * (1.0 - g0), 0.0)
    layer_mass = np.bincount(c[:, 0], weights=pi, minlength=n + 1)
    layer_flow = np.bincount(c[:, 0], weights=pi * p_down, minlength=n + 1)
    tail_mass = np.cumsum(layer_mass[::-1])[::-1]  # tail_mass[k] = pi(s^1 >= k/n)
    ks = np.arange(1, n + 1)
    flow, mass = layer_flow[ks], tail_mass[ks]
    ok = (mass <= 0.5) & (mass > 0)
    degenerate = not ok.any()
    if degenerate:
        # fall back on complements; reversibility makes the two flows equal
        mass = 1.0 - mass
        ok = (mass <= 0.5) & (mass > 0)
    phi = np.full(ks.size, np.inf)
    phi[ok] = flow[ok] / mass[ok]
    j = int(np.argmin(phi))
    return BottleneckResult(float(phi[j]), float(ks[j] / n), float(1.0 / (4.0 * phi[j])), float(mass[j]), degenerate)


def detailed_balance_residual(space: StateSpace) -> float:
    """Largest relative violation of pi(x)P(x,y) = pi(y)P(y,x) over all transitions."""
    pi = stationary_distribution(space)
    F = (sparse.diags(pi) @ transition_matrix(space)).tocsr()
    diff = abs(F - F.T).tocoo()
    if diff.nnz == 0:
        return 0.0
    fwd = np.asarray(F[diff.row, diff.col]).ravel()
    denom = np.maximum(fwd, np.finfo(float).eps)
    return float(np.max(diff.data / denom))


# ---------------------------------------------------------------- configuration-level oracle

def _pair_agreements(config: np.ndarray) -> int:
    # sum over ordered pairs (u, v), diagonal included
    return int((config[:, None] == config[None, :]).sum())


def config_chain_oracle(params: ModelParams, start: Sequence[int], t_max: int,
                        return_pi: bool = False):
    """Exact TV profile of the full configuration chain, lumped by colour counts.

    Builds the q^n-state heat-bath chain directly from the Gibbs weights
    exp((beta/n) * #{(u, v) : sigma(u) = sigma(v)}), without using the lumped
    formulas, and returns d(t) for t = 0..t_max.
    """
    q, n, beta = params.q, params.n, params.beta
    M = q**n
    if M > 10_000:
        raise TooLarge(f"{M} configurations exceed the oracle limit 10^4")
    configs = np.array(list(itertools.product(range(q), repeat=n)), dtype=np.int64)
    code = {tuple(cfg): i for i, cfg in enumerate(configs)}
    logw = np.array([beta / n * _pair_agreements(cfg) for cfg in configs])
    mu = np.exp(logw - logsumexp(logw))
    rows, cols, vals = [], [], []
    for a, cfg in enumerate(configs):
        for u in range(n):
            nbrs = []
            for k in range(q):
                alt = cfg.copy()
                alt[u] = k
                nbrs.append(code[tuple(alt)])
            lw = logw[nbrs]
            cond = np.exp(lw - logsumexp(lw))
            for b, p in zip(nbrs, cond):
                rows.append(a)
                cols.append(b)
                vals.append(p / n)
    P = sparse.coo_matrix((vals, (rows, cols)), shape=(M, M)).tocsr()
    # lump by colour counts
    space = enumerate_states(params)
    lump = space.indices(np.stack([np.bincount(c, minlength=q) for c in configs]))
    pi_lumped = np.bincount(lump, weights=mu, minlength=len(space))
    v = np.zeros(M)
    v[code[tuple(int(x) for x in start)]] = 1.0
    PT = P.T.tocsr()
    out = []
    for t in range(t_max + 1):
        if t:
            v = PT @ v
        out.append(tv_distance(np.bincount(lump, weights=v, minlength=len(space)), pi_lumped))
    out = np.array(out)
    return (out, pi_lumped) if return_pi else out
