"""Core objects of the mean-field Potts model and closed-form functions of a state.

Colours are 0-based throughout the package: a configuration on ``n`` vertices is an
integer array with entries in ``range(q)``.  A proportions vector is stored as its
integer colour counts so that lattice membership is exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np


class InvalidInput(ValueError):
    """Raised when an argument violates an operation's precondition."""


class OutOfDomain(ValueError):
    """Raised when a parameter lies outside the region where a quantity is defined."""


class TooLarge(RuntimeError):
    """Raised when a requested enumeration exceeds a configured size cap."""


@dataclass(frozen=True)
class ModelParams:
    """One instance of the model: ``q`` colours, ``n`` vertices, inverse temperature ``beta``."""

    q: int
    n: int
    beta: float

    def __post_init__(self):
        if int(self.q) != self.q or self.q < 2:
            raise InvalidInput(f"q must be an integer >= 2, got {self.q!r}")
        if int(self.n) != self.n or self.n < 1:
            raise InvalidInput(f"n must be an integer >= 1, got {self.n!r}")
        b = float(self.beta)
        if not math.isfinite(b) or b < 0:
            raise InvalidInput(f"beta must be finite and >= 0, got {self.beta!r}")
        object.__setattr__(self, "q", int(self.q))
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "beta", b)


@dataclass(frozen=True)
class ProportionsVector:
    """A point of the lattice simplex, held as colour counts summing to ``n``."""

    counts: tuple

    def __post_init__(self):
        c = tuple(int(x) for x in self.counts)
        if len(c) < 2:
            raise InvalidInput("need at least two colours")
        if any(x < 0 for x in c):
            raise InvalidInput(f"negative count in {c}")
        if sum(c) < 1:
            raise InvalidInput("counts must sum to a positive n")
        object.__setattr__(self, "counts", c)

    @property
    def n(self) -> int:
        return sum(self.counts)

    @property
    def q(self) -> int:
        return len(self.counts)

    @property
    def s(self) -> np.ndarray:
        return np.asarray(self.counts, dtype=float) / self.n

    @classmethod
    def monochromatic(cls, q: int, n: int, color: int = 0) -> "ProportionsVector":
        c = [0] * q
        c[color] = n
        return cls(tuple(c))

    @classmethod
    def equiproportional(cls, q: int, n: int) -> "ProportionsVector":
        # remainder spread over the first colours so the counts still sum to n
        base, rem = divmod(n, q)
        return cls(tuple(base + (1 if k < rem else 0) for k in range(q)))


def _as_counts(s) -> np.ndarray:
    if isinstance(s, ProportionsVector):
        return np.asarray(s.counts, dtype=np.int64)
    return np.asarray(s, dtype=np.int64)


def check_simplex_point(x, tol: float = 1e-12) -> np.ndarray:
    """Validate and return ``x`` as a float array on the probability simplex."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise InvalidInput("simplex point must be a 1-d vector with >= 2 entries")
    if np.any(x < -tol) or abs(x.sum() - 1.0) > tol:
        raise InvalidInput(f"not on the simplex: {x}")
    return x


def in_S_rho(x, rho: float) -> bool:
    """True when every coordinate is within ``rho`` of ``1/q`` (sup-norm ball, strict)."""
    x = np.asarray(x, dtype=float)
    return bool(np.max(np.abs(x - 1.0 / x.size)) < rho)


def in_S_rho_plus(x, rho: float) -> bool:
    """True when every coordinate is strictly below ``1/q + rho``."""
    x = np.asarray(x, dtype=float)
    return bool(np.all(x < 1.0 / x.size + rho))


def proportions_of(config: Sequence[int], params: ModelParams) -> ProportionsVector:
    """Count colours of a configuration (entries in ``range(q)``)."""
    a = np.asarray(config)
    if a.ndim != 1 or a.size != params.n:
        raise InvalidInput(f"configuration must have length n={params.n}")
    if a.size and (a.min() < 0 or a.max() >= params.q):
        raise InvalidInput(f"colour out of range(0, {params.q})")
    return ProportionsVector(tuple(np.bincount(a, minlength=params.q).tolist()))


def gibbs_log_weight(s, params: ModelParams) -> float:
    """Log of the unnormalised Gibbs weight of any configuration with proportions ``s``."""
    c = _as_counts(s)
    # beta * n * ||c/n||^2 written in integers to keep it exact as long as possible
    return params.beta * float(np.dot(c, c)) / params.n


def tilt(s, beta: float) -> np.ndarray:
    """The softmax map ``k -> exp(2 beta s_k) / sum_j exp(2 beta s_j)``.

    Works on any real vector, or on a stack of vectors along the last axis.
    """
    z = 2.0 * beta * np.asarray(s, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    w = np.exp(z)
    return w / w.sum(axis=-1, keepdims=True)


def site_update_distribution(s, i: int, params: ModelParams) -> np.ndarray:
    """Heat-bath law of the new colour of a vertex currently coloured ``i``."""
    c = _as_counts(s)
    if c[i] < 1:
        raise InvalidInput(f"no vertex of colour {i} in counts {tuple(c)}")
    shifted = c.astype(float)
    shifted[i] -= 1.0
    return tilt(shifted / params.n, params.beta)


def coordinate_drift_exact(s, k: int, params: ModelParams) -> float:
    """``n * E[S_{t+1}^k - S_t^k | S_t = s]`` with no truncation."""
    c = _as_counts(s)
    n = params.n
    sv = c / n
    total = -sv[k]
    for i in range(params.q):
        if c[i] == 0:
            continue
        shifted = sv.copy()
        shifted[i] -= 1.0 / n
        total += sv[i] * tilt(shifted, params.beta)[k]
    return float(total)


def drift(x, beta: float) -> float:
    """Asymptotic first-coordinate drift ``g^1(x) - x^1`` at a real simplex point."""
    x = np.asarray(x, dtype=float)
    return float(tilt(x, beta)[0] - x[0])


def worst_case_drift(x: float, beta: float, q: int):
    """Worst-case first-coordinate drift at ``x`` and its first two derivatives in ``x``.

    The worst case puts the remaining mass evenly on the other colours, which
    gives ``D(x) = -x + 1/(1 + (q-1) E)`` with ``E = exp(2 beta (1 - q x)/(q - 1))``.
    Accepts scalars or arrays.
    """
    x = np.asarray(x, dtype=float)
    E = np.exp(2.0 * beta * (1.0 - q * x) / (q - 1))
    den = 1.0 + (q - 1) * E
    D = -x + 1.0 / den
    D1 = -1.0 + 2.0 * beta * q * E / den**2
    D2 = -4.0 * beta**2 * q**2 * E * (1.0 - (q - 1) * E) / ((q - 1) * den**3)
    if D.ndim == 0:
        return float(D), float(D1), float(D2)
    return D, D1, D2


def rate_function(x, beta: float, normalize: bool = False) -> float:
    """Large-deviation free energy ``sum s log(q s) - beta ||s||^2`` (0 log 0 = 0).

    With ``normalize=True`` the minimum over the analytic minimiser candidates
    (the uniform vector and the on-axis drift roots) is subtracted.
    """
    x = np.asarray(x, dtype=float)
    q = x.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        ent = np.where(x > 0, x * np.log(q * x), 0.0).sum(axis=-1)
    val = ent - beta * (x * x).sum(axis=-1)
    if normalize:
        val = val - rate_function_minimum(beta, q)
    return float(val) if np.ndim(val) == 0 else val


def rate_function_minimum(beta: float, q: int) -> float:
    """Minimum of the unnormalised rate function over its candidate minimisers."""
    from .constants import _drift_roots  # local import: constants builds on this module

    best = -beta / q
    for r in _drift_roots(beta, q):
        v = np.full(q, (1.0 - r) / (q - 1))
        v[0] = r
        best = min(best, rate_function(v, beta))
    return best
