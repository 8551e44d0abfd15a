"""Exact small-state-space cross-checks for the Monte Carlo engine.

For light-tailed configurations the chain restricted to {0..n_max} admits a
dense transition matrix built from exact pmfs; its stationary vector is an
independent route to the same distribution the backward sampler estimates.
Probability mass that would leave the truncated box is folded into the top
state and tracked, so the induced bias is observable rather than silent.

The brute-force random-sum tail deliberately avoids the families' summation
closure: it convolves the single-draw offspring pmf b times.  Agreement with
the closed-form thinning sampler is what validates the closure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.stats as st

from .env_model import (
    EnvSpec,
    ImmigrationFamily,
    OffspringFamily,
    immigration_pmf,
    thinned_offspring_pmf,
)
from .errors import NoConvergence, PmfUnavailable, ResidualTooLarge

__all__ = [
    "TruncatedKernel",
    "ExactDistribution",
    "MAX_STATES",
    "build_kernel",
    "stationary_power_iteration",
    "brute_force_random_sum_tail",
    "empirical_pmf",
    "tv_distance",
]

MAX_STATES = 4096
_SUPPORT_TAIL = 1e-16


@dataclass(frozen=True)
class TruncatedKernel:
    """Row-stochastic matrix on {0..n_max}; row_clip[x] is the probability
    mass folded from states > n_max into state n_max for start state x."""

    n_max: int
    matrix: np.ndarray
    row_clip: np.ndarray

    @property
    def mass_clip(self) -> float:
        return float(self.row_clip.sum())


@dataclass(frozen=True)
class ExactDistribution:
    """Stationary vector of a truncated kernel; residual is the stationary-
    weighted clipped mass, a bound on the truncation distortion."""

    pmf: np.ndarray
    residual: float


def build_kernel(env: EnvSpec, n_max: int) -> TruncatedKernel:
    """Dense one-step kernel of the chain on {0..n_max}.

    Row x mixes, over environment atoms, the pmf of (x-fold offspring sum +
    immigration).  Entries below n_max are exact; column n_max absorbs the
    complement and the excess over the exact value is recorded as clip.
    """
    if not env.is_atomic:
        raise PmfUnavailable("exact kernel needs an atomic environment")
    if not 1 <= n_max <= MAX_STATES:
        raise ValueError(f"n_max must lie in [1, {MAX_STATES}]")
    ks = np.arange(n_max + 1)
    size = n_max + 1
    body = np.zeros((size, size))
    exact_at_cap = np.zeros(size)
    for atom in env.atoms:
        imm = immigration_pmf(atom.immigration, ks)
        for x in range(size):
            t = thinned_offspring_pmf(atom.offspring, x, ks)
            conv = np.convolve(t, imm)
            body[x, :n_max] += atom.weight * conv[:n_max]
            exact_at_cap[x] += atom.weight * conv[n_max]
    body[:, n_max] = np.maximum(0.0, 1.0 - body[:, :n_max].sum(axis=1))
    row_clip = np.maximum(0.0, body[:, n_max] - exact_at_cap)
    return TruncatedKernel(n_max=n_max, matrix=body, row_clip=row_clip)


def stationary_power_iteration(
    kernel: TruncatedKernel, tol: float = 1e-12, max_iter: int = 10**6
) -> ExactDistribution:
    """Left fixed vector by repeated multiplication, stopping when the
    sweep-to-sweep total-variation increment drops below tol."""
    if tol <= 0.0:
        raise ValueError("tol must be > 0")
    p = kernel.matrix
    n = p.shape[0]
    pi = np.full(n, 1.0 / n)
    for _ in range(max_iter):
        nxt = pi @ p
        tv = 0.5 * float(np.abs(nxt - pi).sum())
        pi = nxt
        if tv < tol:
            pi = pi / pi.sum()
            return ExactDistribution(pmf=pi, residual=float(pi @ kernel.row_clip))
    raise NoConvergence(f"power iteration exceeded {max_iter} sweeps")


def _single_draw_support(law: OffspringFamily) -> np.ndarray:
    """Single-draw offspring pmf out to a point with tail mass < 1e-16."""
    if law.kind == "bernoulli":
        hi = 1
    elif law.kind == "binomial":
        hi = law.n
    elif law.kind == "poisson":
        hi = int(st.poisson.isf(_SUPPORT_TAIL, law.rate)) + 2 if law.rate > 0 else 0
    else:  # geometric0
        if law.p == 1.0:
            hi = 0
        else:
            hi = int(math.ceil(math.log(_SUPPORT_TAIL) / math.log1p(-law.p))) + 2
    from .env_model import offspring_pmf

    return np.asarray(offspring_pmf(law, np.arange(hi + 1)), dtype=float)


def brute_force_random_sum_tail(env: EnvSpec, b_law: ImmigrationFamily, x: int, cap: int) -> float:
    """P(sum_{i<=B} A_i > x) by iterated convolution of the single-draw pmf.

    B is truncated at `cap`; remaining B-mass above cap must be < 1e-12 or
    the computation refuses.  Independent of the families' closure, hence an
    oracle for the thinning sampler.
    """
    if not env.is_atomic:
        raise PmfUnavailable("brute-force tail needs an atomic environment")
    if x < 0 or cap < 0:
        raise ValueError("x and cap must be >= 0")
    bpmf = np.asarray(immigration_pmf(b_law, np.arange(cap + 1)), dtype=float)
    residual = 1.0 - float(bpmf.sum())
    if residual > 1e-12:
        raise ResidualTooLarge(f"B mass beyond cap is {residual:.3e} (> 1e-12)")
    total = 0.0
    for atom in env.atoms:
        base = _single_draw_support(atom.offspring)
        v = np.zeros(x + 1)
        v[0] = 1.0
        tails = np.zeros(cap + 1)
        for b in range(1, cap + 1):
            v = np.convolve(v, base)[: x + 1]
            tails[b] = 1.0 - float(v.sum())
        total += atom.weight * float(np.dot(bpmf, tails))
    return total


def empirical_pmf(samples, n_max: int) -> np.ndarray:
    """Frequencies on {0..n_max} with values above n_max folded into n_max,
    mirroring the kernel's clip convention."""
    arr = np.asarray(samples)
    if arr.size == 0:
        raise ValueError("empty sample set")
    if arr.min() < 0:
        raise ValueError("samples must be >= 0")
    v = np.minimum(arr, n_max)
    return np.bincount(v, minlength=n_max + 1) / arr.size


def tv_distance(p, q) -> float:
    """Total variation between two pmf vectors (zero-padded to align)."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    size = max(p.size, q.size)
    pp = np.zeros(size)
    qq = np.zeros(size)
    pp[: p.size] = p
    qq[: q.size] = q
    return 0.5 * float(np.abs(pp - qq).sum())
