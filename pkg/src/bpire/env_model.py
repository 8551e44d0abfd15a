"""Random-environment model: offspring and immigration families, moments,
and the standing subcriticality condition.

An environment draw fixes one offspring law and one immigration law for a
generation.  Offspring families are restricted to laws closed under iid
summation, so the x-fold sum is again a single parametric draw; that closure
is what keeps thinning O(1) per generation in the simulator.  Moment
functionals here are the exact/deterministic side of every dual-route check:
Monte Carlo estimates elsewhere are compared against these numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.stats as st

from .errors import QuadratureFailure, SeriesDivergence
from .rng import RngState

__all__ = [
    "OffspringFamily",
    "ImmigrationFamily",
    "EnvAtom",
    "EnvSpec",
    "EnvDraw",
    "ModelSpec",
    "ConditionReport",
    "EnvIndexBatch",
    "EnvRateBatch",
    "mean_offspring",
    "offspring_moment",
    "kappa_moment",
    "moment_A",
    "log_mean_offspring",
    "check_conditions",
    "sample_environment",
    "draw_env_batch",
    "batch_offspring_means",
    "offspring_pmf",
    "thinned_offspring_pmf",
    "immigration_pmf",
    "immigration_survival",
    "env_immigration_survival",
    "pareto_tail_params",
    "env_pareto_prefactor",
    "law_label",
]

OFFSPRING_KINDS = ("poisson", "bernoulli", "geometric0", "binomial")
IMMIGRATION_KINDS = ("dpareto", "bernoulli", "constant", "geometric0")

_SERIES_CAP = 10**7


def _require(cond: bool, msg: str):
    if not cond:
        raise ValueError(msg)


@dataclass(frozen=True)
class OffspringFamily:
    """Per-individual offspring law, closed under iid summation.

    kind        params          x-fold sum
    ----        ------          ----------
    poisson     rate >= 0       Poisson(x * rate)
    bernoulli   p in [0, 1]     Binomial(x, p)
    geometric0  p in (0, 1]     NegBinomial(x, p)   (support {0, 1, ...})
    binomial    n >= 1, p       Binomial(x * n, p)
    """

    kind: str
    rate: float = 0.0
    p: float = 0.0
    n: int = 0

    def __post_init__(self):
        _require(self.kind in OFFSPRING_KINDS, f"unknown offspring kind {self.kind!r}")
        if self.kind == "poisson":
            _require(math.isfinite(self.rate) and self.rate >= 0.0, "poisson rate must be finite and >= 0")
        elif self.kind == "bernoulli":
            _require(0.0 <= self.p <= 1.0, "bernoulli p must lie in [0, 1]")
        elif self.kind == "geometric0":
            _require(0.0 < self.p <= 1.0, "geometric0 p must lie in (0, 1]")
        elif self.kind == "binomial":
            _require(self.n >= 1 and self.n == int(self.n), "binomial n must be an integer >= 1")
            _require(0.0 <= self.p <= 1.0, "binomial p must lie in [0, 1]")

    @classmethod
    def poisson(cls, rate: float) -> "OffspringFamily":
        return cls(kind="poisson", rate=float(rate))

    @classmethod
    def bernoulli(cls, p: float) -> "OffspringFamily":
        return cls(kind="bernoulli", p=float(p))

    @classmethod
    def geometric0(cls, p: float) -> "OffspringFamily":
        return cls(kind="geometric0", p=float(p))

    @classmethod
    def binomial(cls, n: int, p: float) -> "OffspringFamily":
        return cls(kind="binomial", n=int(n), p=float(p))


@dataclass(frozen=True)
class ImmigrationFamily:
    """Per-generation immigration law on {0, 1, ...}.

    dpareto is the heavy-tailed member: survival
        S(x) = min(1, c * ln(e + x)^beta * (1 + x)^(-kappa)),
    so P(B = 0) = 1 - S(0) = 1 - c.  The others are light-tailed controls.
    """

    kind: str
    kappa: float = 0.0
    c: float = 0.0
    beta: float = 0.0
    q: float = 0.0
    b: int = 0
    p: float = 0.0

    def __post_init__(self):
        _require(self.kind in IMMIGRATION_KINDS, f"unknown immigration kind {self.kind!r}")
        if self.kind == "dpareto":
            _require(self.kappa > 0.0 and math.isfinite(self.kappa), "dpareto kappa must be > 0")
            _require(0.0 < self.c <= 1.0, "dpareto c must lie in (0, 1]")
            _require(self.beta >= 0.0 and math.isfinite(self.beta), "dpareto beta must be >= 0")
        elif self.kind == "bernoulli":
            _require(0.0 <= self.q <= 1.0, "bernoulli q must lie in [0, 1]")
        elif self.kind == "constant":
            _require(self.b >= 0 and self.b == int(self.b), "constant b must be an integer >= 0")
        elif self.kind == "geometric0":
            _require(0.0 < self.p <= 1.0, "geometric0 p must lie in (0, 1]")

    @classmethod
    def discrete_pareto(cls, kappa: float, c: float, beta: float = 0.0) -> "ImmigrationFamily":
        return cls(kind="dpareto", kappa=float(kappa), c=float(c), beta=float(beta))

    @classmethod
    def bernoulli(cls, q: float) -> "ImmigrationFamily":
        return cls(kind="bernoulli", q=float(q))

    @classmethod
    def constant(cls, b: int) -> "ImmigrationFamily":
        return cls(kind="constant", b=int(b))

    @classmethod
    def geometric0(cls, p: float) -> "ImmigrationFamily":
        return cls(kind="geometric0", p=float(p))


@dataclass(frozen=True)
class EnvAtom:
    weight: float
    offspring: OffspringFamily
    immigration: ImmigrationFamily

    def __post_init__(self):
        _require(self.weight > 0.0 and math.isfinite(self.weight), "atom weight must be > 0")


@dataclass(frozen=True)
class EnvSpec:
    """Law of the environment: finitely many atoms, or a uniform Poisson rate.

    Exactly one mode is populated.  The continuous mode draws a Poisson
    offspring rate uniformly from [rate_lo, rate_hi] and pairs it with one
    fixed immigration law.
    """

    atoms: tuple[EnvAtom, ...] = ()
    rate_lo: float = 0.0
    rate_hi: float = 0.0
    rate_immigration: ImmigrationFamily | None = None

    def __post_init__(self):
        if self.atoms:
            _require(self.rate_immigration is None, "atoms and rate mode are mutually exclusive")
            total = math.fsum(a.weight for a in self.atoms)
            _require(abs(total - 1.0) <= 1e-12, f"atom weights must sum to 1 (got {total!r})")
        else:
            _require(self.rate_immigration is not None, "environment needs atoms or a rate range")
            _require(0.0 <= self.rate_lo < self.rate_hi, "need 0 <= rate_lo < rate_hi")
            _require(math.isfinite(self.rate_hi), "rate_hi must be finite")

    @property
    def is_atomic(self) -> bool:
        return bool(self.atoms)

    @classmethod
    def from_atoms(cls, atoms) -> "EnvSpec":
        return cls(atoms=tuple(atoms))

    @classmethod
    def uniform_poisson_rate(cls, lo: float, hi: float, immigration: ImmigrationFamily) -> "EnvSpec":
        return cls(atoms=(), rate_lo=float(lo), rate_hi=float(hi), rate_immigration=immigration)


@dataclass(frozen=True)
class EnvDraw:
    """One realized environment: the laws in force for a single generation."""

    offspring: OffspringFamily
    immigration: ImmigrationFamily


@dataclass(frozen=True)
class ModelSpec:
    """Environment law plus the tail/moment exponents the checks refer to."""

    env: EnvSpec
    kappa: float
    delta: float = 0.5

    def __post_init__(self):
        _require(self.kappa > 0.0 and math.isfinite(self.kappa), "kappa must be > 0")
        _require(self.delta > 0.0 and math.isfinite(self.delta), "delta must be > 0")


@dataclass(frozen=True)
class ConditionReport:
    """Numbers behind the standing condition, plus the verdict."""

    kappa_moment: float
    log_mean: float
    moment_a: float
    subcritical: bool
    passed: bool

    def to_dict(self) -> dict:
        return {
            "kappa_moment": self.kappa_moment,
            "log_mean": self.log_mean,
            "moment_A": self.moment_a,
            "subcritical": self.subcritical,
            "pass": self.passed,
        }


# ---- batched environment realizations ----------------------------------

@dataclass(frozen=True)
class EnvIndexBatch:
    """Atom index per draw, for an atomic EnvSpec."""

    env: EnvSpec
    idx: np.ndarray


@dataclass(frozen=True)
class EnvRateBatch:
    """Poisson offspring rate per draw, for a continuous EnvSpec."""

    env: EnvSpec
    rates: np.ndarray


EnvBatch = EnvIndexBatch | EnvRateBatch


def sample_environment(env: EnvSpec, rng: RngState) -> EnvDraw:
    """Draw one environment; atomic specs use inversion on the weights."""
    if env.is_atomic:
        u = rng.gen.random()
        cw = np.cumsum([a.weight for a in env.atoms])
        j = int(np.searchsorted(cw, u, side="right"))
        j = min(j, len(env.atoms) - 1)
        return EnvDraw(env.atoms[j].offspring, env.atoms[j].immigration)
    lam = env.rate_lo + (env.rate_hi - env.rate_lo) * rng.gen.random()
    return EnvDraw(OffspringFamily.poisson(lam), env.rate_immigration)


def draw_env_batch(env: EnvSpec, rng: RngState, size: int) -> EnvBatch:
    """Draw `size` environments at once; one uniform consumed per draw."""
    u = rng.gen.random(size)
    if env.is_atomic:
        cw = np.cumsum([a.weight for a in env.atoms])
        idx = np.searchsorted(cw, u, side="right").astype(np.int64)
        np.clip(idx, 0, len(env.atoms) - 1, out=idx)
        return EnvIndexBatch(env=env, idx=idx)
    rates = env.rate_lo + (env.rate_hi - env.rate_lo) * u
    return EnvRateBatch(env=env, rates=rates)


def batch_offspring_means(batch: EnvBatch) -> np.ndarray:
    """Realized offspring mean m(xi) per draw in the batch."""
    if isinstance(batch, EnvIndexBatch):
        table = np.array([mean_offspring(a.offspring) for a in batch.env.atoms])
        return table[batch.idx]
    return np.asarray(batch.rates, dtype=float).copy()


# ---- moments -------------------------------------------------------------

def mean_offspring(law: OffspringFamily) -> float:
    """Conditional offspring mean m for one realized law."""
    if law.kind == "poisson":
        return law.rate
    if law.kind == "bernoulli":
        return law.p
    if law.kind == "geometric0":
        return (1.0 - law.p) / law.p
    return law.n * law.p


def offspring_moment(law: OffspringFamily, order: float, tol: float = 1e-12) -> float:
    """E[A^order] for one realized offspring law, order >= 1 real.

    Bernoulli and binomial are finite sums; poisson and geometric0 are summed
    until a geometric bound on the remaining tail drops below `tol`.
    """
    _require(order >= 1.0 and math.isfinite(order), "order must be >= 1")
    if law.kind == "bernoulli":
        return law.p  # A in {0, 1}
    if law.kind == "binomial":
        ks = np.arange(law.n + 1)
        return float(np.sum(ks**order * st.binom.pmf(ks, law.n, law.p)))
    if law.kind == "poisson":
        lam = law.rate
        if lam == 0.0:
            return 0.0
        total = 0.0
        term = math.exp(-lam)  # pmf at 0; contribution 0
        k = 0
        while True:
            k += 1
            term *= lam / k
            contrib = k**order * term
            total += contrib
            if k >= 2.0 * lam and k >= 2.0 * order:
                ratio = math.exp(order / k) * lam / (k + 1)
                if ratio < 1.0 and contrib * ratio / (1.0 - ratio) <= tol:
                    return total
            if k > _SERIES_CAP:
                raise SeriesDivergence("poisson moment series exceeded iteration cap")
    # geometric0
    p = law.p
    if p == 1.0:
        return 0.0
    total = 0.0
    term = p  # pmf at 0
    k = 0
    while True:
        k += 1
        term *= 1.0 - p
        contrib = k**order * term
        total += contrib
        if k >= 2.0 * order:
            ratio = math.exp(order / k) * (1.0 - p)
            if ratio < 1.0 and contrib * ratio / (1.0 - ratio) <= tol:
                return total
        if k > _SERIES_CAP:
            raise SeriesDivergence("geometric0 moment series exceeded iteration cap")


def _adaptive_simpson(f, a: float, b: float, tol: float, max_depth: int = 60) -> float:
    """Classic adaptive Simpson with Richardson correction, absolute `tol`."""

    def rec(a, fa, m, fm, b, fb, whole, tol, depth):
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm = f(lm)
        frm = f(rm)
        left = (m - a) / 6.0 * (fa + 4.0 * flm + fm)
        right = (b - m) / 6.0 * (fm + 4.0 * frm + fb)
        if abs(left + right - whole) <= 15.0 * tol:
            return left + right + (left + right - whole) / 15.0
        if depth <= 0:
            raise QuadratureFailure(f"requested tolerance unreachable within {max_depth} bisection levels")
        return rec(a, fa, lm, flm, m, fm, left, 0.5 * tol, depth - 1) + rec(
            m, fm, rm, frm, b, fb, right, 0.5 * tol, depth - 1
        )

    m = 0.5 * (a + b)
    fa, fm, fb = f(a), f(m), f(b)
    whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    return rec(a, fa, m, fm, b, fb, whole, tol, max_depth)


def kappa_moment(env: EnvSpec, kappa: float, tol: float = 1e-10) -> float:
    """E[m(xi)^kappa]: exact weighted sum for atoms, quadrature otherwise.

    kappa = 0 returns exactly 1.  The continuous mode integrates
    lambda^kappa over the uniform rate range to absolute error <= tol.
    """
    _require(kappa >= 0.0 and math.isfinite(kappa), "kappa must be >= 0")
    if env.is_atomic:
        return math.fsum(a.weight * mean_offspring(a.offspring) ** kappa for a in env.atoms)
    if kappa == 0.0:
        return 1.0
    lo, hi = env.rate_lo, env.rate_hi
    integral = _adaptive_simpson(lambda lam: lam**kappa, lo, hi, tol * (hi - lo))
    return integral / (hi - lo)


def moment_A(env: EnvSpec, order: float, tol: float = 1e-10) -> float:
    """Unconditional offspring moment E[A^order], order >= 1."""
    _require(order >= 1.0 and math.isfinite(order), "order must be >= 1")
    if env.is_atomic:
        return math.fsum(
            a.weight * offspring_moment(a.offspring, order, tol=tol * 1e-2) for a in env.atoms
        )
    lo, hi = env.rate_lo, env.rate_hi
    inner_tol = tol * 1e-2

    def f(lam: float) -> float:
        return offspring_moment(OffspringFamily.poisson(lam), order, tol=inner_tol)

    integral = _adaptive_simpson(f, lo, hi, tol * (hi - lo))
    return integral / (hi - lo)


def log_mean_offspring(env: EnvSpec) -> float:
    """E[ln m(xi)]; -inf when an atom has zero offspring mean."""
    if env.is_atomic:
        out = 0.0
        for a in env.atoms:
            m = mean_offspring(a.offspring)
            if m == 0.0:
                return -math.inf
            out += a.weight * math.log(m)
        return out
    lo, hi = env.rate_lo, env.rate_hi

    def anti(x: float) -> float:
        return 0.0 if x == 0.0 else x * math.log(x) - x

    return (anti(hi) - anti(lo)) / (hi - lo)


def check_conditions(model: ModelSpec, tol: float = 1e-10) -> ConditionReport:
    """Evaluate the standing condition for the model.

    Passing needs E[m(xi)^kappa] < 1 together with a finite offspring moment
    of order max(1, kappa) + delta; subcriticality of the log mean follows
    and is reported alongside.
    """
    km = kappa_moment(model.env, model.kappa, tol=tol)
    lm = log_mean_offspring(model.env)
    ma = moment_A(model.env, max(1.0, model.kappa) + model.delta, tol=tol)
    subcritical = lm < 0.0
    passed = km < 1.0 and math.isfinite(ma)
    return ConditionReport(
        kappa_moment=km, log_mean=lm, moment_a=ma, subcritical=subcritical, passed=passed
    )


# ---- pmf / survival evaluation ------------------------------------------

def thinned_offspring_pmf(law: OffspringFamily, x: int, ks: np.ndarray) -> np.ndarray:
    """pmf of the sum of `x` iid offspring draws, evaluated at integers `ks`.

    Uses the family's summation closure; x = 0 is the point mass at 0.
    """
    _require(x >= 0, "x must be >= 0")
    ks = np.asarray(ks)
    if x == 0:
        return (ks == 0).astype(float)
    if law.kind == "poisson":
        return st.poisson.pmf(ks, x * law.rate)
    if law.kind == "bernoulli":
        return st.binom.pmf(ks, x, law.p)
    if law.kind == "geometric0":
        if law.p == 1.0:
            return (ks == 0).astype(float)
        return st.nbinom.pmf(ks, x, law.p)
    return st.binom.pmf(ks, x * law.n, law.p)


def offspring_pmf(law: OffspringFamily, ks: np.ndarray) -> np.ndarray:
    """Single-draw offspring pmf at integers `ks`."""
    return thinned_offspring_pmf(law, 1, ks)


def immigration_survival(law: ImmigrationFamily, x) -> np.ndarray | float:
    """S(x) = P(B > x) at integer x; x < 0 returns 1."""
    x = np.asarray(x, dtype=float)
    xc = np.maximum(x, 0.0)
    if law.kind == "dpareto":
        s = np.minimum(1.0, law.c * np.log(math.e + xc) ** law.beta * (1.0 + xc) ** (-law.kappa))
    elif law.kind == "bernoulli":
        s = np.where(xc < 1.0, law.q, 0.0)
    elif law.kind == "constant":
        s = np.where(xc < law.b, 1.0, 0.0)
    else:  # geometric0
        s = (1.0 - law.p) ** (xc + 1.0)
    out = np.where(x < 0.0, 1.0, s)
    return float(out) if out.ndim == 0 else out


def immigration_pmf(law: ImmigrationFamily, ks: np.ndarray) -> np.ndarray:
    """pmf at integers `ks`, via survival differences S(k-1) - S(k)."""
    ks = np.asarray(ks)
    return immigration_survival(law, ks - 1) - immigration_survival(law, ks)


def env_immigration_survival(env: EnvSpec, x) -> np.ndarray | float:
    """Marginal immigration survival under the environment mixture."""
    if env.is_atomic:
        parts = [a.weight * immigration_survival(a.immigration, x) for a in env.atoms]
        return sum(parts)
    return immigration_survival(env.rate_immigration, x)


def pareto_tail_params(law: ImmigrationFamily) -> tuple[float, float, float]:
    """(c, kappa, beta) of a dpareto law; rejects other kinds."""
    _require(law.kind == "dpareto", "law is not heavy-tailed (dpareto)")
    return law.c, law.kappa, law.beta


def env_pareto_prefactor(env: EnvSpec) -> tuple[float, float, float]:
    """(c, kappa, beta) of the mixture immigration tail.

    Requires every atom's immigration to be dpareto with one shared kappa and
    beta, so the mixture survival is again c_mix * ln(e+x)^beta * (1+x)^-kappa
    with c_mix the weighted prefactor.
    """
    if not env.is_atomic:
        return pareto_tail_params(env.rate_immigration)
    params = [pareto_tail_params(a.immigration) for a in env.atoms]
    kappas = {round(k, 15) for _, k, _ in params}
    betas = {round(b, 15) for _, _, b in params}
    _require(len(kappas) == 1 and len(betas) == 1, "atoms disagree on tail exponent or log power")
    c_mix = math.fsum(a.weight * c for a, (c, _, _) in zip(env.atoms, params))
    return c_mix, params[0][1], params[0][2]


def _fmt_num(v: float) -> str:
    if float(v) == int(v):
        return str(int(v))
    return repr(float(v))


def law_label(law: OffspringFamily | ImmigrationFamily) -> str:
    """Canonical config-syntax string for a law, e.g. 'poisson:0.3'."""
    if isinstance(law, OffspringFamily):
        if law.kind == "poisson":
            return f"poisson:{_fmt_num(law.rate)}"
        if law.kind == "bernoulli":
            return f"bernoulli:{_fmt_num(law.p)}"
        if law.kind == "geometric0":
            return f"geometric0:{_fmt_num(law.p)}"
        return f"binomial:{law.n},{_fmt_num(law.p)}"
    if law.kind == "dpareto":
        return f"dpareto:{_fmt_num(law.kappa)},{_fmt_num(law.c)},{_fmt_num(law.beta)}"
    if law.kind == "bernoulli":
        return f"bernoulli:{_fmt_num(law.q)}"
    if law.kind == "constant":
        return f"constant:{law.b}"
    return f"geometric0:{_fmt_num(law.p)}"
