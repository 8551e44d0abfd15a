"""Shared model builders and one statistical helper.

Tests that need a model build it through these functions so the whole suite
agrees on what "the two-atom config" means.
"""

import numpy as np
import scipy.stats as st

from bpire.env_model import (
    EnvAtom,
    EnvSpec,
    ImmigrationFamily,
    ModelSpec,
    OffspringFamily,
)


def two_atom_env() -> EnvSpec:
    """Half thin, half near-critical reproduction, shared quadratic heavy
    immigration tail; E[m^2] = 0.5 * 0.09 + 0.5 * 0.81 = 0.45."""
    heavy = ImmigrationFamily.discrete_pareto(2.0, 1.0)
    return EnvSpec.from_atoms(
        [
            EnvAtom(0.5, OffspringFamily.poisson(0.3), heavy),
            EnvAtom(0.5, OffspringFamily.poisson(0.9), heavy),
        ]
    )


def two_atom_model() -> ModelSpec:
    return ModelSpec(env=two_atom_env(), kappa=2.0, delta=0.5)


def coin_env() -> EnvSpec:
    """Single-atom light-tailed config, small enough for the exact kernel."""
    return EnvSpec.from_atoms(
        [EnvAtom(1.0, OffspringFamily.bernoulli(0.5), ImmigrationFamily.bernoulli(0.5))]
    )


def coin_model() -> ModelSpec:
    return ModelSpec(env=coin_env(), kappa=2.0, delta=0.5)


def chi_square_pvalue(samples, pmf, min_expected: float = 5.0) -> float:
    """Goodness-of-fit p-value of integer samples against an exact pmf.

    `pmf` is a callable on integer arrays.  Adjacent cells are pooled left to
    right until each pooled cell expects at least `min_expected` counts; the
    remainder joins the last pool.  Pooling also absorbs structural zeros
    (e.g. a law with no mass at 0), keeping the chi-square statistic defined.
    """
    samples = np.asarray(samples)
    n = samples.size
    hi = int(samples.max())
    probs = np.asarray(pmf(np.arange(hi + 1)), dtype=float)
    exp_cells = np.append(n * probs, n * max(1.0 - float(probs.sum()), 0.0))
    obs_cells = np.append(np.bincount(samples, minlength=hi + 1).astype(float), 0.0)
    obs_g: list[float] = []
    exp_g: list[float] = []
    o_acc = e_acc = 0.0
    for o, e in zip(obs_cells, exp_cells):
        o_acc += o
        e_acc += e
        if e_acc >= min_expected:
            obs_g.append(o_acc)
            exp_g.append(e_acc)
            o_acc = e_acc = 0.0
    if o_acc or e_acc:
        if exp_g:
            obs_g[-1] += o_acc
            exp_g[-1] += e_acc
        else:
            return 1.0  # support too thin to test
    obs_a = np.asarray(obs_g)
    exp_a = np.asarray(exp_g)
    if exp_a.size < 2:
        return 1.0
    exp_a *= obs_a.sum() / exp_a.sum()
    return float(st.chisquare(obs_a, exp_a).pvalue)
