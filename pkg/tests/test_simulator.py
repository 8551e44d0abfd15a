"""Sampling layer: thinning closure, inversion immigration, chain steps,
truncation choice, backward sampler, dump round trips.

The load-bearing check is the closure audit: the thinning operator samples
the x-fold offspring sum through the family's summation closure, so we (a)
verify the closed-form pmf against an explicit x-fold convolution of the
single-draw pmf, and (b) chi-square the sampler against that pmf.  Together
these catch a wrong closure, a wrong pmf, or a biased sampler.
"""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as hst

from bpire.env_model import (
    EnvAtom,
    EnvDraw,
    EnvSpec,
    ImmigrationFamily,
    ModelSpec,
    OffspringFamily,
    env_immigration_survival,
    immigration_pmf,
    immigration_survival,
    offspring_pmf,
    thinned_offspring_pmf,
)
from bpire.errors import NotSubcritical
from bpire.rng import RngState
from bpire.simulator import (
    ChainState,
    backward_terms,
    choose_truncation,
    composed_thinning_batch,
    random_sum_batch,
    read_samples_binary,
    read_samples_text,
    sample_immigration,
    sample_immigration_batch,
    sample_stationary_backward,
    sample_stationary_backward_batch,
    simulate_forward,
    simulate_forward_batch,
    step,
    step_batch,
    thin,
    thin_batch,
    unit_progeny_batch,
    write_samples_binary,
    write_samples_text,
)

from conftest import chi_square_pvalue, two_atom_model

FAMILIES = [
    OffspringFamily.poisson(0.7),
    OffspringFamily.bernoulli(0.4),
    OffspringFamily.geometric0(0.6),
    OffspringFamily.binomial(3, 0.3),
]


# ---- thinning ---------------------------------------------------------------

def test_thin_of_zero_population_is_zero():
    rng = RngState.from_seed(0)
    for law in FAMILIES:
        assert thin(law, 0, rng) == 0


def test_thin_degenerate_laws():
    rng = RngState.from_seed(0)
    assert thin(OffspringFamily.poisson(0.0), 10, rng) == 0
    assert thin(OffspringFamily.bernoulli(0.0), 10, rng) == 0
    assert thin(OffspringFamily.geometric0(1.0), 10, rng) == 0
    assert thin(OffspringFamily.bernoulli(1.0), 10, rng) == 10


@pytest.mark.parametrize("law", FAMILIES, ids=lambda l: l.kind)
@pytest.mark.parametrize("x", [1, 2, 5, 17])
def test_closure_pmf_equals_explicit_convolution(law, x):
    # independent route: convolve the single-draw pmf x times
    hi = 40 + 4 * x
    base = np.asarray(offspring_pmf(law, np.arange(hi + 1)), dtype=float)
    conv = np.array([1.0])
    for _ in range(x):
        conv = np.convolve(conv, base)
    ks = np.arange(hi + 1)
    closed = thinned_offspring_pmf(law, x, ks)
    assert np.allclose(closed, conv[: hi + 1], atol=1e-12)


@pytest.mark.parametrize("law", FAMILIES, ids=lambda l: l.kind)
@pytest.mark.parametrize("x", [1, 2, 5, 17])
def test_thin_sampler_matches_closure_pmf(law, x):
    rng = RngState.from_seed(1000 + 31 * x)
    draws = thin_batch(law, np.full(200_000, x, dtype=np.int64), rng)
    p = chi_square_pvalue(draws, lambda ks: thinned_offspring_pmf(law, x, ks))
    assert p > 0.01, f"{law.kind} x={x}: chi-square p={p:.4g}"


def test_poisson_thinning_collapses_to_single_poisson():
    # 4 Poisson(0.5) individuals total a Poisson(2.0) count
    got = thinned_offspring_pmf(OffspringFamily.poisson(0.5), 4, np.arange(30))
    want = thinned_offspring_pmf(OffspringFamily.poisson(2.0), 1, np.arange(30))
    assert np.allclose(got, want, atol=1e-15)


def test_thin_bernoulli_mean():
    rng = RngState.from_seed(7)
    draws = thin_batch(OffspringFamily.bernoulli(0.4), np.full(100_000, 25, dtype=np.int64), rng)
    se = math.sqrt(25 * 0.4 * 0.6 / 100_000)
    assert abs(float(draws.mean()) - 10.0) <= 4 * se


def test_thin_rejects_negative_population():
    with pytest.raises(ValueError):
        thin_batch(OffspringFamily.poisson(0.5), np.array([-1]), RngState.from_seed(0))


def test_thin_overflow_guard():
    rng = RngState.from_seed(0)
    with pytest.raises(OverflowError):
        thin(OffspringFamily.poisson(4.0), 1 << 61, rng)


# ---- immigration ------------------------------------------------------------

class _FixedU:
    """Stand-in rng whose uniforms are pinned; exposes what inversion sees."""

    def __init__(self, u: float):
        self.u = u

    def uniform_open(self, size=None):
        return self.u if size is None else np.full(size, self.u)


def test_immigration_constant():
    assert sample_immigration(ImmigrationFamily.constant(3), RngState.from_seed(0)) == 3


def test_immigration_inversion_closed_form_boundary():
    # (c/U)^(1/kappa) - 1 = (1/0.25)^(1/2) - 1 lands exactly on 1
    law = ImmigrationFamily.discrete_pareto(2.0, 1.0)
    got = sample_immigration_batch(law, _FixedU(0.25), 4)
    assert np.array_equal(got, np.array([1, 1, 1, 1]))


def test_immigration_inversion_generic_points():
    law = ImmigrationFamily.discrete_pareto(2.0, 1.0)
    # S(1) = 0.25 > 0.2 >= S(2): smallest x with S(x) <= u is 2
    assert sample_immigration_batch(law, _FixedU(0.2), 1)[0] == 2
    assert sample_immigration_batch(law, _FixedU(1.0), 1)[0] == 0


def test_immigration_bisection_agrees_with_survival_definition():
    law = ImmigrationFamily.discrete_pareto(2.0, 0.8, 1.0)  # beta > 0 path
    rng = RngState.from_seed(11)
    draws = sample_immigration_batch(law, rng, 50_000)
    xs = np.array([0, 1, 5, 20])
    for x in xs:
        emp = float((draws > x).mean())
        s = float(immigration_survival(law, x))
        se = math.sqrt(s * (1 - s) / draws.size)
        assert abs(emp - s) <= 4 * se


def test_immigration_dpareto_deep_tail_frequency():
    # P(B > 10) = 1/121 over a million draws
    law = ImmigrationFamily.discrete_pareto(2.0, 1.0)
    draws = sample_immigration_batch(law, RngState.from_seed(5), 1_000_000)
    s = 1.0 / 121.0
    se = math.sqrt(s * (1 - s) / 1_000_000)
    assert abs(float((draws > 10).mean()) - s) <= 4 * se


def test_immigration_sampler_pmf_chi_square():
    for law in [
        ImmigrationFamily.discrete_pareto(2.0, 0.7),
        ImmigrationFamily.geometric0(0.35),
        ImmigrationFamily.bernoulli(0.6),
    ]:
        draws = sample_immigration_batch(law, RngState.from_seed(21), 200_000)
        p = chi_square_pvalue(draws, lambda ks: immigration_pmf(law, ks))
        assert p > 0.01, f"{law.kind}: chi-square p={p:.4g}"


# ---- chain steps -------------------------------------------------------------

def test_step_adds_immigration_to_survivors():
    draw = EnvDraw(OffspringFamily.bernoulli(1.0), ImmigrationFamily.constant(3))
    got = step(ChainState(value=5, generation=0), draw, RngState.from_seed(0))
    assert got == ChainState(value=8, generation=1)


def test_step_from_zero_is_pure_immigration():
    draw = EnvDraw(OffspringFamily.poisson(0.9), ImmigrationFamily.constant(2))
    got = step(ChainState(value=0, generation=4), draw, RngState.from_seed(0))
    assert got.value == 2 and got.generation == 5


def test_simulate_forward_trajectory_shape():
    env = EnvSpec.from_atoms(
        [EnvAtom(1.0, OffspringFamily.bernoulli(1.0), ImmigrationFamily.constant(1))]
    )
    traj = simulate_forward(3, 4, env, RngState.from_seed(0))
    assert [s.value for s in traj] == [3, 4, 5, 6, 7]
    assert [s.generation for s in traj] == [0, 1, 2, 3, 4]
    assert simulate_forward(7, 0, env, RngState.from_seed(0)) == [ChainState(7, 0)]


def test_forward_mean_decays_at_the_mean_offspring_rate():
    # no immigration: E X_n = x0 * (E m)^n exactly; fitted slope of the log
    # of the cross-replica mean must sit within 5% of ln(0.5)
    env = EnvSpec.from_atoms(
        [EnvAtom(1.0, OffspringFamily.poisson(0.5), ImmigrationFamily.constant(0))]
    )
    rng = RngState.from_seed(33)
    v = np.full(4000, 1000, dtype=np.int64)
    means = []
    for _ in range(8):
        v = step_batch(v, env, rng)
        means.append(float(v.mean()))
    slope = np.polyfit(np.arange(1, 9), np.log(means), 1)[0]
    assert abs(slope - math.log(0.5)) <= 0.05 * abs(math.log(0.5))


def test_forward_overflow_guard():
    env = EnvSpec.from_atoms(
        [EnvAtom(1.0, OffspringFamily.poisson(3.0), ImmigrationFamily.constant(1))]
    )
    with pytest.raises(OverflowError):
        simulate_forward_batch(1 << 40, 60, env, RngState.from_seed(0), 4)


# ---- truncation choice --------------------------------------------------------

def test_choose_truncation_frozen_values():
    model = two_atom_model()
    # r = 0.45: smallest K with r^(K+1)/(1-r) <= 1e-4 is 12
    assert choose_truncation(model, 1e-4) == 12
    assert choose_truncation(model, 1e-6) == 18
    assert choose_truncation(model, 0.999) == 0


def test_choose_truncation_epsilon_at_least_one_needs_no_terms():
    assert choose_truncation(two_atom_model(), 1.0 - 1e-12) == 0


def test_choose_truncation_rejects_supercritical():
    env = EnvSpec.from_atoms(
        [EnvAtom(1.0, OffspringFamily.poisson(1.2), ImmigrationFamily.constant(1))]
    )
    with pytest.raises(NotSubcritical):
        choose_truncation(ModelSpec(env=env, kappa=1.0, delta=0.5), 1e-4)


@given(eps=hst.floats(1e-12, 0.9), r_scale=hst.floats(0.05, 0.95))
def test_choose_truncation_is_the_minimal_k(eps, r_scale):
    env = EnvSpec.from_atoms(
        [EnvAtom(1.0, OffspringFamily.bernoulli(r_scale), ImmigrationFamily.constant(1))]
    )
    model = ModelSpec(env=env, kappa=1.0, delta=0.5)
    r = r_scale
    k = choose_truncation(model, eps)
    assert r ** (k + 1) / (1.0 - r) <= eps
    if k > 0:
        assert r**k / (1.0 - r) > eps


# ---- backward sampler ----------------------------------------------------------

def test_backward_zero_truncation_is_a_plain_immigration_draw():
    model = two_atom_model()
    draws = sample_stationary_backward_batch(model, 0, RngState.from_seed(17), 200_000)
    p = chi_square_pvalue(
        draws,
        lambda ks: env_immigration_survival(model.env, ks - 1) - env_immigration_survival(model.env, ks),
    )
    assert p > 0.01


def test_backward_dead_offspring_reduces_to_first_term():
    # offspring mean 0 kills every term past i = 0 exactly
    env = EnvSpec.from_atoms(
        [EnvAtom(1.0, OffspringFamily.bernoulli(0.0), ImmigrationFamily.constant(4))]
    )
    model = ModelSpec(env=env, kappa=2.0, delta=0.5)
    for trunc in (0, 3, 9):
        draws = sample_stationary_backward_batch(model, trunc, RngState.from_seed(2), 64)
        assert np.all(draws == 4)


def test_backward_partial_sums_monotone_in_truncation():
    # terms share environments, so deepening K only ever adds mass
    model = two_atom_model()
    terms = backward_terms(model, 8, RngState.from_seed(9), 5000)
    assert terms.min() >= 0
    partial = np.cumsum(terms, axis=0)
    assert np.all(np.diff(partial, axis=0) >= 0)


def test_backward_mass_at_zero_matches_infinite_product():
    # coin config: P(X = 0) = prod_{k>=1} (1 - 2^-k); the product is an
    # absolutely convergent independent route to the same point mass
    env = EnvSpec.from_atoms(
        [EnvAtom(1.0, OffspringFamily.bernoulli(0.5), ImmigrationFamily.bernoulli(0.5))]
    )
    model = ModelSpec(env=env, kappa=2.0, delta=0.5)
    prod = 1.0
    k = 1
    while 2.0**-k > 1e-12:
        prod *= 1.0 - 2.0**-k
        k += 1
    draws = sample_stationary_backward_batch(model, 30, RngState.from_seed(77), 1_000_000)
    emp = float((draws == 0).mean())
    se = math.sqrt(prod * (1 - prod) / 1_000_000)
    assert abs(emp - prod) <= 4 * se


def test_backward_scalar_wrapper():
    s = sample_stationary_backward(two_atom_model(), 5, RngState.from_seed(3))
    assert s.truncation == 5
    assert s.value >= 0


def test_backward_rejects_negative_truncation():
    with pytest.raises(ValueError):
        sample_stationary_backward_batch(two_atom_model(), -1, RngState.from_seed(0), 8)


# ---- one-shot samplers ---------------------------------------------------------

def test_random_sum_with_constant_b_is_a_pure_thinning():
    model = two_atom_model()
    b_law = ImmigrationFamily.constant(2)
    draws = random_sum_batch(model, b_law, RngState.from_seed(27), 100_000)
    # mixture pmf of the 2-fold offspring sum over the two atoms
    def pmf(ks):
        return 0.5 * thinned_offspring_pmf(OffspringFamily.poisson(0.3), 2, ks) + 0.5 * thinned_offspring_pmf(
            OffspringFamily.poisson(0.9), 2, ks
        )

    assert chi_square_pvalue(draws, pmf) > 0.01


def test_composed_thinning_depth_zero_is_immigration():
    model = two_atom_model()
    draws = composed_thinning_batch(model, 0, RngState.from_seed(19), 100_000)
    law = ImmigrationFamily.discrete_pareto(2.0, 1.0)
    assert chi_square_pvalue(draws, lambda ks: immigration_pmf(law, ks)) > 0.01


def test_unit_progeny_mean_decays_geometrically():
    model = two_atom_model()
    rng = RngState.from_seed(23)
    means = [float(unit_progeny_batch(model, d, rng, 200_000).mean()) for d in (1, 2, 3)]
    # E m = 0.6 per stage
    for d, mean in zip((1, 2, 3), means):
        se = 3.0 / math.sqrt(200_000)  # loose bound on the sd
        assert abs(mean - 0.6**d) <= 4 * se


# ---- dumps ---------------------------------------------------------------------

def test_text_dump_round_trip(tmp_path):
    path = tmp_path / "samples.txt"
    data = np.array([0, 3, 17, 2**40], dtype=np.int64)
    write_samples_text(path, data)
    assert np.array_equal(read_samples_text(path), data)
    fdata = np.array([0.5, 1.25, 3.0])
    write_samples_text(path, fdata)
    assert np.allclose(read_samples_text(path), fdata)


def test_binary_dump_round_trip_and_magic(tmp_path):
    path = tmp_path / "samples.bin"
    data = np.array([0, 1, 2**62], dtype=np.uint64)
    write_samples_binary(path, data)
    assert np.array_equal(read_samples_binary(path), data)
    with open(path, "r+b") as fh:
        fh.write(b"NOTMAGIC")
    with pytest.raises(ValueError):
        read_samples_binary(path)


def test_binary_dump_rejects_floats_and_truncation(tmp_path):
    path = tmp_path / "samples.bin"
    with pytest.raises(ValueError):
        write_samples_binary(path, np.array([0.5]))
    write_samples_binary(path, np.arange(10, dtype=np.uint64))
    raw = path.read_bytes()
    path.write_bytes(raw[:-3])
    with pytest.raises(ValueError):
        read_samples_binary(path)


# ---- stream determinism ----------------------------------------------------------

def test_same_seed_same_draws():
    model = two_atom_model()
    a = sample_stationary_backward_batch(model, 6, RngState.from_seed(101), 512)
    b = sample_stationary_backward_batch(model, 6, RngState.from_seed(101), 512)
    assert np.array_equal(a, b)


def test_split_streams_are_stable_and_distinct():
    root = RngState.from_seed(5)
    a1 = root.split(1).gen.random(8)
    a2 = RngState.from_seed(5).split(1).gen.random(8)
    b = RngState.from_seed(5).split(2).gen.random(8)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
