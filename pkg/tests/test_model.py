import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.special import comb

from wfenv.errors import DomainError
from wfenv.model import (BACKWARD, FORWARD, Environment, LevyMeasure, ModelParams, SigmaTable,
                         env_reverse, env_sample, env_sample_batch, env_split, sigma_mk, stream)

atoms = st.lists(
    st.tuples(st.floats(0.01, 5.0), st.floats(0.01, 0.99)),
    min_size=1, max_size=4, unique_by=lambda a: a[1],
).map(lambda xs: LevyMeasure(tuple(xs)))


def test_params_nu1_is_derived():
    p = ModelParams(sigma=1.0, theta=2.0, nu0=0.3)
    assert p.nu0 + p.nu1 == 1.0
    assert p.theta0 == pytest.approx(0.6)
    assert ModelParams.from_dict(p.to_dict()) == p


@pytest.mark.parametrize("kw", [{"sigma": -1}, {"theta": -0.1}, {"nu0": 1.5}, {"sigma": math.nan}])
def test_params_rejects_bad_values(kw):
    with pytest.raises(DomainError):
        ModelParams(**kw)


def test_params_from_dict_names_missing_key():
    with pytest.raises(DomainError, match="nu0"):
        ModelParams.from_dict({"sigma": 1, "theta": 1})


def test_levy_measure_validation():
    with pytest.raises(DomainError):
        LevyMeasure(((1.0, 0.3), (2.0, 0.3)))
    with pytest.raises(DomainError):
        LevyMeasure(((1.0, 1.0),))
    with pytest.raises(DomainError):
        LevyMeasure(((0.0, 0.5),))
    mu = LevyMeasure(((1.0, 0.2), (2.0, 0.6)))
    assert mu.total_mass == 3.0
    assert mu.first_moment == pytest.approx(1.4)
    assert LevyMeasure.from_dict(mu.to_dict()) == mu


def test_truncation_records_lost_first_moment():
    mu = LevyMeasure(((1.0, 0.05), (2.0, 0.02), (1.0, 0.5)))
    t = mu.truncated(0.1)
    assert t.atoms == ((1.0, 0.5),)
    assert t.truncation_delta == 0.1
    assert t.first_moment_below_delta == pytest.approx(0.09)


def test_sigma_mk_examples():
    assert sigma_mk(LevyMeasure(((1.0, 0.5),)), 2, 1) == 0.25
    assert sigma_mk(LevyMeasure(((2.0, 0.3),)), 3, 3) == pytest.approx(0.054, rel=1e-14)
    # brute-force atom sum in exact rationals: 0.2^2 0.8^2 + 0.7^2 0.3^2
    exact = Fraction(1, 5) ** 2 * Fraction(4, 5) ** 2 + Fraction(7, 10) ** 2 * Fraction(3, 10) ** 2
    assert sigma_mk(LevyMeasure(((1.0, 0.2), (1.0, 0.7))), 4, 2) == pytest.approx(float(exact), rel=1e-14)


@pytest.mark.parametrize("m,k", [(2, 0), (2, 3), (0, 0)])
def test_sigma_mk_domain(m, k):
    with pytest.raises(DomainError):
        sigma_mk(LevyMeasure(((1.0, 0.5),)), m, k)


@given(atoms, st.integers(1, 40))
def test_sigma_table_rows_sum_to_lambda(mu, m):
    tab = SigmaTable(mu, m)
    lam = sum(c * (1.0 - (1.0 - p) ** m) for c, p in mu.atoms)
    total = math.fsum(tab.weighted[m, 1:m + 1])
    assert abs(total - lam) <= 1e-12 * lam
    assert tab.lam(m) == pytest.approx(lam, rel=1e-12)


@given(atoms, st.integers(1, 25))
def test_sigma_table_entries_match_direct_sum(mu, m):
    tab = SigmaTable(mu, m)
    for k in range(1, m + 1):
        direct = sum(c * p ** k * (1 - p) ** (m - k) for c, p in mu.atoms)
        assert tab.entries[m, k] == pytest.approx(direct, rel=1e-11, abs=1e-300)
        assert tab.weighted[m, k] == pytest.approx(comb(m, k) * direct, rel=1e-10, abs=1e-300)


@given(atoms, st.integers(1, 20))
def test_sigma_mk_nonincreasing_in_m(mu, k):
    vals = [sigma_mk(mu, m, k) for m in range(k, k + 10)]
    assert all(b <= a for a, b in zip(vals, vals[1:]))


@given(atoms, st.integers(2, 20))
def test_gamma_nondecreasing_in_j(mu, i):
    tab = SigmaTable(mu, 2 * i)
    g = [tab.gamma(i, j) for j in range(1, i)]
    assert all(v >= 0 for v in g)
    assert all(b >= a - 1e-15 for a, b in zip(g, g[1:]))


def test_gamma_direct_definition():
    mu = LevyMeasure(((1.0, 0.3), (0.5, 0.8)))
    tab = SigmaTable(mu, 20)
    for i in range(2, 9):
        for j in range(1, i):
            direct = sum(comb(j, k) * sigma_mk(mu, j, k) for k in range(max(i - j, 1), j + 1))
            assert tab.gamma(i, j) == pytest.approx(direct, rel=1e-12, abs=1e-15)


def test_env_sample_empty_measure():
    env = env_sample(LevyMeasure(), 5.0, 1)
    assert env.n_jumps == 0 and env.horizon == 5.0
    with pytest.raises(DomainError):
        env_sample(LevyMeasure(), 5.0, 1, require_jump=True)


def test_env_sample_poisson_count():
    mu = LevyMeasure(((2.0, 0.4),))
    counts = np.array([env_sample(mu, 10.0, stream(3, i)).n_jumps for i in range(10_000)])
    se = math.sqrt(20.0 / counts.size)
    assert abs(counts.mean() - 20.0) <= 3 * se
    assert abs(counts.var() - 20.0) <= 0.1 * 20.0


def test_env_sample_deterministic_and_ordered():
    mu = LevyMeasure(((1.0, 0.3), (2.0, 0.6)))
    a = env_sample(mu, 4.0, 11)
    b = env_sample(mu, 4.0, 11)
    assert a == b
    assert all(t1 < t2 for t1, t2 in zip(a.times, a.times[1:]))
    assert set(a.peaks) <= {0.3, 0.6}


def test_env_sample_peak_frequencies():
    mu = LevyMeasure(((1.0, 0.3), (3.0, 0.6)))
    peaks = np.concatenate([env_sample(mu, 5.0, stream(8, i)).peak_array() for i in range(2000)])
    frac = np.mean(peaks == 0.6)
    assert abs(frac - 0.75) <= 3 * math.sqrt(0.75 * 0.25 / peaks.size)


def test_env_sample_batch_matches_law():
    mu = LevyMeasure(((1.5, 0.2),))
    t, p, off = env_sample_batch(mu, 2.0, 20_000, stream(5, 0))
    counts = np.diff(off)
    assert abs(counts.mean() - 3.0) <= 3 * math.sqrt(3.0 / counts.size)
    assert abs(counts.var() - 3.0) <= 0.1 * 3.0
    for i in range(50):
        seg = t[off[i]:off[i + 1]]
        assert np.all(np.diff(seg) > 0) and np.all((seg >= 0) & (seg <= 2.0))


def test_env_split_examples():
    env = Environment.from_jumps(3.0, [(1.0, 0.3), (2.0, 0.05)])
    big, small = env_split(env, 0.1)
    assert big.jumps == [(1.0, 0.3)] and small.jumps == [(2.0, 0.05)]
    big, small = env_split(env, 1.0 - 1e-12)
    assert big.n_jumps == 0 and small == env
    big, small = env_split(env, 1e-12)
    assert big == env and small.n_jumps == 0


jump_lists = st.lists(st.tuples(st.floats(0.0, 5.0), st.floats(0.001, 0.999)),
                      max_size=8, unique_by=lambda j: j[0])


@given(jump_lists, st.floats(0.001, 0.999))
def test_env_split_then_merge_is_identity(jumps, delta):
    env = Environment.from_jumps(5.0, jumps)
    big, small = env_split(env, delta)
    assert big.merge(small) == env
    assert big.n_jumps + small.n_jumps == env.n_jumps


def test_env_reverse_examples():
    env = Environment.from_jumps(10.0, [(3.0, 0.2)])
    r = env_reverse(env)
    assert r.jumps == [(7.0, 0.2)] and r.orientation == BACKWARD
    assert env_reverse(Environment(4.0)).n_jumps == 0
    env = Environment.from_jumps(5.0, [(1.0, 0.1), (4.0, 0.5)])
    rr = env_reverse(env_reverse(env))
    assert rr == env and rr.orientation == FORWARD


@given(st.lists(st.tuples(st.integers(0, 64), st.floats(0.001, 0.999)), max_size=8,
                unique_by=lambda j: j[0]))
def test_env_reverse_involution_on_dyadic_times(jumps):
    env = Environment.from_jumps(8.0, [(k / 8.0, p) for k, p in jumps])
    assert env_reverse(env_reverse(env)) == env


def test_environment_validation():
    with pytest.raises(DomainError):
        Environment.from_jumps(1.0, [(0.5, 0.2), (0.5, 0.3)])
    with pytest.raises(DomainError):
        Environment.from_jumps(1.0, [(1.5, 0.2)])
    with pytest.raises(DomainError):
        Environment.from_jumps(1.0, [(0.5, 1.0)])
    with pytest.raises(DomainError, match="dp"):
        Environment.from_dict({"horizon": 1.0, "jumps": [{"t": 0.5}]})


def test_environment_omega_restricted_and_json():
    env = Environment.from_jumps(4.0, [(1.0, 0.2), (2.0, 0.3), (3.0, 0.1)])
    assert env.omega(2.0) == pytest.approx(0.5)
    assert env.total() == pytest.approx(0.6)
    sub = env.restricted(1.0, 3.0)
    assert sub.horizon == 2.0 and sub.jumps == [(1.0, 0.3), (2.0, 0.1)]
    assert Environment.from_dict(env.to_dict()) == env
    assert env.digest() == Environment.from_dict(env.to_dict()).digest()
    assert env.digest() != env_reverse(env).digest()


def test_streams_are_reproducible_and_distinct():
    a = stream(7, 1, 2).random(5)
    assert np.array_equal(a, stream(7, 1, 2).random(5))
    assert not np.array_equal(a, stream(7, 2, 1).random(5))
    assert not np.array_equal(a, stream(8, 1, 2).random(5))
