import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from wfenv.errors import DomainError
from wfenv.model import Environment, ModelParams, env_split, stream
from wfenv.moran import (MoranParams, MoranState, _hypergeometric, coupled_sup_discrepancies,
                         coupling_bound, fit_count_of, individual_terminal, moran_coupled_run,
                         moran_env_jump, moran_run, moran_terminal)
from wfenv.records import estimate
from wfenv.recursions import solve_wn


def test_params_and_state_validation():
    with pytest.raises(DomainError):
        MoranParams(0)
    with pytest.raises(DomainError):
        MoranParams(10, sigma_N=-1.0)
    with pytest.raises(DomainError):
        MoranState(10, 11)
    assert MoranParams.from_dict(MoranParams(5, 0.1, 0.2, 0.3).to_dict()) == MoranParams(5, 0.1, 0.2, 0.3)
    assert fit_count_of(0.3, 10) == 3
    with pytest.raises(DomainError):
        fit_count_of(0.33, 10)


def test_diffusion_scaling():
    mp = MoranParams.diffusion_scaled(ModelParams(2.0, 4.0, 0.25), 100)
    assert (mp.sigma_N, mp.theta_N, mp.nu0) == (0.02, 0.04, 0.25)


def test_env_jump_boundaries(rng):
    assert moran_env_jump(MoranState(10, 0), 0.7, rng).fit_count == 0
    assert moran_env_jump(MoranState(10, 10), 0.7, rng).fit_count == 10


def test_env_jump_mean_increment(rng):
    state = MoranState(100, 50)
    inc = np.array([moran_env_jump(state, 0.4, rng).fit_count - 50 for _ in range(100_000)])
    # E[H] = E[B] (1 - x) = N x dp (1 - x)
    e = estimate(inc, "jump")
    assert abs(e.value - 10.0) <= 3 * e.stderr


@given(st.integers(1, 60), st.data())
def test_env_jump_increment_bounds(N, data):
    k = data.draw(st.integers(0, N))
    dp = data.draw(st.floats(0.01, 0.99))
    new = moran_env_jump(MoranState(N, k), dp, np.random.default_rng(data.draw(st.integers(0, 99)))).fit_count
    assert 0 <= new - k <= N - k


def test_sequential_urn_hypergeometric(rng):
    N, marked, draws = 30, 12, 9
    xs = np.array([_hypergeometric(N, marked, draws, rng) for _ in range(40_000)])
    support = np.arange(0, 10)
    obs = np.array([(xs == s).sum() for s in support])
    exp = stats.hypergeom.pmf(support, N, marked, draws) * xs.size
    keep = exp > 5
    f_obs, f_exp = obs[keep], exp[keep] * obs[keep].sum() / exp[keep].sum()
    assert stats.chisquare(f_obs, f_exp).pvalue > 1e-3


def test_run_neutral_fixed_state_is_constant(rng):
    path = moran_run(MoranParams(20), Environment(5.0), 1.0, 5.0, rng)
    assert np.all(path.values == 1.0)


def test_run_first_move_is_up_from_zero(rng):
    mp = MoranParams(20, 0.0, 1.0, 1.0)
    for seed in range(20):
        path = moran_run(mp, Environment(5.0), 0.0, 5.0, np.random.default_rng(seed))
        assert path.values[1] == pytest.approx(1 / 20)


def test_run_rejects_off_grid_start(rng):
    with pytest.raises(DomainError):
        moran_run(MoranParams(10), Environment(1.0), 0.55, 1.0, rng)


def test_run_applies_environment_jumps():
    # with no events before the jump the update is binomial-hypergeometric
    mp = MoranParams(40, 0.0, 0.0, 0.5)
    env = Environment.from_jumps(2.0, [(1e-9, 0.5)])
    rng = np.random.default_rng(4)
    path = moran_run(mp, env, 0.5, 2.0, rng)
    assert np.all((path.values >= 0) & (path.values <= 1))


@given(st.integers(2, 40), st.floats(0, 2), st.floats(0, 2), st.integers(0, 10_000))
def test_path_stays_in_grid(N, s, th, seed):
    mp = MoranParams(N, s, th, 0.4)
    env = Environment.from_jumps(3.0, [(0.5, 0.4), (1.7, 0.9)])
    path = moran_run(mp, env, fit_count_of(round(N / 3) / N, N) / N, 3.0, np.random.default_rng(seed))
    k = path.values * N
    assert np.all((k >= -1e-9) & (k <= N + 1e-9))
    assert np.allclose(k, np.round(k))


def test_boundaries_absorb_without_mutation():
    mp = MoranParams(10, 1.0, 0.0, 0.5)
    env = Environment.from_jumps(50.0, [(5.0, 0.5), (20.0, 0.3)])
    for seed in range(30):
        path = moran_run(mp, env, 0.5, 50.0, np.random.default_rng(seed))
        hit = np.flatnonzero((path.values == 0.0) | (path.values == 1.0))
        if hit.size:
            assert np.all(path.values[hit[0]:] == path.values[hit[0]])


def test_terminal_reproducible():
    mp = MoranParams(30, 0.1, 0.1, 0.5)
    a, _ = moran_terminal(mp, 0.5, 5.0, 100, stream(2, 0))
    b, _ = moran_terminal(mp, 0.5, 5.0, 100, stream(2, 0))
    assert np.array_equal(a, b)


def test_terminal_observations_match_final():
    mp = MoranParams(30, 0.1, 0.1, 0.5)
    final, obs = moran_terminal(mp, 0.5, 5.0, 200, stream(3, 0), obs_times=[0.0, 2.5, 5.0])
    assert np.all(obs[:, 0] == 0.5)
    assert np.array_equal(obs[:, -1], final)


def test_individual_and_aggregate_backends_agree():
    mp = MoranParams(20, 0.5, 0.3, 0.4)
    env = Environment.from_jumps(2.0, [(0.5, 0.3), (1.2, 0.6)])
    agg, _ = moran_terminal(mp, 0.5, 2.0, 6000, stream(5, 0), omega=env)
    ind = individual_terminal(mp, env, 0.5, 2.0, 6000, stream(5, 1))
    for n in (1, 2):
        a, b = estimate(agg ** n, "agg"), estimate(ind ** n, "ind")
        assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)


def test_long_run_mean_matches_stationary_moment():
    # sigma_N = sigma / N and theta_N = theta / N with time sped up by N
    mp = MoranParams(50, 0.02, 0.02, 0.5)
    final, _ = moran_terminal(mp, 0.5, 50 * 10.0, 4000, stream(1, 0))
    w = solve_wn(ModelParams(1.0, 1.0, 0.5))
    e = estimate(1.0 - final, "moran")
    assert abs(e.value - w.values[1]) <= 3 * e.stderr


def test_coupling_identical_when_no_small_jumps(rng):
    env = Environment.from_jumps(1.0, [(0.3, 0.4), (0.6, 0.5)])
    a, b, sup = moran_coupled_run(MoranParams(50, 0.3, 0.2, 0.5), env, 0.1, 0.5, 1.0, rng)
    assert sup == 0.0
    assert np.array_equal(a.values, b.values)


def test_coupling_paths_start_together(rng):
    env = Environment.from_jumps(1.0, [(0.3, 0.05), (0.6, 0.5)])
    a, b, sup = moran_coupled_run(MoranParams(50, 0.3, 0.2, 0.5), env, 0.1, 0.5, 1.0, rng)
    assert a.values[0] == b.values[0] == 0.5
    assert sup == pytest.approx(np.max(np.abs(a.values - b.values)))


def test_coupling_bound_with_only_small_jumps():
    env = Environment.from_jumps(1.0, [(0.2, 0.03), (0.5, 0.04), (0.8, 0.02)])
    sups = coupled_sup_discrepancies(MoranParams(100, 0.0, 0.0, 0.5), env, 0.1, 0.5, 1.0, 10_000,
                                     stream(6, 0))
    e = estimate(sups, "coupled")
    bound = coupling_bound(env, 0.1, 0.0, 1.0)
    assert bound == pytest.approx(0.09 * math.exp(1.0 + 0.09))
    assert e.value <= bound + 3 * e.stderr


def test_coupling_discrepancy_shrinks_with_mutation():
    env = Environment.from_jumps(2.0, [(0.2, 0.05), (0.4, 0.05), (0.6, 0.05)])
    means = []
    for th in (0.0, 5.0, 40.0):
        mp = MoranParams(50, 0.0, th, 1.0)
        sups = coupled_sup_discrepancies(mp, env, 0.1, 0.5, 2.0, 2000, stream(7, int(th)))
        means.append(sups.mean())
    assert means[0] > means[1] > means[2]
    assert means[2] < 0.01


def test_coupling_bound_reads_sigma_N():
    env = Environment.from_jumps(2.0, [(0.5, 0.05), (1.0, 0.4)])
    big, small = env_split(env, 0.1)
    assert coupling_bound(env, 0.1, 0.5, 2.0) == pytest.approx(0.05 * math.exp(1.5 * 2.0 + 0.45))
