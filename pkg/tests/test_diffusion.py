import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wfenv.diffusion import (DiffusionConfig, diffusion_ensemble, diffusion_jump,
                             diffusion_run_annealed, diffusion_run_quenched)
from wfenv.errors import DomainError
from wfenv.model import BACKWARD, Environment, LevyMeasure, ModelParams, env_reverse, stream
from wfenv.records import estimate

# E[(1 - X(1))^n | x] at sigma = 0, mu = 0, theta = 0.5, nu0 = 0.5, from the
# matrix exponential of the truncated killed-chain generator.
NEUTRAL_MOMENTS = {
    (1, 0.2): 0.6819591979134404, (1, 0.5): 0.4999999999997609, (1, 0.8): 0.31804080208608143,
    (2, 0.2): 0.5948088560052268, (2, 0.5): 0.4083688219384529, (2, 0.8): 0.23089046017788772,
    (3, 0.2): 0.5447145201227179, (3, 0.5): 0.36255323290782143, (3, 0.8): 0.19383445415223877,
}


def test_config_validation():
    p = ModelParams()
    with pytest.raises(DomainError):
        DiffusionConfig(p, dt=0.0)
    with pytest.raises(DomainError):
        DiffusionConfig(p, dt=2.0, horizon=1.0)
    with pytest.raises(DomainError):
        DiffusionConfig(p, boundary="reflect")
    assert DiffusionConfig(p).dt == 1e-4


def test_jump_examples():
    assert diffusion_jump(0.0, 0.4) == 0.0
    assert diffusion_jump(1.0, 0.4) == 1.0
    assert diffusion_jump(0.5, 0.5) == 0.625
    with pytest.raises(DomainError):
        diffusion_jump(1.2, 0.5)
    with pytest.raises(DomainError):
        diffusion_jump(0.5, 1.0)


def test_jump_map_grid():
    xs = np.linspace(0.0, 1.0, 1001)
    for dp in (0.05, 0.5, 0.95):
        ys = np.array([diffusion_jump(x, dp) for x in xs])
        assert np.all((ys >= 0) & (ys <= 1))
        # increasing up to the vertex (1 + dp) / (2 dp) of the parabola, which lies beyond 1
        assert np.all(np.diff(ys) > 0)


def test_jumps_do_not_add():
    once = diffusion_jump(0.5, 0.6)
    twice = diffusion_jump(diffusion_jump(0.5, 0.3), 0.3)
    assert once != twice


def test_deterministic_skeleton_one_jump():
    cfg = DiffusionConfig(ModelParams(0.0, 0.0, 0.5), dt=0.01, horizon=1.0, noise=False)
    env = Environment.from_jumps(1.0, [(0.5, 0.5)])
    path = diffusion_run_quenched(cfg, env, 0.3, 0)
    assert np.all(path.values[path.times < 0.5] == 0.3)
    assert path.values[-1] == pytest.approx(0.3 + 0.3 * 0.7 * 0.5)
    assert path.at(0.5) == pytest.approx(0.405)


def test_noise_off_follows_drift_ode():
    p = ModelParams(0.0, 1.0, 0.5)
    cfg = DiffusionConfig(p, dt=1e-4, horizon=1.0, noise=False)
    path = diffusion_run_quenched(cfg, Environment(1.0), 0.2, 0)
    # dx = theta (nu0 - x) dt
    assert path.final == pytest.approx(0.5 - 0.3 * math.exp(-1.0), abs=1e-4)


def test_zero_is_absorbing_without_mutation():
    cfg = DiffusionConfig(ModelParams(1.0, 0.0, 0.5), dt=1e-3, horizon=1.0)
    env = Environment.from_jumps(1.0, [(0.5, 0.5)])
    path = diffusion_run_quenched(cfg, env, 0.0, 1)
    assert np.all(path.values == 0.0)


def test_orientation_and_horizon_are_checked():
    cfg = DiffusionConfig(ModelParams(), dt=1e-3, horizon=2.0)
    with pytest.raises(DomainError):
        diffusion_run_quenched(cfg, env_reverse(Environment(2.0)), 0.5, 0)
    with pytest.raises(DomainError):
        diffusion_run_quenched(cfg, Environment(1.0), 0.5, 0)


def test_jump_at_time_zero_is_not_applied():
    cfg = DiffusionConfig(ModelParams(), dt=0.1, horizon=1.0, noise=False)
    path = diffusion_run_quenched(cfg, Environment.from_jumps(1.0, [(0.0, 0.5)]), 0.5, 0)
    assert path.final == 0.5


@given(st.floats(0, 3), st.floats(0, 3), st.floats(0, 1), st.floats(0, 1),
       st.sampled_from(["beta", "clip"]), st.integers(0, 1000))
def test_states_stay_in_unit_interval(s, th, nu0, x0, boundary, seed):
    cfg = DiffusionConfig(ModelParams(s, th, nu0), dt=0.01, horizon=1.0, boundary=boundary)
    env = Environment.from_jumps(1.0, [(0.3, 0.7), (0.9, 0.2)])
    path = diffusion_run_quenched(cfg, env, x0, seed)
    assert np.all((path.values >= 0) & (path.values <= 1))


def test_reproducible_runs():
    cfg = DiffusionConfig(ModelParams(1.0, 1.0, 0.5), dt=1e-3)
    mu = LevyMeasure(((1.0, 0.3),))
    a, ea = diffusion_run_annealed(cfg, mu, 0.5, 3)
    b, eb = diffusion_run_annealed(cfg, mu, 0.5, 3)
    assert ea == eb and np.array_equal(a.values, b.values)


def test_annealed_empty_measure_is_classical():
    cfg = DiffusionConfig(ModelParams(0.0, 0.5, 0.5), dt=2e-3)
    a = diffusion_ensemble(cfg, 0.2, 20_000, stream(1, 0), mu=LevyMeasure()).final
    e = estimate(1 - a, "x")
    assert abs(e.value - NEUTRAL_MOMENTS[(1, 0.2)]) <= 3 * e.stderr
    assert np.all(diffusion_ensemble(cfg, 0.2, 10, stream(1, 0), mu=LevyMeasure()).jump_total == 0)


@pytest.mark.parametrize("x", [0.2, 0.5, 0.8])
def test_neutral_moments_match_exact_values(x):
    cfg = DiffusionConfig(ModelParams(0.0, 0.5, 0.5), dt=2e-3)
    final = diffusion_ensemble(cfg, x, 100_000, stream(2, int(10 * x))).final
    for n in (1, 2, 3):
        e = estimate((1 - final) ** n, "x")
        assert abs(e.value - NEUTRAL_MOMENTS[(n, x)]) <= 3 * e.stderr


def test_stationary_mean_is_nu1():
    cfg = DiffusionConfig(ModelParams(0.0, 1.0, 0.5), dt=2e-3, horizon=5.0)
    final = diffusion_ensemble(cfg, 0.9, 100_000, stream(3, 0)).final
    e = estimate(1 - final, "x")
    # residual relaxation (0.4 e^-5) is far below the standard error
    assert abs(e.value - 0.5 - (0.1 - 0.5) * math.exp(-5.0)) <= 3 * e.stderr


def test_submartingale_without_mutation():
    cfg = DiffusionConfig(ModelParams(1.0, 0.0, 0.5), dt=2e-3, horizon=1.0)
    mu = LevyMeasure(((1.0, 0.2),))
    e = estimate(diffusion_ensemble(cfg, 0.3, 50_000, stream(4, 0), mu=mu).final, "x")
    assert e.value >= 0.3 - 3 * e.stderr


def test_halving_dt_changes_less_than_noise():
    p = ModelParams(1.0, 1.0, 0.5)
    mu = LevyMeasure(((0.5, 0.3),))
    ests = []
    for k, dt in enumerate((4e-3, 2e-3)):
        f = diffusion_ensemble(DiffusionConfig(p, dt=dt), 0.2, 100_000, stream(5, k), mu=mu).final
        ests.append([estimate((1 - f) ** n, "x") for n in (1, 2)])
    for a, b in zip(*ests):
        assert abs(a.value - b.value) <= 3 * math.hypot(a.stderr, b.stderr)


def test_jump_totals_recorded():
    cfg = DiffusionConfig(ModelParams(), dt=0.01, horizon=1.0)
    env = Environment.from_jumps(2.0, [(0.3, 0.2), (0.7, 0.1), (1.5, 0.4)])
    ens = diffusion_ensemble(cfg, 0.5, 5, 0, omega=env)
    assert np.allclose(ens.jump_total, 0.3)


def test_observation_grid():
    cfg = DiffusionConfig(ModelParams(), dt=0.01, horizon=1.0, noise=False)
    env = Environment.from_jumps(1.0, [(0.5, 0.5)])
    ens = diffusion_ensemble(cfg, 0.5, 3, 0, omega=env, obs_times=[0.0, 0.5, 1.0])
    assert np.allclose(ens.values, [[0.5, 0.625, 0.625]] * 3)
    with pytest.raises(DomainError):
        diffusion_ensemble(cfg, 0.5, 3, 0, obs_times=[0.5, 0.2])


def test_ensemble_argument_checks():
    cfg = DiffusionConfig(ModelParams(), dt=0.01)
    with pytest.raises(DomainError):
        diffusion_ensemble(cfg, 0.5, 3, 0, omega=Environment(1.0), mu=LevyMeasure())
    with pytest.raises(DomainError):
        diffusion_ensemble(cfg, [0.1, 0.2], 3, 0)
    with pytest.raises(DomainError):
        diffusion_ensemble(cfg, 1.5, 3, 0)
    with pytest.raises(DomainError):
        diffusion_ensemble(cfg, 0.5, 1, 0, omega=Environment(1.0, orientation=BACKWARD))


def test_clip_policy_is_available():
    cfg = DiffusionConfig(ModelParams(0.0, 0.5, 0.5), dt=1e-3, boundary="clip")
    f = diffusion_ensemble(cfg, 0.5, 1000, 0).final
    assert np.all((f >= 0) & (f <= 1))
