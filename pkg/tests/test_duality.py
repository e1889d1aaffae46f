import math

import numpy as np
import pytest

from wfenv.duality import (UPPER, ancestral_check, absorption_check, annealed_grid, coupling_check,
                           dual_power, duality_check_annealed, duality_check_quenched, fearnhead_check,
                           mixed_env_check, moran_diffusion_check, pass_fraction, quenched_grid,
                           reinforced_duality_check, siegmund_grid)
from wfenv.errors import DomainError
from wfenv.model import Environment, LevyMeasure, ModelParams
from wfenv.moran import MoranParams
from wfenv.records import DAGGER
from wfenv.spectral import KILLED, build_decomposition, quenched_moment_coeffs, quenched_moment_eval

P = ModelParams(1.0, 1.0, 0.5)
MU = LevyMeasure(((0.5, 0.3),))


def test_dual_power():
    R = np.array([0, 1, 3, DAGGER])
    assert np.allclose(dual_power(R, 0.5), [1.0, 0.5, 0.125, 0.0])
    assert np.allclose(dual_power(R, 1.0), [1.0, 0.0, 0.0, 0.0])


@pytest.mark.parametrize("x,expect", [(0.0, 1.0), (1.0, 0.0)])
def test_boundary_cases_are_exact_without_mutation(x, expect):
    r = duality_check_annealed(ModelParams(1.0, 0.0, 0.5), MU, 2, x, 1.0, 500, 0)
    assert r.lhs.value == expect and r.rhs.value == expect and r.passed


def test_annealed_check_passes():
    reports = annealed_grid(P, MU, [1, 2], [0.2, 0.5, 0.8], 1.0, 20_000, 11)
    assert pass_fraction(reports) >= 5 / 6
    r = reports[0]
    assert r.lhs.replicates == r.rhs.replicates == 20_000
    assert set(r.to_dict()) == {"lhs", "rhs", "z", "pass", "seeds", "config", "rule"}


def test_reports_reproduce_from_seed():
    a = duality_check_annealed(P, MU, 2, 0.5, 1.0, 2000, 5).to_dict()
    b = duality_check_annealed(P, MU, 2, 0.5, 1.0, 2000, 5).to_dict()
    c = duality_check_annealed(P, MU, 2, 0.5, 1.0, 2000, 6).to_dict()
    assert a == b and a != c


def test_standard_error_scales_with_replicates():
    small = duality_check_annealed(P, MU, 1, 0.5, 1.0, 5000, 3)
    big = duality_check_annealed(P, MU, 1, 0.5, 1.0, 20_000, 3)
    for s, b in ((small.lhs, big.lhs), (small.rhs, big.rhs)):
        assert b.stderr / s.stderr == pytest.approx(0.5, rel=0.2)


def test_quenched_check_against_spectral_value():
    omega = Environment.from_jumps(2.0, [(1.0, 0.5)])
    p = ModelParams(0.0, 1.0, 0.5)
    r = duality_check_quenched(p, omega, 1, 0.5, 2.0, 20_000, 4)
    assert r.passed
    dec = build_decomposition(KILLED, 1.0, 0.5, 32)
    exact = quenched_moment_eval(quenched_moment_coeffs(dec, omega, 1), dec, 1, 0.5)
    for est in (r.lhs, r.rhs):
        assert abs(est.value - exact) <= 4 * est.stderr


def test_quenched_jump_at_horizon():
    omega = Environment.from_jumps(1.0, [(0.4, 0.3), (1.0, 0.6)])
    reports = quenched_grid(P, omega, [1, 2], [0.3, 0.7], 1.0, 20_000, 8)
    assert pass_fraction(reports) >= 0.75
    # the jump at T must move the dual side: dropping it changes the value clearly
    bare = quenched_grid(P, omega.restricted(0.0, 0.9999), [2], [0.3], 0.9999, 20_000, 8)[0]
    assert abs(bare.rhs.value - reports[2].rhs.value) > 5 * bare.rhs.stderr


def test_reinforced_check():
    reports = reinforced_duality_check(P, LevyMeasure(((2.0, 0.3),)), 2, 0.5, 1.0, [0.0, 0.25, 0.6, 10.0],
                                       20_000, 9)
    assert len(reports) == 3 and pass_fraction(reports) >= 2 / 3
    assert "surrogate" in reports[0].note


def test_ancestral_checks():
    neutral = ancestral_check(ModelParams(1.0, 0.0, 0.5), LevyMeasure(((1.0, 0.2),)), 0.3, 2.0, 20_000, 12)
    assert neutral.passed
    long_run = ancestral_check(ModelParams(0.5, 1.0, 0.5), LevyMeasure(((0.5, 0.4),)), 0.3, None, 20_000, 13)
    assert long_run.passed and long_run.rhs.stderr == 0.0


def test_solver_checks():
    mu = LevyMeasure(((1.0, 0.3),))
    assert pass_fraction(absorption_check(P, mu, [1, 2, 3], 20_000, 14)) >= 2 / 3
    assert pass_fraction(fearnhead_check(ModelParams(1.0, 0.5, 0.5), mu, [1, 2], 10_000, 15)) >= 0.5


def test_siegmund_grid_small():
    reports = siegmund_grid(P, MU, [1, 3], [2, 4], [0.5], 20_000, 16)
    assert len(reports) == 4 and pass_fraction(reports) >= 0.75


def test_mixed_environment_check():
    reports = mixed_env_check(ModelParams(0.0, 2.0, 0.5), LevyMeasure(((1.0, 0.3),)),
                              Environment.from_jumps(1.0, [(0.5, 0.4)]), [1, 2], 10_000, 17, burn_in=5.0)
    assert pass_fraction(reports) >= 0.5
    with pytest.raises(DomainError):
        mixed_env_check(P, MU, Environment(1.0), [1], 100, 0)


def test_moran_limit_check():
    reports = moran_diffusion_check(ModelParams(1.0, 1.0, 0.5), MU, [1, 2], 0.4, 0.5, 200, 10_000, 18,
                                    moran_replicates=2000)
    assert pass_fraction(reports) >= 0.5


def test_coupling_check_is_one_sided():
    omega = Environment.from_jumps(1.0, [(0.3, 0.3), (0.2, 0.02), (0.5, 0.02)])
    r = coupling_check(MoranParams.diffusion_scaled(ModelParams(1.0, 1.0, 0.5), 50), omega, 0.1, 0.5, 1.0, 1000, 19)
    assert r.rule == UPPER and r.passed and r.rhs.stderr == 0.0


def test_argument_checks():
    with pytest.raises(DomainError):
        duality_check_annealed(P, MU, 0, 0.5, 1.0, 10, 0)
    with pytest.raises(DomainError):
        duality_check_annealed(P, MU, 1, 1.5, 1.0, 10, 0)
    with pytest.raises(DomainError):
        pass_fraction([])
