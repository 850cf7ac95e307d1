from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stdgdd.costmodel import (
    HardwareProfile, StepCost, calibrate_profile, comm_time_one, fit_saturating, simulate_parallel_step,
    slab_system_times, speed_affine_capped, speed_saturating, step_comm, step_flops, step_walltime,
    substitution_per_apply, task_level_time, write_step_costs,
)
from stdgdd.partition import partition_elements, split_coarse
from stdgdd.schwarz import FlopLedger, TwoLevelPreconditioner

from conftest import make_system


def test_saturating_examples():
    assert speed_saturating(6.4325e4, 5.5827e10, 6.4325e4) == pytest.approx(2.79135e10, rel=1e-12)
    assert speed_saturating(9.0, 2.0, 1.0) == pytest.approx(1.8)
    assert speed_saturating(1e-12, 5e10, 6e4) < 1e-3


@given(st.floats(1, 1e12), st.floats(1e3, 1e12), st.floats(1, 1e8))
def test_saturating_below_cap(N, a, b):
    assert speed_saturating(N, a, b) < a


def test_affine_examples():
    assert speed_affine_capped(123.0, 0.0, 1e9, 2e9) == 1e9
    assert speed_affine_capped(1e4, 1e5, 0.0, 1e9) == 1e9
    assert speed_affine_capped(1e4, 1e4, 1e8, 1e10) == pytest.approx(2e8)


def test_step_flops_examples():
    assert step_flops(1, 0, [5, 3], [1, 1]) == 5
    assert substitution_per_apply([2, 7, 6], "hybrid") == 9
    assert substitution_per_apply([2, 7, 6], "additive") == 7
    assert step_flops(2, 10, [5, 3, 4], [2, 7, 6], "hybrid") == 2 * 5 + 10 * 9
    with pytest.raises(ValueError):
        step_flops(1, 1, [], [])
    with pytest.raises(ValueError):
        substitution_per_apply([1, 2], "multiplicative")


def test_walltime_examples():
    assert step_walltime(1, 0, [1e9 / 1e9], [0.0]) == 1.0
    assert step_walltime(0, 10, [0.0], [0.001, 0.002], "hybrid") == pytest.approx(0.03)
    T = [0.001, 0.004, 0.003]
    assert step_walltime(1, 7, T, T, "additive") <= step_walltime(1, 7, T, T, "hybrid")


def test_comm_examples():
    assert comm_time_one(1e5, 8, 1e-5, 1e-9, 2e-5) == pytest.approx(1.5e-4)
    assert comm_time_one(1e5, 1, 1e-5, 1e-9, 2e-5) == pytest.approx(1e-4 + 2e-5)
    t1 = comm_time_one(1e5, 4, 0, 1e-9, 0)
    assert comm_time_one(2e5, 4, 0, 1e-9, 0) == 2 * t1
    prof = HardwareProfile()
    assert step_comm(0, 1e5, 1e3, 8, prof) == 0.0
    custom = HardwareProfile(alpha_g=0, beta_g=0, gamma_g=1.5e-4, alpha_b=0, beta_b=0, gamma_b=5e-5)
    assert step_comm(100, 1e5, 1e3, 8, custom) == pytest.approx(0.02)
    times = [step_comm(5, 1e5, 1e3, P, prof) for P in (1, 2, 4, 8, 64)]
    assert all(b > a for a, b in zip(times, times[1:]))


def test_task_level_composition():
    rng = np.random.default_rng(0)
    for _ in range(50):
        levels = [(rng.random(rng.integers(1, 6)).tolist(), float(rng.random())) for _ in range(rng.integers(1, 5))]
        expect = sum(max(t) + c for t, c in levels)
        assert task_level_time(levels) == pytest.approx(expect, rel=1e-15)


def test_profile_validation_and_roundtrip(tmp_path):
    with pytest.raises(ValueError):
        HardwareProfile(a_fac_tri=0.0)
    with pytest.raises(ValueError):
        HardwareProfile(beta_g=-1.0)
    prof = HardwareProfile(alpha_g=3e-6, smax_sub=2e9)
    prof.write(tmp_path / "p.toml")
    assert HardwareProfile.read(tmp_path / "p.toml") == prof
    (tmp_path / "bad.toml").write_text("nonsense_key = 1\n")
    with pytest.raises(ValueError, match="unknown"):
        HardwareProfile.read(tmp_path / "bad.toml")


def test_channel_separation():
    prof = HardwareProfile()
    assert prof.speed("fac", "poly", 1e4) == speed_saturating(1e4, prof.a_fac_poly, prof.b_fac_poly)
    led = FlopLedger(sizes=np.array([1e4, 1e4]), flfac=np.array([1e9, 1e9]), flass=np.array([1e6, 1e6]),
                     factor_times=np.zeros(2), solve_times=np.zeros(2))
    st_ = slab_system_times(led, prof)
    assert st_.Tfac[0] == pytest.approx(1e9 / prof.speed("fac", "poly", 1e4))
    assert st_.Tfac[1] == pytest.approx(1e9 / prof.speed("fac", "tri", 1e4))
    assert st_.Tfac[0] != st_.Tfac[1]


def _ledger(nx=6, p=1, M=1, s=1, repeats=0):
    space, g, A = make_system(nx, nx, p=p)
    pc = TwoLevelPreconditioner(space, split_coarse(partition_elements(g, M), s, g), repeats=repeats)
    pc.factorize(A)
    return space, pc.ledger


def test_single_subdomain_no_comm():
    space, led = _ledger()
    quiet = HardwareProfile(alpha_g=0, beta_g=0, gamma_g=0, alpha_b=0, beta_b=0, gamma_b=0)
    cost, _ = simulate_parallel_step(led, 1, 3, 3, space.dim, 1, 1, quiet)
    assert cost.Tcomm == 0.0 and cost.costs == cost.Wtime


def test_equal_flops_max_is_any_entry():
    led = FlopLedger(sizes=np.array([100, 500, 500, 500]), flfac=np.array([7.0, 9.0, 9.0, 9.0]),
                     flass=np.array([1.0, 4.0, 4.0, 4.0]), factor_times=np.zeros(4), solve_times=np.zeros(4))
    cost, st_ = simulate_parallel_step(led, 1, 2, 2, 1500, 3, 1, HardwareProfile())
    assert cost.flm == 9.0 + 2 * (4.0 + 1.0)
    assert np.max(st_.Tfac[1:]) == st_.Tfac[1]


def test_cost_additivity(tmp_path):
    rows = [StepCost(m, 0.1 * m, 100, 2, 1, 10, 2, 5, 1, 1e6, 0.5 + m, 0.1, 0.6 + m) for m in range(4)]
    write_step_costs(tmp_path / "steps.csv", rows)
    lines = (tmp_path / "steps.csv").read_text().splitlines()
    assert lines[0].split(",") == list(StepCost.COLUMNS)
    total = sum(float(l.split(",")[-1]) for l in lines[1:])
    assert total == pytest.approx(sum(r.costs for r in rows), rel=1e-5)


def test_fit_saturating_recovers():
    N = np.geomspace(100, 1e6, 12)
    a, b = fit_saturating(N, speed_saturating(N, 3e9, 2e4))
    assert a == pytest.approx(3e9, rel=1e-6) and b == pytest.approx(2e4, rel=1e-6)


def test_measured_vs_synthetic_band():
    # the shipped profile describes another machine; calibrate one for this host first
    calib = [_ledger(nx, p, M, s, repeats=5)[1] for nx, p, M, s in [(6, 2, 2, 2), (10, 2, 4, 2), (12, 3, 4, 3),
                                                                     (16, 2, 8, 2)]]
    prof = calibrate_profile(calib)
    _, led = _ledger(14, 2, 4, 2, repeats=5)
    syn = slab_system_times(led, prof, "synthetic")
    mea = slab_system_times(led, prof, "measured")
    ratio = step_walltime(1, 20, syn.Tfac, syn.Tass) / step_walltime(1, 20, mea.Tfac, mea.Tass)
    assert 1 / 3 <= ratio <= 3


def test_infinite_cap_default():
    assert math.isinf(HardwareProfile().smax_fac)
