import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from drumrl import oracle
from drumrl.oracle import BurnupStep, CoreResponse, DomainError, OracleParams

PARAMS = oracle.default_params()
angles = st.integers(0, 180)
configs = st.tuples(*[angles] * 6)
steps = st.sampled_from(list(BurnupStep))


def test_worth_curve_endpoints():
    assert oracle.worth_curve(0) == 0.0
    assert oracle.worth_curve(180) == 1.0
    assert oracle.worth_curve(90) == pytest.approx(0.5, abs=1e-15)


@pytest.mark.parametrize("bad", [-1, 180.5, 361])
def test_worth_curve_domain(bad):
    with pytest.raises(DomainError):
        oracle.worth_curve(bad)


def test_worth_curve_monotone():
    w = [oracle.worth_curve(t) for t in range(181)]
    assert all(b >= a for a, b in zip(w, w[1:]))


def test_default_params_are_calibrated():
    assert OracleParams() == PARAMS


def test_critical_at_calibration_target():
    assert oracle.k_eff((91,) * 6, BurnupStep.YR0, PARAMS) == pytest.approx(1.0, abs=1e-12)
    assert oracle.k_eff((113,) * 6, BurnupStep.YR2, PARAMS) == pytest.approx(1.0, abs=1e-12)
    assert oracle.k_eff((136,) * 6, BurnupStep.YR4, PARAMS) == pytest.approx(1.0, abs=1e-12)


def test_all_zero_angles_gives_base_k():
    assert oracle.k_eff((0,) * 6, BurnupStep.YR0, PARAMS) == PARAMS.base_k[0]


def test_calibrate_endpoints():
    p = oracle.calibrate({"YR0": 180, "YR2": 0, "YR4": 90})
    assert p.base_k[0] == pytest.approx(1 - 0.05 - 6 * 0.002, abs=1e-15)
    assert p.base_k[1] == 1.0
    with pytest.raises(DomainError):
        oracle.calibrate({"YR0": 181, "YR2": 0, "YR4": 90})


@pytest.mark.parametrize("step", list(BurnupStep))
def test_calibration_recovered_by_bisection(step):
    target = oracle.DEFAULT_TARGETS[step]
    assert abs(oracle.critical_angle(step, PARAMS) - target) < 1e-6


def test_rotation_leaves_k_unchanged():
    cfg = (10, 50, 90, 120, 170, 3)
    rot = cfg[-1:] + cfg[:-1]
    assert oracle.k_eff(rot, 1, PARAMS) == oracle.k_eff(cfg, 1, PARAMS)


def test_uniform_config_has_flat_powers():
    for a in (0, 45, 91, 180):
        assert oracle.hexant_powers((a,) * 6, 0, PARAMS) == pytest.approx((1 / 6,) * 6, abs=1e-15)


def test_lowered_drum_depresses_its_hexant():
    p = OracleParams(neighbor_kernel=(1.0, 0, 0, 0, 0, 0), tilt_gain=0.6)
    powers = oracle.hexant_powers((60, 90, 90, 90, 90, 90), 0, p)
    assert powers[0] < 1 / 6
    assert all(x > 1 / 6 for x in powers[1:])


def test_extreme_single_drum_tilt_bracket():
    hptrs = []
    for lo in (0, 180):
        cfg = [90] * 6
        cfg[0] = lo
        hptrs.append(6 * max(oracle.hexant_powers(cfg, 0, PARAMS)))
    assert 1.05 < max(hptrs) < 1.3


def test_symmetry_op_examples():
    cfg = (1, 2, 3, 4, 5, 6)
    resp = CoreResponse(1.0, (0.1, 0.2, 0.3, 0.15, 0.15, 0.1))
    assert oracle.apply_symmetry(0, cfg, resp) == (cfg, resp)
    c1, r1 = oracle.apply_symmetry(1, cfg, resp)
    assert c1 == (6, 1, 2, 3, 4, 5)
    assert r1.powers == (0.1, 0.1, 0.2, 0.3, 0.15, 0.15)
    c, r = cfg, resp
    for _ in range(6):
        c, r = oracle.apply_symmetry(1, c, r)
    assert (c, r) == (cfg, resp)
    with pytest.raises(DomainError):
        oracle.apply_symmetry(12, cfg, resp)


def test_twelve_distinct_permutations():
    perms = {oracle.symmetry_permutation(i) for i in range(12)}
    assert len(perms) == 12


@settings(max_examples=200, deadline=None)
@given(configs, steps, st.integers(0, 11))
def test_symmetry_invariance_and_equivariance(cfg, step, op):
    resp = oracle.evaluate(cfg, step, PARAMS)
    new_cfg, expected = oracle.apply_symmetry(op, cfg, resp)
    actual = oracle.evaluate(new_cfg, step, PARAMS)
    assert actual.k_eff == resp.k_eff
    np.testing.assert_allclose(actual.powers, expected.powers, rtol=0, atol=1e-12)


@settings(max_examples=200, deadline=None)
@given(configs, steps)
def test_powers_normalised_and_positive(cfg, step):
    p = oracle.hexant_powers(cfg, step, PARAMS)
    assert abs(math.fsum(p) - 1.0) <= 1e-12
    assert min(p) > 0


@settings(max_examples=100, deadline=None)
@given(configs, steps, st.integers(0, 5), st.integers(0, 179))
def test_k_monotone_in_each_angle(cfg, step, i, theta):
    lo = list(cfg)
    hi = list(cfg)
    lo[i], hi[i] = theta, theta + 1
    assert oracle.k_eff(hi, step, PARAMS) >= oracle.k_eff(lo, step, PARAMS)


def test_evaluate_deterministic_without_seed():
    cfg = (12, 40, 99, 150, 2, 180)
    assert oracle.evaluate(cfg, 2, PARAMS) == oracle.evaluate(cfg, 2, PARAMS)


def test_noise_magnitude():
    cfg = (91,) * 6
    ks = np.array([oracle.evaluate(cfg, 0, PARAMS, noise_seed=s).k_eff for s in range(10_000)])
    std_pcm = ks.std(ddof=1) * 1e5
    assert 9 * 0.85 <= std_pcm <= 9 * 1.15
    noisy = oracle.evaluate(cfg, 0, PARAMS, noise_seed=3)
    assert abs(math.fsum(noisy.powers) - 1.0) <= 1e-12


@pytest.mark.parametrize("bad", [(1, 2, 3), (0, 0, 0, 0, 0, 181), (0, 0, 0, 0, 0, -1), (0.5,) * 6])
def test_config_validation(bad):
    with pytest.raises(DomainError):
        oracle.k_eff(bad, 0, PARAMS)


def test_params_validation():
    with pytest.raises(DomainError):
        OracleParams(neighbor_kernel=(0.6, 0.2, 0.05, 0.0, 0.05, 0.15))
    with pytest.raises(DomainError):
        OracleParams(total_drum_worth=0.0)


def test_params_file_round_trip(tmp_path):
    path = tmp_path / "oracle.json"
    PARAMS.save(path)
    assert OracleParams.load(path) == PARAMS
    path.write_text('{"bogus": 1}')
    with pytest.raises(DomainError):
        OracleParams.load(path)
