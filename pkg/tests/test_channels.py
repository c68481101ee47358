import numpy as np
import pytest

from star_ris.channels import (FadingConfig, GeometryConfig, db_to_linear, dbm_to_watts, default_horizontal_count,
                               generate_channels, large_scale_gain, place_users, watts_to_dbm)
from star_ris.model import ContractViolation, ProblemSpec, Protocol, Scenario


def _spec(N=2, M=10):
    return ProblemSpec(N, M, Protocol.ES, Scenario.UNICAST, 1.0)


def test_unit_conversions():
    assert watts_to_dbm(1.0) == pytest.approx(30.0)
    assert dbm_to_watts(-90.0) == pytest.approx(1e-12)
    assert db_to_linear(3.0) == pytest.approx(1.9952623149688795)


def test_large_scale_gain_value():
    # 1e-3 / 50**2.2 evaluated independently
    assert large_scale_gain(1e-3, 50.0, 2.2) == pytest.approx(1.8292202077093042e-07, rel=1e-12)


def test_horizontal_count():
    assert default_horizontal_count(10) == 5
    assert default_horizontal_count(20) == 5
    assert default_horizontal_count(8) == 4
    assert default_horizontal_count(6) == 3
    assert default_horizontal_count(7) == 1
    g = GeometryConfig(M=10)
    assert g.M_h * g.M_v == 10
    with pytest.raises(ContractViolation):
        GeometryConfig(M=10, M_h=3)
    with pytest.raises(ContractViolation):
        GeometryConfig(M=10, user_radius=0.0)


def test_place_users_half_circles():
    geo = GeometryConfig()
    ris = np.array(geo.ris_position)
    for seed in range(20):
        t, r = place_users(geo, np.random.default_rng(seed))
        assert np.linalg.norm(t - ris) == pytest.approx(3.0, abs=1e-9)
        assert np.linalg.norm(r - ris) == pytest.approx(3.0, abs=1e-9)
        # the surface lies in the plane y = 50
        assert (t[1] - ris[1]) * (r[1] - ris[1]) < 0
    a = place_users(geo, np.random.default_rng(1))
    b = place_users(geo, np.random.default_rng(2))
    assert not np.allclose(a[0], b[0])


def test_shapes_and_determinism():
    spec = _spec(3, 10)
    c1 = generate_channels(spec, rng=np.random.default_rng(7))
    c2 = generate_channels(spec, rng=np.random.default_rng(7))
    assert c1.G.shape == (10, 3) and c1.v_t.shape == (10,) and c1.v_r.shape == (10,)
    for x, y in ((c1.G, c2.G), (c1.v_t, c2.v_t), (c1.v_r, c2.v_r)):
        assert x.tobytes() == y.tobytes()
    with pytest.raises(ContractViolation):
        generate_channels(spec, geometry=GeometryConfig(M=8))


def test_los_limit_entry_magnitude():
    fading = FadingConfig(K_BR=1e12, K_RU=1e12)
    geo = GeometryConfig()
    ch = generate_channels(_spec(), geo, fading, np.random.default_rng(0))
    expected = np.sqrt(large_scale_gain(fading.rho0, geo.bs_ris_distance, fading.alpha_BR))
    assert np.allclose(np.abs(ch.G), expected, rtol=1e-4)
    assert np.allclose(np.abs(ch.v_t), np.sqrt(large_scale_gain(fading.rho0, 3.0, 2.2)), rtol=1e-4)


@pytest.mark.parametrize("K", [0.0, db_to_linear(3.0)])
def test_mean_entry_power(K):
    fading = FadingConfig(K_BR=K, K_RU=K)
    geo = GeometryConfig()
    rng = np.random.default_rng(3)
    spec = _spec(1, 10)
    samples = np.array([generate_channels(spec, geo, fading, rng).G[:, 0] for _ in range(1000)])
    expected = large_scale_gain(fading.rho0, geo.bs_ris_distance, fading.alpha_BR)
    assert np.mean(np.abs(samples) ** 2) == pytest.approx(expected, rel=0.05)
    if K == 0.0:
        assert np.var(samples) == pytest.approx(expected, rel=0.05)


def test_fading_config_validation():
    with pytest.raises(ContractViolation):
        FadingConfig(alpha_BR=0.0)
    with pytest.raises(ContractViolation):
        FadingConfig(K_RU=-1.0)
    f = FadingConfig.from_db(K_BR_db=3.0, rho0_db=-30.0)
    assert f.rho0 == pytest.approx(1e-3)
