import numpy as np
import pytest

from star_ris.channels import generate_channels
from star_ris.model import (BeamformingSolution, ChannelSet, ContractViolation, InfeasibleError, ProblemSpec,
                            Protocol, Scenario, StarCoefficients, per_user_rates)
from star_ris.oracle import brute_force_min_power, rate_check, ts_power_scan
from star_ris.penalty import solve_penalty
from star_ris.time_switching import solve_ts


def test_single_element_ts_matches_formula():
    G = np.array([[0.3 + 0.4j]])
    ch = ChannelSet(G, np.array([2.0 + 0j]), np.array([1.0j]))
    spec = ProblemSpec(1, 1, Protocol.TS, Scenario.UNICAST, (1.0, 0.5), noise_powers=(0.1, 0.2))
    g_t, g_r = abs(2.0 * G[0, 0]) ** 2, abs(G[0, 0]) ** 2
    lam = np.linspace(1e-3, 1 - 1e-3, 200001)
    total = lam * 0.1 * (2 ** (1.0 / lam) - 1) / g_t + (1 - lam) * 0.2 * (2 ** (0.5 / (1 - lam)) - 1) / g_r
    assert brute_force_min_power(spec, ch) == pytest.approx(total.min(), rel=1e-8)


def test_orthogonal_channels_no_interference():
    ch = ChannelSet(np.eye(2, dtype=complex), np.array([1.0, 0.0], dtype=complex), np.array([0.0, 1.0], dtype=complex))
    spec = ProblemSpec(2, 2, Protocol.ES, Scenario.UNICAST, (1.0, 2.0), noise_powers=(0.5, 0.25))
    expected = 0.5 * 1.0 + 0.25 * 3.0
    assert brute_force_min_power(spec, ch, phase_levels=8) == pytest.approx(expected, rel=1e-9)


@pytest.mark.parametrize("protocol, scenario, db", [
    (Protocol.ES, Scenario.UNICAST, -5.0),
    (Protocol.ES, Scenario.MULTICAST, 5.0),
    (Protocol.MS, Scenario.UNICAST, -5.0),
])
def test_refinement_never_increases(protocol, scenario, db):
    spec = ProblemSpec.from_sinr_db(1, 2, protocol, scenario, db)
    ch = generate_channels(spec, rng=np.random.default_rng(8))
    coarse = brute_force_min_power(spec, ch, phase_levels=16, amplitude_levels=11)
    fine = brute_force_min_power(spec, ch, phase_levels=32, amplitude_levels=21)
    assert fine <= coarse * (1 + 1e-12)
    assert brute_force_min_power(spec, ch, 16, 11) == coarse


def test_two_antenna_unicast_oracle_against_solver():
    spec = ProblemSpec.from_sinr_db(2, 2, Protocol.ES, Scenario.UNICAST, 0.0)
    ch = generate_channels(spec, rng=np.random.default_rng(5))
    ref = brute_force_min_power(spec, ch, phase_levels=16, amplitude_levels=6)
    sol, _ = solve_penalty(spec, ch, rng=np.random.default_rng(0))
    assert 10 * np.log10(sol.total_power / ref) <= 0.5


def test_limits_and_infeasibility():
    spec = ProblemSpec.from_sinr_db(3, 2, Protocol.ES, Scenario.UNICAST, 0.0)
    ch = generate_channels(spec, rng=np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        brute_force_min_power(spec, ch)
    spec = ProblemSpec.from_sinr_db(1, 2, Protocol.ES, Scenario.UNICAST, 0.0)
    ch = generate_channels(spec, rng=np.random.default_rng(0))
    with pytest.raises(ContractViolation):
        brute_force_min_power(spec, ch, phase_levels=128)
    with pytest.raises(InfeasibleError):
        brute_force_min_power(ProblemSpec.from_sinr_db(1, 2, Protocol.ES, Scenario.UNICAST, 3.0), ch)


def test_ts_scan_symmetric():
    total, lam = ts_power_scan(1.0, 1.0, 1.0, 1.0, 1.0, 1.0)
    assert lam == pytest.approx(0.5, abs=1e-6)
    assert total == pytest.approx(3.0, rel=1e-12)


@pytest.mark.parametrize("protocol, scenario", [(Protocol.ES, Scenario.UNICAST), (Protocol.MS, Scenario.MULTICAST),
                                                (Protocol.TS, Scenario.UNICAST)])
def test_rate_check_agrees(protocol, scenario):
    spec = ProblemSpec.from_sinr_db(2, 4, protocol, scenario, 3.0)
    ch = generate_channels(spec, rng=np.random.default_rng(2))
    solver = solve_ts if protocol is Protocol.TS else solve_penalty
    sol, _ = solver(spec, ch, rng=np.random.default_rng(2))
    assert np.allclose(rate_check(sol, ch, spec), sol.achieved_rates, rtol=0, atol=1e-10)


def test_rate_check_trivial_cases(rng):
    ch = ChannelSet(rng.standard_normal((3, 2)) + 0j, np.ones(3, complex), np.ones(3, complex))
    coeffs = StarCoefficients(np.ones(3), np.ones(3), rng.uniform(0, 6, 3), rng.uniform(0, 6, 3), 1.0, 0.0)
    w = rng.standard_normal(2) + 1j * rng.standard_normal(2)
    spec = ProblemSpec(2, 3, Protocol.TS, Scenario.UNICAST, 1.0, noise_powers=0.1)
    sol = BeamformingSolution(w, np.zeros(2, complex), coeffs, 1.0, (0, 0), Protocol.TS)
    rates = rate_check(sol, ch, spec)
    assert rates[1] == 0.0
    assert rates[0] == pytest.approx(per_user_rates(spec, ch, sol)[0], abs=1e-12)
    zero = BeamformingSolution(np.zeros(2, complex), np.zeros(2, complex), coeffs, 0.0, (0, 0), Protocol.TS)
    assert rate_check(zero, ch, spec) == (0.0, 0.0)
