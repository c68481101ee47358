import numpy as np
import pytest

from star_ris.baselines import solve_conventional_ris, solve_ues
from star_ris.channels import generate_channels, watts_to_dbm
from star_ris.model import ContractViolation, ProblemSpec, Protocol, Scenario
from star_ris.oracle import brute_force_min_power


def _instance(N, M, protocol, scenario, db, seed):
    spec = ProblemSpec.from_sinr_db(N, M, protocol, scenario, db)
    return spec, generate_channels(spec, rng=np.random.default_rng(seed))


def test_conventional_fixed_pattern():
    spec, ch = _instance(2, 6, Protocol.ES, Scenario.UNICAST, 0.0, 1)
    sol, rep = solve_conventional_ris(spec, ch, rng=np.random.default_rng(0))
    assert sol.protocol is Protocol.CONV_RIS
    assert np.array_equal(sol.coefficients.beta_t, [1, 1, 1, 0, 0, 0])
    assert np.array_equal(sol.coefficients.beta_r, [0, 0, 0, 1, 1, 1])
    assert min(a - t for a, t in zip(sol.achieved_rates, spec.rate_targets)) >= -1e-4


def test_conventional_odd_m():
    spec, ch = _instance(2, 5, Protocol.ES, Scenario.UNICAST, 0.0, 1)
    with pytest.raises(ContractViolation):
        solve_conventional_ris(spec, ch)


@pytest.mark.parametrize("scenario, db", [(Scenario.UNICAST, -5.0), (Scenario.MULTICAST, 10.0)])
def test_conventional_matches_oracle(scenario, db):
    spec, ch = _instance(1, 2, Protocol.CONV_RIS, scenario, db, 2)
    sol, _ = solve_conventional_ris(spec, ch, rng=np.random.default_rng(0))
    ref = brute_force_min_power(spec, ch)
    assert watts_to_dbm(sol.total_power) <= watts_to_dbm(ref) + 0.5


def test_ues_shared_split():
    spec, ch = _instance(2, 6, Protocol.ES, Scenario.MULTICAST, 10.0, 3)
    sol, _ = solve_ues(spec, ch, rng=np.random.default_rng(0))
    assert sol.protocol is Protocol.UES
    assert np.var(sol.coefficients.beta_t) <= 1e-16
    assert np.max(np.abs(sol.coefficients.beta_t + sol.coefficients.beta_r - 1)) <= 1e-8


def test_multicast_ues_gap_small(m_sweep):
    # uniform splitting costs little when both users want the same stream
    res = m_sweep["MULTICAST"]
    for M in res.config.values:
        es = 10 ** (res.lookup(M, "ES", "MULTICAST")["mean_power_dbm"] / 10)
        ues = 10 ** (res.lookup(M, "UES", "MULTICAST")["mean_power_dbm"] / 10)
        assert abs(ues - es) <= 0.10 * es


def test_nesting_statistical(m_sweep):
    for scenario, res in m_sweep.items():
        for M in res.config.values:
            mean = {p: 10 ** (res.lookup(M, p, scenario)["mean_power_dbm"] / 10) for p in res.config.protocols}
            assert mean["CONV_RIS"] >= mean["MS"] - 0.02 * max(mean["CONV_RIS"], mean["MS"])
            assert mean["UES"] >= mean["ES"] - 0.02 * max(mean["UES"], mean["ES"])
