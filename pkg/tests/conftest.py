import numpy as np
import pytest


def random_hermitian(rng, n, psd=False):
    A = rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))
    return A @ A.conj().T if psd else 0.5 * (A + A.conj().T)


def crandn(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)



SWEEP_POINTS = {"UNICAST": 0.0, "MULTICAST": 10.0}


def m_sweep_config(scenario, **kw):
    from star_ris.experiments import ExperimentConfig
    base = dict(sweep="M", values=[6, 8, 10], N=2, sinr_db=SWEEP_POINTS[scenario], scenarios=[scenario],
                protocols=["TS", "ES", "MS", "UES", "CONV_RIS"], realizations=20, seed=2024)
    base.update(kw)
    return ExperimentConfig(**base)


@pytest.fixture(scope="session")
def m_sweep():
    """Desk-scale sweeps over M (unicast at 0 dB, multicast at 10 dB), keyed by scenario."""
    from star_ris.experiments import run_experiment
    return {scenario: run_experiment(m_sweep_config(scenario)) for scenario in SWEEP_POINTS}


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
