"""Time-switching solver: per-user gain maximisation, MRT and time/power allocation.

In time switching every element serves one user at a time with full
amplitude, so the two users decouple. Each user's phase vector maximises
``||q^H H_k||^2`` under unit modulus (an SDR with Gaussian
randomisation); the BS then uses MRT, and only the time split and the two
powers remain to be chosen.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar

from . import conic
from .conic import ConicProgram, HermitianVar, Linear, selector
from .model import (BeamformingSolution, ChannelSet, ContractViolation, InfeasibleError,
                    ProblemSpec, Protocol, SolverReport, StarCoefficients, Status, per_user_rates)


@dataclass(frozen=True)
class TSOptions:
    n_candidates: int = 1000
    delta: float = 1e-4
    solver_tol: float = 1e-9
    xatol: float = 1e-12


def channel_gain(q: np.ndarray, H: np.ndarray) -> float:
    """``||q^H H||^2``."""
    return float(np.linalg.norm(np.conj(q) @ H) ** 2)


def _sdr_gain_matrix(R: np.ndarray, tol: float) -> np.ndarray | None:
    """Solve ``max Tr(R V)`` over PSD ``V`` with unit diagonal; ``None`` if the solver fails."""
    M = R.shape[0]
    program = ConicProgram(
        variables=(HermitianVar("V", M),),
        objective=(("gain", Linear({"V": -R})),),
        equalities=tuple((f"unit modulus [{m}]", Linear({"V": selector(M, m)}, -1.0)) for m in range(M)),
    )
    result = conic.solve(program, tolerance=tol)
    return result.values["V"] if result.ok else None


def optimize_phase_vector(H_k: np.ndarray, rng: np.random.Generator | None = None,
                          options: TSOptions = TSOptions()) -> np.ndarray:
    """Unit-modulus ``q`` (approximately) maximising ``||q^H H_k||^2``.

    Candidates are the unit-modulus projection of the dominant eigenvector of
    ``H_k H_k^H`` and of the SDR solution, plus ``n_candidates`` Gaussian
    draws shaped by the SDR solution; the best one is returned.
    """
    H_k = np.asarray(H_k, dtype=complex)
    if not np.any(H_k):
        raise ContractViolation("channel must be nonzero")
    rng = np.random.default_rng() if rng is None else rng
    M = H_k.shape[0]
    R = H_k @ H_k.conj().T
    _, vecs = np.linalg.eigh(R)
    candidates = [np.exp(1j * np.angle(vecs[:, -1]))]
    if M > 1:
        V = _sdr_gain_matrix(R, options.solver_tol)
        if V is not None:
            vals, U = np.linalg.eigh(conic.hermitian_part(V))
            root = U * np.sqrt(np.clip(vals, 0.0, None))
            candidates.append(np.exp(1j * np.angle(U[:, -1])))
            if options.n_candidates > 0:
                z = (rng.standard_normal((M, options.n_candidates))
                     + 1j * rng.standard_normal((M, options.n_candidates))) / np.sqrt(2.0)
                xi = root @ z
                candidates.extend(np.exp(1j * np.angle(xi)).T)
    cand = np.asarray(candidates)
    gains = np.real(np.einsum("im,mn,in->i", cand.conj(), R, cand))
    return cand[int(np.argmax(gains))]


def mrt_beamformer(q_k: np.ndarray, H_k: np.ndarray, p_k: float) -> np.ndarray:
    """``sqrt(p) H^H q / ||q^H H||``."""
    if p_k < 0:
        raise ContractViolation("power must be nonnegative")
    direction = np.asarray(H_k).conj().T @ np.asarray(q_k)
    norm = np.linalg.norm(direction)
    if p_k == 0:
        return np.zeros_like(direction)
    if norm == 0:
        raise InfeasibleError("effective channel is zero")
    return np.sqrt(p_k) * direction / norm


def required_power(lam, rate, gain, sigma2):
    """Power ``lam sigma^2 (2^{R/lam} - 1) / g`` that meets ``rate`` with time share ``lam``."""
    lam = np.asarray(lam, dtype=float)
    if rate == 0:
        return np.zeros_like(lam) if lam.ndim else 0.0
    with np.errstate(over="ignore", divide="ignore"):
        p = lam * sigma2 * np.expm1(np.log(2.0) * rate / lam) / gain
    return p if p.ndim else float(p)


def allocate_time_power(g_t: float, g_r: float, R_t: float, R_r: float, sigma2_t: float,
                        sigma2_r: float, delta: float = 1e-4,
                        xatol: float = 1e-12) -> tuple[float, float, float, float]:
    """Minimum total power time split; returns ``(lambda_t, lambda_r, p_t, p_r)``.

    Each power is eliminated through its tight QoS constraint, leaving a
    convex function of ``lambda_t`` that is minimised on
    ``[delta, 1 - delta]`` by bounded Brent search.
    """
    if min(R_t, R_r) < 0:
        raise ContractViolation("rate targets must be nonnegative")
    for g, R in ((g_t, R_t), (g_r, R_r)):
        if R > 0 and g <= 0:
            raise InfeasibleError("a user with a positive target has zero channel gain")
    if R_t == 0 and R_r == 0:
        return 0.5, 0.5, 0.0, 0.0
    if R_r == 0:
        return 1.0, 0.0, float(required_power(1.0, R_t, g_t, sigma2_t)), 0.0
    if R_t == 0:
        return 0.0, 1.0, 0.0, float(required_power(1.0, R_r, g_r, sigma2_r))

    def total(lam):
        return required_power(lam, R_t, g_t, sigma2_t) + required_power(1.0 - lam, R_r, g_r, sigma2_r)

    res = minimize_scalar(total, bounds=(delta, 1.0 - delta), method="bounded",
                          options={"xatol": xatol, "maxiter": 500})
    lam = float(res.x)
    return (lam, 1.0 - lam, float(required_power(lam, R_t, g_t, sigma2_t)),
            float(required_power(1.0 - lam, R_r, g_r, sigma2_r)))


def solve_ts(spec: ProblemSpec, channels: ChannelSet, options: TSOptions = TSOptions(),
             rng: np.random.Generator | None = None) -> tuple[BeamformingSolution | None, SolverReport]:
    """Phase optimisation per user, then time/power allocation and MRT.

    Multicast follows the same path: with one user served per period the
    shared rate target acts exactly like two unicast targets.
    """
    if spec.protocol is not Protocol.TS:
        raise ContractViolation("solve_ts needs a TS problem")
    channels.check(spec)
    rng = np.random.default_rng() if rng is None else rng
    report = SolverReport(outer_iterations=1, inner_iterations_per_outer=[1])
    H = channels.cascaded()
    q = [optimize_phase_vector(H[k], rng, options) for k in range(2)]
    g = [channel_gain(q[k], H[k]) for k in range(2)]
    try:
        lam_t, lam_r, p_t, p_r = allocate_time_power(g[0], g[1], *spec.rate_targets, *spec.noise_powers,
                                                     delta=options.delta, xatol=options.xatol)
        w = [mrt_beamformer(q[0], H[0], p_t), mrt_beamformer(q[1], H[1], p_r)]
    except InfeasibleError as exc:
        report.status = Status.INFEASIBLE
        report.message = str(exc)
        return None, report
    M = spec.M
    coeffs = StarCoefficients(np.ones(M), np.ones(M), -np.angle(q[0]), -np.angle(q[1]), lam_t, lam_r)
    total = p_t + p_r
    sol = BeamformingSolution(w[0], w[1], coeffs, total, (0.0, 0.0), spec.protocol, spec.scenario)
    sol.achieved_rates = per_user_rates(spec, channels, sol)
    report.objective_trace.append(total)
    report.violation_trace.append(0.0)
    report.status = Status.CONVERGED
    return sol, report
