"""Domain types, coefficient validation and rate formulas.

Users are always ordered ``(t, r)``: index 0 is the transmission-side user
and index 1 the reflection-side user. Powers are in watts throughout.

The passive beamformer of user ``k`` is stored as amplitudes ``beta_k``
(energy fractions) and phases ``theta_k``; the vector used in the rate
expressions is ``q_k = sqrt(beta_k) * exp(-1j * theta_k)`` so that
``q_k^H H_k w == v_k^H Theta_k G w`` with ``H_k = diag(v_k^H) G``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

USERS = ("t", "r")


class ContractViolation(ValueError):
    """Inputs do not satisfy an operation's preconditions."""


class DomainError(ValueError):
    """A physical quantity is outside its admissible domain."""


class InfeasibleError(RuntimeError):
    """No configuration meets the requested QoS targets."""


class Protocol(str, enum.Enum):
    ES = "ES"
    MS = "MS"
    TS = "TS"
    CONV_RIS = "CONV_RIS"
    UES = "UES"


class Scenario(str, enum.Enum):
    UNICAST = "UNICAST"
    MULTICAST = "MULTICAST"


class Status(str, enum.Enum):
    CONVERGED = "CONVERGED"
    MAX_ITER = "MAX_ITER"
    INFEASIBLE = "INFEASIBLE"
    SOLVER_FAILURE = "SOLVER_FAILURE"


def sinr_from_rate(rate: float) -> float:
    return 2.0 ** rate - 1.0


def rate_from_sinr(sinr: float) -> float:
    return float(np.log2(1.0 + sinr))


@dataclass(frozen=True)
class ProblemSpec:
    """System dimensions, protocol and QoS requirements of one problem instance.

    ``rate_targets`` is ``(R_t, R_r)`` in bits/s/Hz; a single float is
    accepted and used for both users (the multicast target ``R_c``).
    ``energy_budget`` is the right-hand side of ``beta_t + beta_r = c``.
    """

    N: int
    M: int
    protocol: Protocol
    scenario: Scenario
    rate_targets: tuple[float, float]
    noise_powers: tuple[float, float] = (1e-12, 1e-12)
    energy_budget: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "protocol", Protocol(self.protocol))
        object.__setattr__(self, "scenario", Scenario(self.scenario))
        targets = self.rate_targets
        if np.isscalar(targets):
            targets = (float(targets), float(targets))
        object.__setattr__(self, "rate_targets", tuple(float(r) for r in targets))
        noise = self.noise_powers
        if np.isscalar(noise):
            noise = (float(noise), float(noise))
        object.__setattr__(self, "noise_powers", tuple(float(s) for s in noise))
        if int(self.N) != self.N or self.N < 1:
            raise ContractViolation(f"N must be a positive integer, got {self.N}")
        if int(self.M) != self.M or self.M < 1:
            raise ContractViolation(f"M must be a positive integer, got {self.M}")
        if len(self.rate_targets) != 2 or min(self.rate_targets) < 0:
            raise ContractViolation("rate targets must be two nonnegative numbers")
        if len(self.noise_powers) != 2 or min(self.noise_powers) <= 0:
            raise DomainError("noise powers must be positive")
        if self.scenario is Scenario.MULTICAST and self.rate_targets[0] != self.rate_targets[1]:
            raise ContractViolation("multicast uses one shared rate target")
        if self.protocol is Protocol.CONV_RIS and self.M % 2:
            raise ContractViolation("the conventional-RIS baseline needs an even M")
        if not 0 < self.energy_budget <= 1:
            raise ContractViolation("energy budget must lie in (0, 1]")

    @classmethod
    def from_sinr_db(cls, N, M, protocol, scenario, sinr_db, noise_power=1e-12, **kw):
        rate = rate_from_sinr(10 ** (sinr_db / 10))
        return cls(N, M, protocol, scenario, (rate, rate), (noise_power, noise_power), **kw)

    @property
    def multicast(self) -> bool:
        return self.scenario is Scenario.MULTICAST

    def sinr_targets(self) -> tuple[float, float]:
        return tuple(sinr_from_rate(r) for r in self.rate_targets)

    def with_protocol(self, protocol: Protocol) -> "ProblemSpec":
        return ProblemSpec(self.N, self.M, protocol, self.scenario, self.rate_targets,
                           self.noise_powers, self.energy_budget)


@dataclass(frozen=True)
class ChannelSet:
    """One channel realisation: BS->surface ``G`` (M x N) and surface->user ``v_t``, ``v_r``."""

    G: np.ndarray
    v_t: np.ndarray
    v_r: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.G, dtype=complex)
        v_t = np.asarray(self.v_t, dtype=complex).reshape(-1)
        v_r = np.asarray(self.v_r, dtype=complex).reshape(-1)
        if G.ndim != 2 or v_t.shape != (G.shape[0],) or v_r.shape != (G.shape[0],):
            raise ContractViolation("channel dimensions are inconsistent")
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(v_t)) and np.all(np.isfinite(v_r))):
            raise ContractViolation("channels must be finite")
        object.__setattr__(self, "G", G)
        object.__setattr__(self, "v_t", v_t)
        object.__setattr__(self, "v_r", v_r)

    @property
    def M(self) -> int:
        return self.G.shape[0]

    @property
    def N(self) -> int:
        return self.G.shape[1]

    def v(self, k: int) -> np.ndarray:
        return (self.v_t, self.v_r)[k]

    def cascaded(self) -> tuple[np.ndarray, np.ndarray]:
        return cascade_channel(self.v_t, self.G), cascade_channel(self.v_r, self.G)

    def check(self, spec: ProblemSpec) -> None:
        if (self.M, self.N) != (spec.M, spec.N):
            raise ContractViolation(
                f"channels are {self.M}x{self.N}, problem expects {spec.M}x{spec.N}")


@dataclass
class StarCoefficients:
    """Per-element amplitude/phase configuration plus TS time shares."""

    beta_t: np.ndarray
    beta_r: np.ndarray
    theta_t: np.ndarray
    theta_r: np.ndarray
    lambda_t: float = 1.0
    lambda_r: float = 1.0

    def __post_init__(self):
        self.beta_t = np.asarray(self.beta_t, dtype=float)
        self.beta_r = np.asarray(self.beta_r, dtype=float)
        self.theta_t = np.mod(np.asarray(self.theta_t, dtype=float), 2 * np.pi)
        self.theta_r = np.mod(np.asarray(self.theta_r, dtype=float), 2 * np.pi)

    @classmethod
    def from_vectors(cls, q_t, q_r, beta_t=None, beta_r=None, lambda_t=1.0, lambda_r=1.0):
        """Build from coefficient vectors; amplitudes default to ``|q|^2``."""
        q_t, q_r = np.asarray(q_t), np.asarray(q_r)
        beta_t = np.abs(q_t) ** 2 if beta_t is None else beta_t
        beta_r = np.abs(q_r) ** 2 if beta_r is None else beta_r
        return cls(beta_t, beta_r, -np.angle(q_t), -np.angle(q_r), lambda_t, lambda_r)

    def beta(self, k: int) -> np.ndarray:
        return (self.beta_t, self.beta_r)[k]

    def q(self, k: int) -> np.ndarray:
        beta = np.clip(self.beta(k), 0.0, None)
        theta = (self.theta_t, self.theta_r)[k]
        return np.sqrt(beta) * np.exp(-1j * theta)

    def time_share(self, k: int) -> float:
        return (self.lambda_t, self.lambda_r)[k]


@dataclass
class LiftedState:
    """Lifted iterate of the penalty algorithms (``Q_k = q_k q_k^H``, ``W_k = w_k w_k^H``).

    ``W`` holds one matrix per user for unicast and a single shared matrix
    for multicast. Powers are in watts.
    """

    Q: tuple[np.ndarray, np.ndarray]
    W: tuple[np.ndarray, ...]
    beta_t: np.ndarray
    beta_r: np.ndarray

    def beta(self, k: int) -> np.ndarray:
        return (self.beta_t, self.beta_r)[k]

    def W_user(self, k: int) -> np.ndarray:
        return self.W[k] if len(self.W) == 2 else self.W[0]

    def power(self) -> float:
        return float(sum(np.real(np.trace(W)) for W in self.W))


@dataclass
class BeamformingSolution:
    """Active beamformers, surface configuration and achieved rates.

    For ES/MS multicast both slots hold the shared ``w_c``; for TS they hold
    the per-period beamformers ``w_{c,t}``, ``w_{c,r}``.
    """

    w_t: np.ndarray
    w_r: np.ndarray
    coefficients: StarCoefficients
    total_power: float
    achieved_rates: tuple[float, float]
    protocol: Protocol = Protocol.ES
    scenario: Scenario = Scenario.UNICAST

    def w(self, k: int) -> np.ndarray:
        return (self.w_t, self.w_r)[k]


@dataclass
class SolverReport:
    status: Status = Status.CONVERGED
    outer_iterations: int = 0
    inner_iterations_per_outer: list[int] = field(default_factory=list)
    objective_trace: list[float] = field(default_factory=list)
    violation_trace: list[float] = field(default_factory=list)
    records: list[dict] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)
    rank_residuals: dict[str, float] = field(default_factory=dict)
    failed_outer: int | None = None
    message: str = ""

    @property
    def inner_iterations(self) -> int:
        return int(sum(self.inner_iterations_per_outer))


def cascade_channel(v_k: np.ndarray, G: np.ndarray) -> np.ndarray:
    """Cascaded channel ``H_k = diag(v_k^H) G`` (row m scaled by ``conj(v_k[m])``)."""
    v_k = np.asarray(v_k).reshape(-1)
    G = np.asarray(G)
    if G.ndim != 2 or G.shape[0] != v_k.shape[0]:
        raise ContractViolation(f"cannot cascade v of length {v_k.shape[0]} with G of shape {G.shape}")
    return np.conj(v_k)[:, None] * G


def _check_amplitudes(q: np.ndarray, unimodular: bool = False) -> None:
    mag = np.abs(q)
    if unimodular:
        if np.max(np.abs(mag - 1.0), initial=0.0) > 1e-6:
            raise ContractViolation("time-switching coefficients must be unit modulus")
    elif np.max(mag, initial=0.0) > 1.0 + 1e-6:
        raise ContractViolation("coefficient amplitudes must not exceed one")


def effective_gain(H_k: np.ndarray, q_k: np.ndarray, w: np.ndarray) -> float:
    """``|q_k^H H_k w|^2``."""
    return float(np.abs(np.vdot(q_k, H_k @ w)) ** 2)


def unicast_rate(H_k, q_k, w_k, w_kbar, sigma2_k) -> float:
    """Achievable ES/MS unicast rate with inter-user interference."""
    if sigma2_k <= 0:
        raise DomainError("noise power must be positive")
    q_k = np.asarray(q_k)
    _check_amplitudes(q_k)
    signal = effective_gain(H_k, q_k, np.asarray(w_k))
    interference = effective_gain(H_k, q_k, np.asarray(w_kbar))
    return float(np.log2(1.0 + signal / (interference + sigma2_k)))


def ts_rate(H_k, q_k, w_k, sigma2_k, lambda_k) -> float:
    """Time-switching rate ``lambda log2(1 + |q^H H w|^2 / (lambda sigma^2))``."""
    if sigma2_k <= 0:
        raise DomainError("noise power must be positive")
    if not 0 <= lambda_k <= 1:
        raise ContractViolation("time share must lie in [0, 1]")
    if lambda_k == 0:
        return 0.0
    q_k = np.asarray(q_k)
    _check_amplitudes(q_k, unimodular=True)
    snr = effective_gain(H_k, q_k, np.asarray(w_k)) / (lambda_k * sigma2_k)
    return float(lambda_k * np.log2(1.0 + snr))


def multicast_rate(H_t, H_r, q_t, q_r, w_c, sigma2_t, sigma2_r) -> float:
    """Effective multicast rate: the smaller of the two interference-free rates."""
    zero = np.zeros_like(np.asarray(w_c))
    return min(unicast_rate(H_t, q_t, w_c, zero, sigma2_t),
               unicast_rate(H_r, q_r, w_c, zero, sigma2_r))


def per_user_rates(spec: ProblemSpec, channels: ChannelSet, solution: BeamformingSolution) -> tuple[float, float]:
    """Rate of each user under the solution's protocol and scenario."""
    H = channels.cascaded()
    coeffs = solution.coefficients
    s2 = spec.noise_powers
    q = (coeffs.q(0), coeffs.q(1))
    if spec.protocol is Protocol.TS:
        return tuple(ts_rate(H[k], q[k], solution.w(k), s2[k], coeffs.time_share(k)) for k in range(2))
    if spec.multicast:
        zero = np.zeros(spec.N, dtype=complex)
        return tuple(unicast_rate(H[k], q[k], solution.w_t, zero, s2[k]) for k in range(2))
    return tuple(unicast_rate(H[k], q[k], solution.w(k), solution.w(1 - k), s2[k]) for k in range(2))


@dataclass
class ValidationReport:
    violations: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-8

    @property
    def ok(self) -> bool:
        return all(v <= self.tolerance for v in self.violations.values())

    def failed(self) -> dict[str, float]:
        return {k: v for k, v in self.violations.items() if v > self.tolerance}


def conventional_pattern(M: int) -> tuple[np.ndarray, np.ndarray]:
    """Fixed amplitudes of the conventional-RIS baseline (first half T, second half R)."""
    if M % 2:
        raise ContractViolation("the conventional-RIS baseline needs an even M")
    beta_t = np.concatenate([np.ones(M // 2), np.zeros(M // 2)])
    return beta_t, 1.0 - beta_t


def validate_coefficients(protocol: Protocol, coeffs: StarCoefficients, tol: float = 1e-8,
                          energy_budget: float = 1.0) -> ValidationReport:
    """Measure every constraint of the protocol's feasible set; never raises.

    Each entry is a nonnegative violation magnitude; entries within ``tol``
    are satisfied.
    """
    protocol = Protocol(protocol)
    bt, br = coeffs.beta_t, coeffs.beta_r
    v: dict[str, float] = {}
    lo = max(float(np.max(-bt, initial=0)), float(np.max(-br, initial=0)), 0.0)
    hi = max(float(np.max(bt - 1, initial=0)), float(np.max(br - 1, initial=0)), 0.0)
    v["amplitude range"] = max(lo, hi)
    if protocol is Protocol.TS:
        v["unit modulus"] = float(max(np.max(np.abs(bt - 1), initial=0), np.max(np.abs(br - 1), initial=0)))
        lt, lr = coeffs.lambda_t, coeffs.lambda_r
        v["time share range"] = float(max(0.0, -lt, -lr, lt - 1, lr - 1))
        v["time share simplex"] = float(abs(lt + lr - 1.0))
        return ValidationReport(v, tol)
    v["energy conservation"] = float(np.max(np.abs(bt + br - energy_budget), initial=0))
    if protocol in (Protocol.MS, Protocol.CONV_RIS):
        v["non-binary amplitude"] = float(max(np.max(bt - bt ** 2, initial=0), np.max(br - br ** 2, initial=0)))
    if protocol is Protocol.CONV_RIS:
        pt, pr = conventional_pattern(len(bt))
        v["block pattern"] = float(max(np.max(np.abs(bt - pt)), np.max(np.abs(br - pr))))
    if protocol is Protocol.UES:
        v["uniform split"] = float(max(np.ptp(bt), np.ptp(br)))
    return ValidationReport(v, tol)
