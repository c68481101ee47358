"""Seeded Rician channel realisations for the BS / surface / two-user layout.

Coordinates are in metres. The surface is a uniform planar array lying in
the x-z plane; element ``m`` sits at horizontal index ``m % M_h`` and
vertical index ``m // M_h`` with half-wavelength spacing. The BS is a
uniform linear array along the x-axis. Transmission-side users have
``y > y_ris``, reflection-side users ``y < y_ris``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ChannelSet, ContractViolation, ProblemSpec


def db_to_linear(db: float) -> float:
    return float(10.0 ** (db / 10.0))


def dbm_to_watts(dbm: float) -> float:
    return float(10.0 ** ((dbm - 30.0) / 10.0))


def watts_to_dbm(watts):
    return 10.0 * np.log10(np.asarray(watts, dtype=float)) + 30.0


def default_horizontal_count(M: int, preferred: int = 5) -> int:
    """Horizontal element count: ``preferred`` when it divides ``M``, else the largest divisor below it."""
    for m_h in range(min(preferred, M), 0, -1):
        if M % m_h == 0:
            return m_h
    return 1


@dataclass(frozen=True)
class GeometryConfig:
    M: int = 10
    bs_position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    ris_position: tuple[float, float, float] = (0.0, 50.0, 0.0)
    user_radius: float = 3.0
    M_h: int | None = None

    def __post_init__(self):
        if self.M_h is None:
            object.__setattr__(self, "M_h", default_horizontal_count(self.M))
        if self.user_radius <= 0:
            raise ContractViolation("user radius must be positive")
        if self.M_h < 1 or self.M % self.M_h:
            raise ContractViolation(f"M_h={self.M_h} does not divide M={self.M}")

    @property
    def M_v(self) -> int:
        return self.M // self.M_h

    @property
    def bs_ris_distance(self) -> float:
        return float(np.linalg.norm(np.subtract(self.ris_position, self.bs_position)))


@dataclass(frozen=True)
class FadingConfig:
    """Large-scale and Rician parameters, all stored as linear quantities."""

    alpha_BR: float = 2.2
    alpha_RU: float = 2.2
    K_BR: float = db_to_linear(3.0)
    K_RU: float = db_to_linear(3.0)
    rho0: float = db_to_linear(-30.0)
    seed: int | None = None

    def __post_init__(self):
        if self.alpha_BR <= 0 or self.alpha_RU <= 0:
            raise ContractViolation("path-loss exponents must be positive")
        if self.K_BR < 0 or self.K_RU < 0:
            raise ContractViolation("Rician factors must be nonnegative")
        if self.rho0 <= 0:
            raise ContractViolation("reference path loss must be positive")

    @classmethod
    def from_db(cls, alpha_BR=2.2, alpha_RU=2.2, K_BR_db=3.0, K_RU_db=3.0, rho0_db=-30.0, seed=None):
        return cls(alpha_BR, alpha_RU, db_to_linear(K_BR_db), db_to_linear(K_RU_db),
                   db_to_linear(rho0_db), seed)


def large_scale_gain(rho0: float, distance: float, alpha: float) -> float:
    return rho0 / distance ** alpha


def place_users(geometry: GeometryConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw the T-side and R-side user positions on half-circles around the surface."""
    centre = np.asarray(geometry.ris_position, dtype=float)
    phi = rng.uniform(-np.pi / 2, np.pi / 2, size=2)
    d = geometry.user_radius
    user_t = centre + d * np.array([np.sin(phi[0]), np.cos(phi[0]), 0.0])
    user_r = centre + d * np.array([np.sin(phi[1]), -np.cos(phi[1]), 0.0])
    return user_t, user_r


def _direction(src, dst) -> np.ndarray:
    delta = np.subtract(dst, src).astype(float)
    return delta / np.linalg.norm(delta)


def upa_response(geometry: GeometryConfig, direction: np.ndarray) -> np.ndarray:
    m = np.arange(geometry.M)
    m_h, m_v = m % geometry.M_h, m // geometry.M_h
    return np.exp(1j * np.pi * (m_h * direction[0] + m_v * direction[2]))


def ula_response(N: int, direction: np.ndarray) -> np.ndarray:
    return np.exp(1j * np.pi * np.arange(N) * direction[0])


def rician(los: np.ndarray, K: float, gain: float, rng: np.random.Generator) -> np.ndarray:
    nlos = (rng.standard_normal(los.shape) + 1j * rng.standard_normal(los.shape)) / np.sqrt(2.0)
    if np.isinf(K):
        mix = los.astype(complex)
    else:
        mix = np.sqrt(K / (K + 1.0)) * los + np.sqrt(1.0 / (K + 1.0)) * nlos
    return np.sqrt(gain) * mix


def generate_channels(spec: ProblemSpec, geometry: GeometryConfig | None = None,
                      fading: FadingConfig | None = None,
                      rng: np.random.Generator | None = None) -> ChannelSet:
    """Draw user positions then ``G``, ``v_t`` and ``v_r`` from one generator, in that order."""
    geometry = geometry or GeometryConfig(M=spec.M)
    fading = fading or FadingConfig()
    if geometry.M != spec.M:
        raise ContractViolation("geometry and problem disagree on M")
    if rng is None:
        rng = np.random.default_rng(fading.seed)
    users = place_users(geometry, rng)
    bs, ris = geometry.bs_position, geometry.ris_position

    arrival = upa_response(geometry, _direction(ris, bs))
    departure = ula_response(spec.N, _direction(bs, ris))
    G_los = np.outer(arrival, np.conj(departure))
    G = rician(G_los, fading.K_BR, large_scale_gain(fading.rho0, geometry.bs_ris_distance, fading.alpha_BR), rng)

    v = []
    for pos in users:
        los = upa_response(geometry, _direction(ris, pos))
        dist = float(np.linalg.norm(np.subtract(pos, ris)))
        v.append(rician(los, fading.K_RU, large_scale_gain(fading.rho0, dist, fading.alpha_RU), rng))
    return ChannelSet(G, v[0], v[1])
