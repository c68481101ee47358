"""Brute-force reference for tiny instances and an independent rate evaluator.

The oracle enumerates surface configurations on a grid and, for each one,
computes the exact minimum transmit power by closed forms (single antenna,
two-antenna multicast) or a dual fixed point (two-antenna unicast). It
only shares the problem and channel containers with the main solvers.
"""

from __future__ import annotations

import cmath
import itertools
import math

import numpy as np

from .model import ChannelSet, ContractViolation, InfeasibleError, ProblemSpec, Protocol

MAX_CONFIGS = 4_000_000


def _phase_grid(M: int, levels: int) -> np.ndarray:
    """Rows ``exp(j theta)`` over all phase combinations, first element pinned to zero phase."""
    steps = np.exp(2j * np.pi * np.arange(levels) / levels)
    if M == 1:
        return np.ones((1, 1), dtype=complex)
    combos = np.array(list(itertools.product(range(levels), repeat=M - 1)))
    return np.hstack([np.ones((len(combos), 1)), steps[combos]])


def _amplitude_grid(spec: ProblemSpec, levels: int) -> np.ndarray:
    """Rows of ``beta_t`` candidates for the protocol (``beta_r = 1 - beta_t``)."""
    M = spec.M
    if spec.protocol is Protocol.CONV_RIS:
        if M % 2:
            raise ContractViolation("the conventional-RIS baseline needs an even M")
        return np.concatenate([np.ones(M // 2), np.zeros(M // 2)])[None, :]
    if spec.protocol is Protocol.MS:
        return np.array(list(itertools.product((0.0, 1.0), repeat=M)))
    values = np.linspace(0.0, 1.0, levels)
    if spec.protocol is Protocol.UES:
        return np.repeat(values[:, None], M, axis=1)
    return np.array(list(itertools.product(values, repeat=M)))


def ts_power_scan(g_t: float, g_r: float, R_t: float, R_r: float, sigma2_t: float, sigma2_r: float,
                  points: int = 200_001, refine: int = 3) -> tuple[float, float]:
    """Minimum of ``p_t(lam) + p_r(1 - lam)`` by a dense scan with local refinement.

    Returns ``(total_power, lambda_t)``.
    """
    def p(lam, R, g, s2):
        with np.errstate(over="ignore", divide="ignore", invalid="ignore"):
            out = lam * s2 * (np.power(2.0, R / lam) - 1.0) / g
        return np.where(R == 0, 0.0, out)

    lo, hi = 0.0, 1.0
    best = (math.inf, 0.5)
    for _ in range(refine + 1):
        lam = np.linspace(lo, hi, points)
        lam = lam[(lam > 0) & (lam < 1)]
        if R_r == 0:
            lam = np.append(lam, 1.0)
        if R_t == 0:
            lam = np.append(lam, 0.0)
        total = np.where(lam > 0, p(lam, R_t, g_t, sigma2_t), np.where(R_t == 0, 0.0, np.inf)) + \
            np.where(lam < 1, p(1 - lam, R_r, g_r, sigma2_r), np.where(R_r == 0, 0.0, np.inf))
        total = np.nan_to_num(total, nan=np.inf)
        i = int(np.argmin(total))
        if total[i] < best[0]:
            best = (float(total[i]), float(lam[i]))
        step = (hi - lo) / (points - 1)
        lo, hi = max(0.0, best[1] - 2 * step), min(1.0, best[1] + 2 * step)
    return best


def _single_antenna_power(g_t, g_r, gamma_t, gamma_r, s2_t, s2_r, multicast):
    """Exact minimum power for one antenna, vectorised over gain arrays; ``inf`` if infeasible."""
    g_t, g_r = np.asarray(g_t, float), np.asarray(g_r, float)
    with np.errstate(divide="ignore", invalid="ignore"):
        if multicast:
            return np.maximum(gamma_t * s2_t / g_t, gamma_r * s2_r / g_r)
        # p_t g_t - gamma_t g_t p_r = gamma_t s2_t ; p_r g_r - gamma_r g_r p_t = gamma_r s2_r
        det = 1.0 - gamma_t * gamma_r
        p_t = (gamma_t * s2_t / g_t + gamma_t * gamma_r * s2_r / g_r) / det
        p_r = (gamma_r * s2_r / g_r + gamma_t * gamma_r * s2_t / g_t) / det
        total = p_t + p_r
    ok = (det > 0) & np.isfinite(total) & (p_t >= 0) & (p_r >= 0)
    return np.where(ok, total, np.inf)


def _two_antenna_multicast(h_t, h_r, gamma_t, gamma_r):
    """Minimum ``||w||^2`` with ``|h_k^H w|^2 >= gamma_k`` for batches of 2-vectors (unit noise)."""
    n_t = np.sum(np.abs(h_t) ** 2, axis=1)
    n_r = np.sum(np.abs(h_r) ** 2, axis=1)
    c = np.sum(np.conj(h_t) * h_r, axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        # only one constraint active: MRT to that user
        p1 = gamma_t / n_t
        ok1 = p1 * np.abs(c) ** 2 / n_t >= gamma_r * (1 - 1e-12)
        p2 = gamma_r / n_r
        ok2 = p2 * np.abs(c) ** 2 / n_r >= gamma_t * (1 - 1e-12)
        # both active: min over relative phase of b^H (A^H A)^{-1} b
        det = n_t * n_r - np.abs(c) ** 2
        both = (n_r * gamma_t + n_t * gamma_r - 2 * np.abs(c) * np.sqrt(gamma_t * gamma_r)) / det
    both = np.where(det > 1e-12 * n_t * n_r, both, np.inf)
    return np.minimum(both, np.minimum(np.where(ok1, p1, np.inf), np.where(ok2, p2, np.inf)))


def _two_antenna_unicast(h_t, h_r, gamma_t, gamma_r, iterations=500, tol=1e-13):
    """Minimum downlink power for two users via the virtual-uplink fixed point (unit noise).

    The dual powers give MMSE directions; the downlink powers for those
    directions are then solved exactly so the returned value is achievable.
    """
    B = len(h_t)
    lam = np.zeros((B, 2))
    alive = np.ones(B, dtype=bool)  # points with a zero effective channel are infeasible
    h = np.stack([h_t, h_r], axis=1)  # B x 2 users x N
    gam = np.array([gamma_t, gamma_r])
    eye = np.eye(h.shape[2])
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        for _ in range(iterations):
            new = np.empty_like(lam)
            for k in range(2):
                j = 1 - k
                S = eye[None] + lam[:, j, None, None] * np.einsum("bi,bj->bij", h[:, j], np.conj(h[:, j]))
                x = np.linalg.solve(S, h[:, k][..., None])[..., 0]
                new[:, k] = gam[k] / np.real(np.sum(np.conj(h[:, k]) * x, axis=1))
            alive &= np.all(np.isfinite(new) & (new >= 0), axis=1)
            new[~alive] = 0.0
            step = np.abs(new - lam) / np.maximum(new, 1e-300)
            lam = new
            if np.all(step[alive] < tol):
                break
        S = eye[None] + np.einsum("bk,bki,bkj->bij", lam, h, np.conj(h))
        d = np.linalg.solve(S[:, None], h[..., None])[..., 0]  # B x 2 x N
        d /= np.linalg.norm(d, axis=2, keepdims=True)
        cross = np.abs(np.einsum("bki,bli->bkl", np.conj(h), d)) ** 2  # |h_k^H d_l|^2
        A = np.empty((B, 2, 2))
        A[:, 0, 0], A[:, 1, 1] = cross[:, 0, 0], cross[:, 1, 1]
        A[:, 0, 1], A[:, 1, 0] = -gam[0] * cross[:, 0, 1], -gam[1] * cross[:, 1, 0]
        singular = ~alive | (np.abs(np.linalg.det(A)) <= 1e-14 * cross[:, 0, 0] * cross[:, 1, 1])
        A[singular] = np.eye(2)
        p = np.linalg.solve(A, np.broadcast_to(gam, (B, 2))[..., None])[..., 0]
    total = p.sum(axis=1)
    ok = ~singular & np.all(p >= 0, axis=1) & np.isfinite(total)
    return np.where(ok, total, np.inf)


def brute_force_min_power(spec: ProblemSpec, channels: ChannelSet, phase_levels: int = 32,
                          amplitude_levels: int = 11) -> float:
    """Grid-search global minimum of transmit power (watts) for ``N <= 2``, ``M <= 3``.

    Raises :class:`InfeasibleError` when no grid point meets the targets.
    """
    N, M = spec.N, spec.M
    if N > 2 or M > 3:
        raise ContractViolation("oracle limited to N <= 2 and M <= 3")
    if phase_levels > 64 or amplitude_levels > 21:
        raise ContractViolation("oracle grids limited to 64 phases and 21 amplitudes")
    channels.check(spec)
    G = channels.G
    H = [np.conj(v)[:, None] * G for v in (channels.v_t, channels.v_r)]
    s2 = spec.noise_powers
    gam = tuple(2.0 ** r - 1.0 for r in spec.rate_targets)
    E = _phase_grid(M, phase_levels)  # rows: exp(j theta); q^H H = sum_m sqrt(beta) e^{j theta} H[m]

    if spec.protocol is Protocol.TS:
        gains = [float(np.max(np.sum(np.abs(E @ H[k]) ** 2, axis=1))) for k in range(2)]
        if min(gains) <= 0:
            raise InfeasibleError("zero channel gain")
        return ts_power_scan(gains[0], gains[1], *spec.rate_targets, *s2)[0]

    betas = _amplitude_grid(spec, amplitude_levels)
    multicast = spec.multicast
    best = math.inf
    if N == 1:
        for beta_t in betas:
            amp = (np.sqrt(beta_t), np.sqrt(1.0 - beta_t))
            g = [float(np.max(np.abs(E @ (amp[k] * H[k][:, 0])) ** 2)) for k in range(2)]
            p = _single_antenna_power(g[0], g[1], gam[0], gam[1], s2[0], s2[1], multicast)
            best = min(best, float(p))
    else:
        n_cfg = len(betas) * len(E) ** 2
        if n_cfg > MAX_CONFIGS:
            raise ContractViolation(f"grid has {n_cfg} configurations, above the {MAX_CONFIGS} limit")
        for beta_t in betas:
            amp = (np.sqrt(beta_t), np.sqrt(1.0 - beta_t))
            # effective vectors h_k with received amplitude h_k^H w, noise-normalised
            eff = [np.conj(E @ (amp[k][:, None] * H[k])) / math.sqrt(s2[k]) for k in range(2)]
            h_t = np.repeat(eff[0], len(E), axis=0)
            h_r = np.tile(eff[1], (len(E), 1))
            if multicast:
                p = _two_antenna_multicast(h_t, h_r, gam[0], gam[1])
            else:
                p = _two_antenna_unicast(h_t, h_r, gam[0], gam[1])
            best = min(best, float(np.min(p)))
    if not math.isfinite(best):
        raise InfeasibleError("no grid point meets the targets")
    return best


def rate_check(solution, channels: ChannelSet, spec: ProblemSpec) -> tuple[float, float]:
    """Per-user rates recomputed with plain scalar loops."""
    M, N = spec.M, spec.N
    c = solution.coefficients
    betas = (c.beta_t, c.beta_r)
    thetas = (c.theta_t, c.theta_r)
    vs = (channels.v_t, channels.v_r)
    ws = (solution.w_t, solution.w_r)
    ts = spec.protocol is Protocol.TS

    def amplitude(k, w):
        total = 0j
        for m in range(M):
            q_m = math.sqrt(max(float(betas[k][m]), 0.0)) * cmath.exp(-1j * float(thetas[k][m]))
            row = 0j
            for n in range(N):
                row += complex(vs[k][m]).conjugate() * complex(channels.G[m, n]) * complex(w[n])
            total += q_m.conjugate() * row
        return abs(total) ** 2

    rates = []
    for k in range(2):
        s2 = spec.noise_powers[k]
        if ts:
            lam = (c.lambda_t, c.lambda_r)[k]
            rates.append(0.0 if lam == 0 else lam * math.log2(1 + amplitude(k, ws[k]) / (lam * s2)))
        elif spec.multicast:
            rates.append(math.log2(1 + amplitude(k, ws[0]) / s2))
        else:
            rates.append(math.log2(1 + amplitude(k, ws[k]) / (amplitude(k, ws[1 - k]) + s2)))
    return tuple(rates)
