"""Penalty-based SCA solver for energy-splitting and mode-switching surfaces.

The lifted problem keeps ``Q_k = q_k q_k^H`` and ``W_k = w_k w_k^H`` as PSD
variables. Each QoS constraint is bilinear in ``(Q_k, W)``; it is written as
a difference of convex quadratics and majorised around the current anchor.
Rank-one structure of ``Q_k`` is driven by the penalty
``||Q||_* - ||Q||_2`` and binary amplitudes (mode switching) by
``beta - beta^2``; both penalties are linearised at the anchor and their
weights grow geometrically in an outer loop.

Internally every subproblem is solved in normalised units: powers are
divided by a reference power ``P0`` and channels rescaled so that the QoS
right-hand sides become ``gamma_k``. Penalty factors are supplied in watts
and converted on the way in, so their meaning does not depend on the
normalisation.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numpy as np

from . import conic
from .conic import (ConicProgram, ConicStatus, HermitianVar, Linear, MatrixAffine,
                    Quadratic, VectorVar, selector)
from .model import (BeamformingSolution, ChannelSet, ContractViolation, InfeasibleError,
                    LiftedState, ProblemSpec, Protocol, SolverReport, StarCoefficients, Status,
                    conventional_pattern, per_user_rates)

log = logging.getLogger(__name__)

PENALTY_PROTOCOLS = (Protocol.ES, Protocol.MS, Protocol.UES, Protocol.CONV_RIS)


@dataclass(frozen=True)
class PenaltyOptions:
    """Schedule and tolerances of the two-loop penalty algorithm.

    ``eta0``/``chi0`` are the initial rank and binary penalty factors (in
    watts), multiplied by ``omega``/``varpi`` after every outer iteration.
    """

    eta0: float = 1e-4
    chi0: float = 1e-4
    omega: float = 10.0
    varpi: float = 10.0
    epsilon_inner: float = 1e-2
    epsilon_violation: float = 1e-7
    n_max: int = 30
    outer_max: int = 20
    eta_cap: float = 1e8
    solver_tol: float = 1e-9
    rank_tol: float = 1e-6
    ms_init: str = "random_binary"
    init_phases: str = "aligned"
    polish: bool = True
    flip_rounds: int = 3
    flip_candidates: int = 2
    init_attempts: int = 50
    init_candidates: int = 200

    def __post_init__(self):
        if self.omega <= 1 or self.varpi <= 1:
            raise ContractViolation("penalty scaling factors must exceed one")
        for name in ("eta0", "chi0", "epsilon_inner", "epsilon_violation", "solver_tol", "rank_tol"):
            if getattr(self, name) <= 0:
                raise ContractViolation(f"{name} must be positive")
        if self.n_max < 1 or self.outer_max < 1:
            raise ContractViolation("iteration limits must be at least one")
        if self.ms_init not in ("random_binary", "half"):
            raise ContractViolation("ms_init must be 'random_binary' or 'half'")
        if self.init_phases not in ("aligned", "random"):
            raise ContractViolation("init_phases must be 'aligned' or 'random'")


# --------------------------------------------------------------------------
# scalar building blocks
# --------------------------------------------------------------------------

def _require_hermitian(*mats: np.ndarray) -> None:
    for X in mats:
        X = np.asarray(X)
        if X.ndim != 2 or X.shape[0] != X.shape[1]:
            raise ContractViolation("expected a square matrix")
        scale = max(1.0, float(np.max(np.abs(X), initial=0.0)))
        if np.max(np.abs(X - X.conj().T), initial=0.0) > 1e-10 * scale:
            raise ContractViolation("matrix is not Hermitian")


def _fro2(X: np.ndarray) -> float:
    return float(np.linalg.norm(X) ** 2)


def trace_identity_pos(A: np.ndarray, B: np.ndarray) -> float:
    """``Tr(AB)`` written as ``||A+B||^2/2 - ||A||^2/2 - ||B||^2/2``."""
    _require_hermitian(A, B)
    return 0.5 * _fro2(A + B) - 0.5 * _fro2(A) - 0.5 * _fro2(B)


def trace_identity_neg(A: np.ndarray, B: np.ndarray) -> float:
    """``-Tr(AB)`` written as ``||A-B||^2/2 - ||A||^2/2 - ||B||^2/2``."""
    _require_hermitian(A, B)
    return 0.5 * _fro2(A - B) - 0.5 * _fro2(A) - 0.5 * _fro2(B)


def principal_eigvec(X: np.ndarray) -> tuple[float, np.ndarray]:
    """Largest eigenpair; on ties numpy's ascending order makes the choice deterministic."""
    vals, vecs = np.linalg.eigh(X)
    return float(vals[-1]), vecs[:, -1]


def rank_penalty(Q: np.ndarray) -> float:
    """``||Q||_* - ||Q||_2``; zero exactly when ``Q`` has rank at most one."""
    eig = np.abs(np.linalg.eigvalsh(Q))
    if eig.size == 0:
        return 0.0
    return float(max(np.sum(eig) - np.max(eig), 0.0))


def sca_rank_surrogate(Q: np.ndarray, Q_anchor: np.ndarray) -> float:
    """Convex majoriser of :func:`rank_penalty` obtained by linearising ``||Q||_2`` at the anchor."""
    lam, u = principal_eigvec(Q_anchor)
    nuclear = float(np.sum(np.abs(np.linalg.eigvalsh(Q))))
    linear = lam + float(np.real(np.vdot(u, (Q - Q_anchor) @ u)))
    return nuclear - linear


def binary_penalty_surrogate(beta, beta_anchor):
    """Linear majoriser ``(1 - 2 b0) b + b0^2`` of ``b - b^2``."""
    beta, beta_anchor = np.asarray(beta, float), np.asarray(beta_anchor, float)
    out = (1.0 - 2.0 * beta_anchor) * beta + beta_anchor ** 2
    return float(out) if out.ndim == 0 else out


def extract_rank_one(X: np.ndarray) -> tuple[np.ndarray, float]:
    """Principal component ``sqrt(l1) u1`` and the residual ``l2 / l1``."""
    X = np.asarray(X)
    n = X.shape[0]
    if n == 0:
        return np.zeros(0, dtype=complex), 0.0
    if not np.any(X):
        return np.zeros(n, dtype=complex), 0.0
    vals, vecs = np.linalg.eigh(0.5 * (X + X.conj().T))
    l1 = vals[-1]
    if l1 <= 0:
        return np.zeros(n, dtype=complex), 0.0
    l2 = max(vals[-2], 0.0) if n > 1 else 0.0
    return np.sqrt(l1) * vecs[:, -1], float(l2 / l1)


# --------------------------------------------------------------------------
# QoS majorisers
# --------------------------------------------------------------------------

def _qos_terms(k: int, H: np.ndarray, gamma: float, Q_anchor: np.ndarray, W_anchor: dict,
               names: dict, multicast: bool, scale: float):
    """Symbolic pieces of the interference and signal majorisers for user ``k``.

    Returns ``(upsilon, pi)``, each a tuple ``(squares, linear)``. ``names``
    maps ``"Q"``, ``"own"`` and ``"other"`` to variable names; ``W_anchor``
    holds the anchor matrix for those same keys.
    """
    a = scale
    M = H.shape[0]
    eye = np.eye(M)
    Hh = H.conj().T

    def lifted(W):
        return H @ W @ Hh

    def pieces(sign: float, weight: float, key: str):
        # ||aQ + sX/a||^2/2 with the two negative squares linearised, expanded
        # about the anchor: the square then only measures the step, which
        # avoids cancelling large constants inside the cone constraint
        Xn = lifted(W_anchor[key])
        expr = MatrixAffine(((names["Q"], a * eye, eye), (names[key], sign * H / a, Hh)),
                            const=-(a * Q_anchor + sign * Xn / a))
        cross = float(np.real(np.sum(Q_anchor.T * Xn)))
        lin = Linear({names["Q"]: sign * weight * Xn, names[key]: sign * weight * (Hh @ Q_anchor @ H)},
                     -sign * weight * cross)
        return ((weight / 2, expr),), lin

    if multicast or gamma == 0:
        upsilon = ((), Linear())
    else:
        upsilon = pieces(+1.0, gamma, "other")
    pi = pieces(-1.0, 1.0, "own")
    return upsilon, pi


def _combine(*parts) -> tuple[tuple, Linear]:
    squares, lin = (), Linear()
    for sq, li in parts:
        squares += tuple(sq)
        lin = lin + li
    return squares, lin


def sca_qos_surrogates(Q_k, W_t, W_r, anchors, gamma_bar_k, H_k, k=0, scale=1.0, multicast=False):
    """Evaluate the convex upper bounds of the interference and signal DC terms.

    ``anchors`` is ``(Q_anchor, W_t_anchor, W_r_anchor)``. The returned pair
    majorises ``gamma Tr(Q H W_kbar H^H)`` and ``-Tr(Q H W_k H^H)``
    respectively, and is tangent at the anchor.
    """
    Q_a, Wt_a, Wr_a = anchors
    own, other = ("W_t", "W_r") if k == 0 else ("W_r", "W_t")
    names = {"Q": "Q", "own": own, "other": other}
    W_anchor = {"own": Wt_a if k == 0 else Wr_a, "other": Wr_a if k == 0 else Wt_a}
    upsilon, pi = _qos_terms(k, np.asarray(H_k), gamma_bar_k, np.asarray(Q_a), W_anchor, names,
                             multicast, scale)
    values = {"Q": np.asarray(Q_k), "W_t": np.asarray(W_t), "W_r": np.asarray(W_r)}
    return (Quadratic(*upsilon).evaluate(values), Quadratic(*pi).evaluate(values))


def qos_dc_terms(Q_k, W_t, W_r, gamma_bar_k, H_k, k=0, scale=1.0):
    """Exact DC-form values of the interference and signal terms (no linearisation)."""
    W_own, W_other = (W_t, W_r) if k == 0 else (W_r, W_t)
    a = scale
    X_other = H_k @ W_other @ H_k.conj().T
    X_own = H_k @ W_own @ H_k.conj().T
    ups = gamma_bar_k * trace_identity_pos(a * Q_k, X_other / a)
    pi = trace_identity_neg(a * Q_k, X_own / a)
    return ups, pi


# --------------------------------------------------------------------------
# subproblem assembly
# --------------------------------------------------------------------------

@dataclass
class SubproblemContext:
    """Normalisation and structural choices shared by all subproblems of one run.

    ``support[k]`` lists the surface elements that carry user ``k``'s
    signal; it is the full range unless amplitudes are fixed. ``H[k]`` is
    the normalised cascaded channel restricted to that support.
    """

    spec: ProblemSpec
    H: tuple[np.ndarray, np.ndarray]
    P0: float
    scale: float
    gammas: tuple[float, float]
    fixed_beta: tuple[np.ndarray, np.ndarray] | None
    support: tuple[np.ndarray, np.ndarray]
    uniform: bool = False
    binary: bool = False

    @property
    def w_names(self) -> tuple[str, str]:
        return ("W_c", "W_c") if self.spec.multicast else ("W_t", "W_r")

    def normalise(self, state: LiftedState) -> dict[str, np.ndarray]:
        """Anchor values (restricted Q, scaled W) keyed by variable name."""
        vals = {}
        for k, tag in enumerate("tr"):
            s = self.support[k]
            vals[f"Q_{tag}"] = state.Q[k][np.ix_(s, s)]
            vals[self.w_names[k]] = state.W_user(k) / self.P0
        if self.fixed_beta is None:
            vals["beta_t"] = np.asarray(state.beta_t, float)
        return vals

    def lift(self, values: dict[str, np.ndarray]) -> LiftedState:
        M, c = self.spec.M, self.spec.energy_budget
        if self.fixed_beta is None:
            b = np.clip(values["beta_t"], 0.0, c)
            beta = (b, c - b)
        else:
            beta = self.fixed_beta
        Q = []
        for k, tag in enumerate("tr"):
            full = np.zeros((M, M), dtype=complex)
            s = self.support[k]
            full[np.ix_(s, s)] = conic.hermitian_part(values[f"Q_{tag}"])
            Q.append(full)
        if self.spec.multicast:
            W = (conic.hermitian_part(values["W_c"]) * self.P0,)
        else:
            W = tuple(conic.hermitian_part(values[n]) * self.P0 for n in ("W_t", "W_r"))
        return LiftedState((Q[0], Q[1]), W, beta[0].copy(), beta[1].copy())


def make_context(spec: ProblemSpec, channels: ChannelSet, anchors: LiftedState | None = None,
                 fixed_beta=None, scale: float | None = None) -> SubproblemContext:
    """Build the normalisation for a run; ``scale`` is derived from ``anchors`` when omitted."""
    channels.check(spec)
    H_full = channels.cascaded()
    s2 = spec.noise_powers
    if anchors is not None and anchors.power() > 0:
        P0 = anchors.power() / len(anchors.W)
    else:
        P0 = 1.0 / float(np.mean([_fro2(H_full[k]) / s2[k] for k in range(2)]))
    if fixed_beta is None and spec.protocol is Protocol.CONV_RIS:
        fixed_beta = conventional_pattern(spec.M)
    if fixed_beta is not None:
        fixed_beta = tuple(np.asarray(b, float) for b in fixed_beta)
        support = tuple(np.flatnonzero(b > 0) for b in fixed_beta)
    else:
        support = (np.arange(spec.M), np.arange(spec.M))
    H = tuple(H_full[k][support[k]] * np.sqrt(P0 / s2[k]) for k in range(2))
    ctx = SubproblemContext(spec, H, P0, 1.0, spec.sinr_targets(), fixed_beta, support,
                            uniform=spec.protocol is Protocol.UES,
                            binary=spec.protocol is Protocol.MS and fixed_beta is None)
    if scale is None and anchors is not None:
        scale = dc_balance(ctx, anchors)
    ctx.scale = 1.0 if scale is None else float(scale)
    return ctx


def dc_balance(ctx: SubproblemContext, anchors: LiftedState) -> float:
    """Scale ``a`` with ``a^2 ~ ||H W H^H|| / ||Q||`` so both halves of each DC split are comparable."""
    vals = ctx.normalise(anchors)
    ratios = []
    for k, tag in enumerate("tr"):
        q_norm = np.linalg.norm(vals[f"Q_{tag}"])
        for name in set(ctx.w_names):
            x_norm = np.linalg.norm(ctx.H[k] @ vals[name] @ ctx.H[k].conj().T)
            if q_norm > 0 and x_norm > 0:
                ratios.append(x_norm / q_norm)
    return float(np.sqrt(np.mean(ratios))) if ratios else 1.0


def build_relaxed_subproblem(spec: ProblemSpec, channels: ChannelSet, anchors: LiftedState,
                             eta: float, chi: float = 0.0, protocol: Protocol | None = None,
                             scenario=None, context: SubproblemContext | None = None) -> ConicProgram:
    """Convex SDP majorising the penalised lifted problem at ``anchors``.

    Rank-one constraints are dropped; the rank penalty enters through its
    linearisation and, for mode switching, ``2M`` binary-penalty terms are
    added. Variables are in normalised units (see :class:`SubproblemContext`).
    """
    if protocol is not None or scenario is not None:
        spec = ProblemSpec(spec.N, spec.M, protocol or spec.protocol, scenario or spec.scenario,
                           spec.rate_targets, spec.noise_powers, spec.energy_budget)
    ctx = context or make_context(spec, channels, anchors)
    anchor_vals = ctx.normalise(anchors)
    N, c = spec.N, spec.energy_budget
    w_names = ctx.w_names

    variables = [HermitianVar(n, N) for n in dict.fromkeys(w_names)]
    variables += [HermitianVar(f"Q_{tag}", len(ctx.support[k])) for k, tag in enumerate("tr")]
    if ctx.fixed_beta is None:
        variables.append(VectorVar("beta_t", spec.M, 0.0, c))

    objective = [("power", Linear({n: np.eye(N) for n in dict.fromkeys(w_names)}))]
    eta_n = eta / ctx.P0
    nuclear = []
    for tag in "tr":
        Qa = anchor_vals[f"Q_{tag}"]
        _, u = principal_eigvec(Qa)
        nuclear.append((eta_n, f"Q_{tag}"))
        objective.append((f"rank Q_{tag}", Linear({f"Q_{tag}": -eta_n * np.outer(u, u.conj())})))

    equalities = []
    M = spec.M
    for k, tag in enumerate("tr"):
        s = ctx.support[k]
        for i, m in enumerate(s):
            E = selector(len(s), i)
            if ctx.fixed_beta is not None:
                equalities.append((f"diag {tag}[{m}]", Linear({f"Q_{tag}": E}, -ctx.fixed_beta[k][m])))
            elif k == 0:
                equalities.append((f"diag {tag}[{m}]", Linear({"Q_t": E, "beta_t": -conic.unit(M, m)})))
            else:
                equalities.append((f"diag {tag}[{m}]", Linear({"Q_r": E, "beta_t": conic.unit(M, m)}, -c)))
    if ctx.uniform and ctx.fixed_beta is None:
        for m in range(1, M):
            equalities.append((f"uniform split [{m}]",
                               Linear({"beta_t": conic.unit(M, m) - conic.unit(M, 0)})))

    if ctx.binary:
        chi_n = chi / ctx.P0
        b_anchor = anchor_vals["beta_t"]
        for m in range(M):
            bt = b_anchor[m]
            objective.append((f"binary t[{m}]",
                              Linear({"beta_t": chi_n * (1 - 2 * bt) * conic.unit(M, m)}, chi_n * bt * bt)))
        for m in range(M):
            br = c - b_anchor[m]
            # beta_r = c - beta_t
            slope = chi_n * (1 - 2 * br)
            objective.append((f"binary r[{m}]",
                              Linear({"beta_t": -slope * conic.unit(M, m)}, slope * c + chi_n * br * br)))

    quadratics = []
    for k, tag in enumerate("tr"):
        names = {"Q": f"Q_{tag}", "own": w_names[k], "other": w_names[1 - k]}
        W_anchor = {"own": anchor_vals[w_names[k]], "other": anchor_vals[w_names[1 - k]]}
        ups, pi = _qos_terms(k, ctx.H[k], ctx.gammas[k], anchor_vals[f"Q_{tag}"], W_anchor, names,
                             spec.multicast, ctx.scale)
        squares, lin = _combine(ups, pi)
        row = 1.0 / max(1.0, ctx.gammas[k])
        squares = tuple((row * w, expr) for w, expr in squares)
        quadratics.append(Quadratic(squares, (lin + ctx.gammas[k]) * row, label=f"qos {tag}"))

    return ConicProgram(tuple(variables), tuple(objective), tuple(nuclear), tuple(equalities),
                        (), tuple(quadratics))


# --------------------------------------------------------------------------
# initialisation
# --------------------------------------------------------------------------

def _balance_powers(h: list[np.ndarray], d: list[np.ndarray], gammas) -> np.ndarray | None:
    """Powers meeting both normalised SINR targets with equality for fixed unit directions."""
    A = np.zeros((2, 2))
    for i in range(2):
        A[i, i] = abs(np.vdot(h[i], d[i])) ** 2
        A[i, 1 - i] = -gammas[i] * abs(np.vdot(h[i], d[1 - i])) ** 2
    try:
        p = np.linalg.solve(A, np.asarray(gammas, float))
    except np.linalg.LinAlgError:
        return None
    if np.all(np.isfinite(p)) and np.all(p >= 0):
        return p
    return None


def _unit(x: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(x)
    return x / n if n > 0 else x


def active_beamformers(spec: ProblemSpec, h: list[np.ndarray]) -> list[np.ndarray] | None:
    """Cheap feasible beamformers for effective channels ``h_k`` (SINR targets on unit noise).

    ``h_k`` is defined so that the received amplitude is ``h_k^H w``.
    Unicast tries MRT and zero-forcing directions with balanced powers and
    keeps the cheaper; multicast uses the dominant direction of
    ``h_t h_t^H + h_r h_r^H`` with the smallest power serving both users.
    """
    gammas = spec.sinr_targets()
    if spec.multicast:
        _, d = principal_eigvec(sum(np.outer(x, x.conj()) for x in h))
        gains = [abs(np.vdot(x, d)) ** 2 for x in h]
        if min(gains) <= 0:
            return None
        p = max(g / s for g, s in zip(gammas, gains))
        return [np.sqrt(p) * d, np.sqrt(p) * d]
    options = [[_unit(h[0]), _unit(h[1])]]
    Hm = np.stack(h, axis=1)
    if spec.N >= 2 and np.linalg.matrix_rank(Hm) == 2:
        Z = Hm @ np.linalg.inv(Hm.conj().T @ Hm)
        options.append([_unit(Z[:, 0]), _unit(Z[:, 1])])
    best = None
    for d in options:
        p = _balance_powers(h, d, gammas)
        if p is not None and (best is None or p.sum() < best[0].sum()):
            best = (p, d)
    if best is None:
        return None
    p, d = best
    return [np.sqrt(p[i]) * d[i] for i in range(2)]


def anchor_from_phases(spec: ProblemSpec, channels: ChannelSet, beta_t, beta_r, u_t, u_r) -> LiftedState | None:
    """Rank-one lifted point with unit-modulus phase vectors ``u_k`` and cheap feasible beamformers."""
    H = channels.cascaded()
    s2 = spec.noise_powers
    q = [np.sqrt(beta_t) * u_t, np.sqrt(beta_r) * u_r]
    h = [H[k].conj().T @ q[k] / np.sqrt(s2[k]) for k in range(2)]
    w = active_beamformers(spec, h)
    if w is None:
        return None
    Q = tuple(np.outer(x, x.conj()) for x in q)
    if spec.multicast:
        W = (np.outer(w[0], w[0].conj()),)
    else:
        W = tuple(np.outer(x, x.conj()) for x in w)
    return LiftedState(Q, W, np.array(beta_t, float), np.array(beta_r, float))


def initial_state(spec: ProblemSpec, channels: ChannelSet, rng: np.random.Generator,
                  options: PenaltyOptions = PenaltyOptions(), fixed_beta=None) -> LiftedState:
    """Cheapest of several feasible rank-one starting points, in watts.

    Candidates are the channel-aligned phases (first) and random phase
    draws, each with the protocol's starting amplitudes and cheap balanced
    beamformers. Raises :class:`InfeasibleError` if none is feasible.
    """
    M, c = spec.M, spec.energy_budget
    H = channels.cascaded()
    best = None
    tries = max(options.init_candidates, 1)
    for attempt in range(tries + options.init_attempts):
        if best is not None and attempt >= tries:
            break
        if fixed_beta is not None:
            beta_t, beta_r = (np.asarray(b, float) for b in fixed_beta)
        elif spec.protocol is Protocol.CONV_RIS:
            beta_t, beta_r = conventional_pattern(M)
        elif spec.protocol is Protocol.MS and options.ms_init == "random_binary" and M >= 2:
            mask = np.zeros(M, bool)
            while mask.all() or not mask.any():
                mask = rng.random(M) < 0.5
            beta_t = np.where(mask, c, 0.0)
            beta_r = c - beta_t
        else:
            beta_t = np.full(M, c / 2)
            beta_r = c - beta_t
        if attempt == 0 and options.init_phases == "aligned":
            u = [dominant_phases(H[k]) for k in range(2)]
        else:
            u = list(np.exp(2j * np.pi * rng.random((2, M))))
        state = anchor_from_phases(spec, channels, beta_t, beta_r, u[0], u[1])
        if state is not None and (best is None or state.power() < best.power()):
            best = state
    if best is None:
        raise InfeasibleError("no feasible starting point found")
    return best


def dominant_phases(H_k: np.ndarray) -> np.ndarray:
    """Unit-modulus projection of the dominant left singular vector of ``H_k``."""
    U, _, _ = np.linalg.svd(H_k, full_matrices=False)
    return np.exp(1j * np.angle(U[:, 0]))


# --------------------------------------------------------------------------
# main loop
# --------------------------------------------------------------------------

def constraint_violation(state: LiftedState, binary: bool) -> float:
    """Largest equality-constraint residual: rank gaps of ``Q_k`` and, if binary, ``beta - beta^2``."""
    v = max(rank_penalty(Q) for Q in state.Q)
    if binary:
        for b in (state.beta_t, state.beta_r):
            v = max(v, float(np.max(b - b * b, initial=0.0)))
    return float(max(v, 0.0))


def penalized_objective(state: LiftedState, eta: float, chi: float, binary: bool) -> float:
    """True penalised objective in watts."""
    value = state.power() + eta * sum(rank_penalty(Q) for Q in state.Q)
    if binary:
        value += chi * sum(float(np.sum(b - b * b)) for b in (state.beta_t, state.beta_r))
    return float(value)


def _solve_program(program: ConicProgram, tol: float) -> conic.ConicResult:
    result = conic.solve(program, tolerance=tol)
    if result.status is ConicStatus.NUMERICAL_FAILURE:
        result = conic.solve(program, tolerance=tol * 100, max_iter=800)
    return result


def _inner_loop(spec, channels, ctx, state, eta, chi, options, report, outer):
    """Successive convex approximation at fixed penalty factors."""
    prev = penalized_objective(state, eta, chi, ctx.binary) / ctx.P0
    inner = 0
    for inner in range(1, options.n_max + 1):
        # any positive scale keeps the surrogate tangent, so it may track the anchor
        ctx.scale = dc_balance(ctx, state)
        program = build_relaxed_subproblem(spec, channels, state, eta, chi, context=ctx)
        result = _solve_program(program, options.solver_tol)
        if not result.ok:
            return state, inner, result.status
        state = ctx.lift(result.values)
        value = result.objective
        report.objective_trace.append(value * ctx.P0)
        report.records.append({"outer": outer, "inner": inner, "objective": value * ctx.P0,
                               "power": state.power(),
                               "violation": constraint_violation(state, ctx.binary)})
        decrease = (prev - value) / abs(prev) if prev != 0 else 0.0
        prev = value
        if decrease < options.epsilon_inner:
            break
    return state, inner, ConicStatus.OPTIMAL


def _penalty_loop(spec, channels, ctx, state, options, report, eta=None, chi=None,
                  max_outer=None):
    eta = options.eta0 if eta is None else eta
    chi = options.chi0 if chi is None else chi
    max_outer = options.outer_max if max_outer is None else max_outer
    for outer in range(1, max_outer + 1):
        state, inner, status = _inner_loop(spec, channels, ctx, state, eta, chi, options, report, outer)
        report.inner_iterations_per_outer.append(inner)
        report.outer_iterations = outer
        if status is not ConicStatus.OPTIMAL:
            report.status = Status.INFEASIBLE if status is ConicStatus.INFEASIBLE else Status.SOLVER_FAILURE
            report.failed_outer = outer
            return state, eta, chi
        violation = constraint_violation(state, ctx.binary)
        report.violation_trace.append(violation)
        log.debug("outer %d: %d inner, power %.3e W, violation %.2e", outer, inner, state.power(), violation)
        if violation <= options.epsilon_violation:
            report.status = Status.CONVERGED
            return state, eta, chi
        eta = min(eta * options.omega, options.eta_cap)
        chi = min(chi * options.varpi, options.eta_cap)
    report.status = Status.MAX_ITER
    return state, eta, chi


def _beamformers_from_state(spec, state: LiftedState) -> tuple[list[np.ndarray], list[float]]:
    if spec.multicast:
        w, res = extract_rank_one(state.W[0])
        return [w, w], [res]
    out = [extract_rank_one(W) for W in state.W]
    return [o[0] for o in out], [o[1] for o in out]


def assemble_solution(spec: ProblemSpec, channels: ChannelSet, state: LiftedState,
                      report: SolverReport | None = None) -> BeamformingSolution:
    """Rank-one vectors from a lifted state, with power restoration if targets are missed.

    Surface phases come from the principal eigenvector of each ``Q_k`` and
    amplitudes from ``beta``, so energy conservation holds exactly.
    """
    report = report if report is not None else SolverReport()
    thetas, q_res = [], []
    for k in range(2):
        q, res = extract_rank_one(state.Q[k])
        thetas.append(np.mod(-np.angle(q), 2 * np.pi))
        q_res.append(res)
    coeffs = StarCoefficients(state.beta_t.copy(), state.beta_r.copy(), thetas[0], thetas[1])
    w, w_res = _beamformers_from_state(spec, state)
    report.rank_residuals = {"Q_t": q_res[0], "Q_r": q_res[1]}
    for name, r in zip(("W_c",) if spec.multicast else ("W_t", "W_r"), w_res):
        report.rank_residuals[name] = r
    if max(report.rank_residuals.values()) > 1e-6:
        report.flags.append("rank_residual")

    sol = _make_solution(spec, channels, coeffs, w)
    targets = spec.rate_targets
    if any(r < t - 1e-9 for r, t in zip(sol.achieved_rates, targets)):
        H = channels.cascaded()
        s2 = spec.noise_powers
        h = [H[k].conj().T @ coeffs.q(k) / np.sqrt(s2[k]) for k in range(2)]
        restored = None
        if spec.multicast:
            d = _unit(w[0])
            gains = [abs(np.vdot(x, d)) ** 2 for x in h]
            if min(gains) > 0:
                p = max(g / s for g, s in zip(spec.sinr_targets(), gains))
                restored = [np.sqrt(p) * d] * 2
        else:
            d = [_unit(x) for x in w]
            p = _balance_powers(h, d, spec.sinr_targets())
            if p is not None:
                restored = [np.sqrt(p[i]) * d[i] for i in range(2)]
        if restored is not None:
            sol = _make_solution(spec, channels, coeffs, restored)
            report.flags.append("power_restored")
        else:
            report.flags.append("qos_unmet")
    return sol


def _make_solution(spec, channels, coeffs, w) -> BeamformingSolution:
    if spec.multicast:
        power = float(np.linalg.norm(w[0]) ** 2)
    else:
        power = float(np.linalg.norm(w[0]) ** 2 + np.linalg.norm(w[1]) ** 2)
    sol = BeamformingSolution(np.asarray(w[0]), np.asarray(w[1]), coeffs, power, (0.0, 0.0),
                              spec.protocol, spec.scenario)
    sol.achieved_rates = per_user_rates(spec, channels, sol)
    return sol


def solve_penalty(spec: ProblemSpec, channels: ChannelSet, options: PenaltyOptions = PenaltyOptions(),
                  initial_state: LiftedState | None = None, rng: np.random.Generator | None = None,
                  fixed_beta=None) -> tuple[BeamformingSolution | None, SolverReport]:
    """Run the penalty algorithm for ES, MS, UES or the conventional-RIS baseline.

    Returns the recovered vector solution (``None`` when no subproblem
    could be solved) and a report with per-iteration traces.
    """
    if spec.protocol not in PENALTY_PROTOCOLS:
        raise ContractViolation(f"penalty solver does not handle {spec.protocol.value}")
    channels.check(spec)
    rng = np.random.default_rng() if rng is None else rng
    report = SolverReport()
    if initial_state is None:
        try:
            initial_state = _initial(spec, channels, rng, options, fixed_beta)
        except InfeasibleError as exc:
            report.status = Status.INFEASIBLE
            report.message = str(exc)
            return None, report
    ctx = make_context(spec, channels, initial_state, fixed_beta=fixed_beta)
    state, _, _ = _penalty_loop(spec, channels, ctx, initial_state, options, report)
    if not report.records:
        return None, report

    if ctx.binary and options.polish:
        state = _polish(spec, channels, state, options, report)

    solution = assemble_solution(spec, channels, state, report)
    return solution, report


def _initial(spec, channels, rng, options, fixed_beta):
    return initial_state(spec, channels, rng, options, fixed_beta)


def _phase_vectors(spec: ProblemSpec, channels: ChannelSet, state: LiftedState) -> list[np.ndarray]:
    """Unit-modulus phases per user; elements the user does not own are co-phased with its beam."""
    H = channels.cascaded()
    out = []
    for k in range(2):
        q, _ = extract_rank_one(state.Q[k])
        w, _ = extract_rank_one(state.W_user(k))
        y = H[k] @ w
        received = np.vdot(q, y)
        ref = np.angle(received) if abs(received) > 0 else 0.0
        u = np.exp(1j * np.angle(q))
        weak = state.beta(k) < 0.5 * spec.energy_budget
        u[weak] = np.exp(1j * (np.angle(y[weak]) - ref))
        out.append(u)
    return out


def _fixed_assignment_run(spec, channels, beta_t, u, options):
    """Penalty schedule from ``eta0`` with amplitudes frozen; returns ``(state, report)`` or ``None``."""
    c = spec.energy_budget
    fixed = (beta_t, c - beta_t)
    anchor = anchor_from_phases(spec, channels, fixed[0], fixed[1], u[0], u[1])
    if anchor is None:
        return None
    ctx = make_context(spec, channels, anchor, fixed_beta=fixed)
    sub = SolverReport()
    state, _, _ = _penalty_loop(spec, channels, ctx, anchor, options, sub)
    if sub.status is not Status.CONVERGED:
        return None
    return state, sub


def _screen_power(spec, channels, beta_t, u) -> float:
    anchor = anchor_from_phases(spec, channels, beta_t, spec.energy_budget - beta_t, u[0], u[1])
    return np.inf if anchor is None else anchor.power()


def _neighbours(beta_t: np.ndarray, c: float):
    """Assignments one flip or one T/R swap away that keep both users served."""
    M = len(beta_t)
    for m in range(M):
        cand = beta_t.copy()
        cand[m] = c - cand[m]
        if cand.any() and not cand.all():
            yield cand
    on = np.flatnonzero(beta_t > 0)
    off = np.flatnonzero(beta_t == 0)
    for i in on:
        for j in off:
            cand = beta_t.copy()
            cand[i], cand[j] = 0.0, c
            yield cand


def _polish(spec, channels, state, options, report) -> LiftedState:
    """Round to a binary assignment, re-optimise with it frozen, then search nearby assignments.

    Neighbours differ by one flipped element or one swapped T/R pair. Each candidate is screened by the cheap beamformer power at the
    current phases; the ``flip_candidates`` most promising ones get a full
    fixed-assignment run and the best improvement is kept.
    """
    c = spec.energy_budget
    beta_t = np.where(state.beta_t >= c / 2, c, 0.0)
    u = _phase_vectors(spec, channels, state)
    best = None
    if beta_t.any() and not beta_t.all():
        best = _fixed_assignment_run(spec, channels, beta_t, u, options)
    best_beta = beta_t
    rounds = options.flip_rounds if spec.M >= 2 else 0
    for _ in range(rounds):
        current = best[0].power() if best else np.inf
        if best:
            u = _phase_vectors(spec, channels, best[0])
        candidates = []
        for cand in _neighbours(best_beta, c):
            candidates.append((_screen_power(spec, channels, cand, u), len(candidates), cand))
        candidates.sort(key=lambda t: t[:2])
        improved = None
        for _, _, cand in candidates[:options.flip_candidates]:
            run = _fixed_assignment_run(spec, channels, cand, u, options)
            if run and run[0].power() < current * (1 - 1e-6) and (improved is None or run[0].power() < improved[0][0].power()):
                improved = (run, cand)
        if improved is None:
            break
        best, best_beta = improved
        report.flags.append("flip_accepted")
    if best is None:
        report.flags.append("polish_failed")
        state = replace(state)
        state.beta_t, state.beta_r = best_beta, c - best_beta
        return state
    polished, sub = best
    report.objective_trace.extend(sub.objective_trace)
    report.records.extend(dict(r, polish=True) for r in sub.records)
    report.flags.append("polished")
    if report.status is not Status.CONVERGED:
        report.flags.append(f"main_loop_{report.status.value.lower()}")
        report.status = Status.CONVERGED
    return polished
