"""Small conic modelling layer with a Clarabel backend.

Programs are assembled from Hermitian PSD matrix variables, bounded real
vector variables, affine functionals, affine matrix maps ``L X R`` and
convex quadratic (squared Frobenius norm) constraints. The nonconvex
algorithms only talk to :class:`ConicProgram` and :func:`solve`; nothing
outside this module imports the numerical backend.

Complex Hermitian variables are handled with the real embedding

    X = A + jB  (A symmetric, B skew)   <=>   [[A, -B], [B, A]] >= 0

and every quadratic constraint ``sum_i w_i ||A_i(x)||_F^2 + l(x) <= 0``
becomes a single rotated second-order cone.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

import clarabel

__all__ = [
    "ConicProgram",
    "ConicResult",
    "ConicStatus",
    "HermitianVar",
    "Linear",
    "MatrixAffine",
    "Quadratic",
    "VectorVar",
    "solve",
]

DEFAULT_TOLERANCE = 1e-9
_SQRT2 = np.sqrt(2.0)


class ConicStatus(enum.Enum):
    OPTIMAL = "OPTIMAL"
    INFEASIBLE = "INFEASIBLE"
    NUMERICAL_FAILURE = "NUMERICAL_FAILURE"


@dataclass(frozen=True)
class HermitianVar:
    """An ``n x n`` Hermitian variable constrained to the PSD cone."""

    name: str
    dim: int

    @property
    def n_params(self) -> int:
        return self.dim * self.dim


@dataclass(frozen=True)
class VectorVar:
    """A real vector variable with elementwise bounds (``None`` = free)."""

    name: str
    size: int
    lower: float | None = 0.0
    upper: float | None = None

    @property
    def n_params(self) -> int:
        return self.size


Variable = HermitianVar | VectorVar


@dataclass(frozen=True)
class Linear:
    """Real affine functional ``sum Re Tr(C_v X_v) + sum c_v . x_v + const``.

    Coefficients of Hermitian variables are Hermitian matrices, those of
    vector variables are real vectors.
    """

    coeffs: Mapping[str, np.ndarray] = field(default_factory=dict)
    const: float = 0.0

    def __add__(self, other: "Linear | float") -> "Linear":
        if not isinstance(other, Linear):
            return Linear(dict(self.coeffs), self.const + float(other))
        coeffs = dict(self.coeffs)
        for name, c in other.coeffs.items():
            coeffs[name] = coeffs[name] + c if name in coeffs else c
        return Linear(coeffs, self.const + other.const)

    __radd__ = __add__

    def __mul__(self, scale: float) -> "Linear":
        return Linear({k: scale * c for k, c in self.coeffs.items()}, scale * self.const)

    __rmul__ = __mul__

    def __neg__(self) -> "Linear":
        return self * -1.0

    def __sub__(self, other: "Linear | float") -> "Linear":
        return self + (-other if isinstance(other, Linear) else -float(other))

    def evaluate(self, values: Mapping[str, np.ndarray]) -> float:
        total = self.const
        for name, c in self.coeffs.items():
            x = values[name]
            if np.ndim(x) == 2:
                total += float(np.real(np.sum(c.T * x)))
            else:
                total += float(np.dot(c, x))
        return total


@dataclass(frozen=True)
class MatrixAffine:
    """Complex matrix map ``sum_i L_i X_{v_i} R_i + C`` over Hermitian variables."""

    terms: tuple[tuple[str, np.ndarray, np.ndarray], ...]
    const: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, int]:
        _, left, right = self.terms[0]
        return left.shape[0], right.shape[1]

    def is_hermitian(self) -> bool:
        for _, left, right in self.terms:
            # L X R is Hermitian for every Hermitian X when L = s R^H with s real
            adj = right.conj().T
            if left.shape != adj.shape:
                return False
            denom = float(np.vdot(adj, adj).real)
            s = float(np.vdot(adj, left).real) / denom if denom > 0 else 0.0
            if np.max(np.abs(left - s * adj), initial=0.0) > 1e-12 * max(1.0, np.max(np.abs(left))):
                return False
        return self.const is None or np.allclose(self.const, self.const.conj().T)

    def evaluate(self, values: Mapping[str, np.ndarray]) -> np.ndarray:
        out = np.zeros(self.shape, dtype=complex)
        for name, left, right in self.terms:
            out += left @ values[name] @ right
        if self.const is not None:
            out += self.const
        return out


@dataclass(frozen=True)
class Quadratic:
    """Constraint ``sum_i w_i ||A_i||_F^2 + linear <= 0`` with ``w_i >= 0``."""

    squares: tuple[tuple[float, MatrixAffine], ...]
    linear: Linear
    label: str = ""

    def evaluate(self, values: Mapping[str, np.ndarray]) -> float:
        total = self.linear.evaluate(values)
        for weight, expr in self.squares:
            total += weight * float(np.linalg.norm(expr.evaluate(values)) ** 2)
        return total


@dataclass(frozen=True)
class ConicProgram:
    """Immutable description of a convex conic program (minimisation).

    ``nuclear`` holds ``(weight, var_name)`` pairs; since every matrix
    variable is PSD the nuclear norm is encoded as a trace.
    ``objective`` is a tuple of labelled affine terms so callers can inspect
    what a program penalises.
    """

    variables: tuple[Variable, ...]
    objective: tuple[tuple[str, Linear], ...] = ()
    nuclear: tuple[tuple[float, str], ...] = ()
    equalities: tuple[tuple[str, Linear], ...] = ()
    inequalities: tuple[tuple[str, Linear], ...] = ()
    quadratics: tuple[Quadratic, ...] = ()

    def __post_init__(self):
        names = [v.name for v in self.variables]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names")
        declared = self.var_map()
        referenced = set()
        for _, lin in self.objective + self.equalities + self.inequalities:
            referenced.update(lin.coeffs)
        for q in self.quadratics:
            referenced.update(q.linear.coeffs)
            for _, expr in q.squares:
                referenced.update(name for name, _, _ in expr.terms)
        referenced.update(name for _, name in self.nuclear)
        missing = referenced - set(declared)
        if missing:
            raise ValueError(f"undeclared variables referenced: {sorted(missing)}")
        for _, lin in self.objective + self.equalities + self.inequalities:
            _check_linear_dims(lin, declared)
        for q in self.quadratics:
            _check_linear_dims(q.linear, declared)
            for weight, expr in q.squares:
                if weight < 0:
                    raise ValueError("quadratic weights must be nonnegative")
                for name, left, right in expr.terms:
                    var = declared[name]
                    if not isinstance(var, HermitianVar):
                        raise ValueError("matrix maps only accept Hermitian variables")
                    if left.shape[1] != var.dim or right.shape[0] != var.dim:
                        raise ValueError(f"matrix map dimension mismatch for {name}")
                    if (left.shape[0], right.shape[1]) != expr.shape:
                        raise ValueError("inconsistent output shapes in matrix map")

    def var_map(self) -> dict[str, Variable]:
        return {v.name: v for v in self.variables}

    def objective_value(self, values: Mapping[str, np.ndarray]) -> float:
        total = sum(lin.evaluate(values) for _, lin in self.objective)
        for weight, name in self.nuclear:
            total += weight * float(np.sum(np.abs(np.linalg.eigvalsh(values[name]))))
        return float(total)

    def labels(self) -> list[str]:
        return [label for label, _ in self.objective]


@dataclass
class ConicResult:
    status: ConicStatus
    values: dict[str, np.ndarray]
    objective: float
    solver_status: str = ""
    iterations: int = 0

    @property
    def ok(self) -> bool:
        return self.status is ConicStatus.OPTIMAL


def _check_linear_dims(lin: Linear, declared: Mapping[str, Variable]) -> None:
    for name, c in lin.coeffs.items():
        var = declared[name]
        expected = (var.dim, var.dim) if isinstance(var, HermitianVar) else (var.size,)
        if np.shape(c) != expected:
            raise ValueError(f"coefficient for {name} has shape {np.shape(c)}, expected {expected}")


class _HermitianBasis:
    """Real parametrisation of an ``n x n`` Hermitian matrix.

    Parameters are the upper triangle (incl. diagonal) of the real part
    followed by the strict upper triangle of the imaginary part.
    """

    def __init__(self, n: int):
        self.n = n
        iu, ju = np.triu_indices(n)
        iv, jv = np.triu_indices(n, k=1)
        p = n * n
        # each parameter touches at most two entries of X
        self.i1 = np.concatenate([iu, iv])
        self.j1 = np.concatenate([ju, jv])
        self.c1 = np.concatenate([np.ones(len(iu)), 1j * np.ones(len(iv))])
        self.i2 = np.concatenate([ju, jv])
        self.j2 = np.concatenate([iu, iv])
        self.c2 = np.concatenate([np.where(iu == ju, 0.0, 1.0), -1j * np.ones(len(iv))])
        assert len(self.i1) == p
        # dense map vec(X) = E x (row-major vec)
        E = np.zeros((n * n, p), dtype=complex)
        cols = np.arange(p)
        E[self.i1 * n + self.j1, cols] += self.c1
        E[self.i2 * n + self.j2, cols] += self.c2
        self.E = E

    def unpack(self, x: np.ndarray) -> np.ndarray:
        return (self.E @ x).reshape(self.n, self.n)

    def linear_row(self, coeff: np.ndarray) -> np.ndarray:
        return np.real(coeff.T.reshape(-1) @ self.E)

    def sandwich(self, left: np.ndarray, right: np.ndarray) -> np.ndarray:
        """Matrix K with vec(left @ X @ right) = K x (row-major vec)."""
        a, b = left.shape[0], right.shape[1]
        k = (self.c1[None, None, :] * left[:, self.i1][:, None, :] * right[self.j1, :].T[None, :, :]
             + self.c2[None, None, :] * left[:, self.i2][:, None, :] * right[self.j2, :].T[None, :, :])
        return k.reshape(a * b, -1)

    def psd_embedding(self) -> np.ndarray:
        """Rows mapping x to svec of the real embedding (Clarabel ordering)."""
        n = self.n
        rows = []
        for c in range(2 * n):
            for r in range(c + 1):
                bi, i = divmod(r, n)
                bj, j = divmod(c, n)
                e = self.E[i * n + j]
                if bi == bj:
                    row = np.real(e)
                elif bi == 0:
                    row = -np.imag(e)
                else:
                    row = np.imag(e)
                rows.append(row if r == c else _SQRT2 * row)
        return np.array(rows)


def _hermitian_compress(n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Selectors turning a Hermitian ``n x n`` vec into a real vector with equal 2-norm."""
    diag = np.arange(n) * (n + 1)
    iu, ju = np.triu_indices(n, k=1)
    off = iu * n + ju
    return diag, off, off


class _Assembler:
    def __init__(self, program: ConicProgram):
        self.program = program
        self.offsets: dict[str, int] = {}
        self.bases: dict[str, _HermitianBasis] = {}
        total = 0
        for var in program.variables:
            self.offsets[var.name] = total
            total += var.n_params
            if isinstance(var, HermitianVar):
                self.bases[var.name] = _HermitianBasis(var.dim)
        self.n = total

    def linear_row(self, lin: Linear) -> np.ndarray:
        row = np.zeros(self.n)
        for name, c in lin.coeffs.items():
            off = self.offsets[name]
            if name in self.bases:
                basis = self.bases[name]
                row[off:off + basis.n * basis.n] += basis.linear_row(np.asarray(c, dtype=complex))
            else:
                row[off:off + len(c)] += np.asarray(c, dtype=float)
        return row

    def matrix_rows(self, expr: MatrixAffine) -> tuple[np.ndarray, np.ndarray]:
        """Real rows F, f with ||F x + f||_2 = ||expr(x)||_F."""
        a, b = expr.shape
        K = np.zeros((a * b, self.n), dtype=complex)
        for name, left, right in expr.terms:
            basis = self.bases[name]
            off = self.offsets[name]
            K[:, off:off + basis.n * basis.n] += basis.sandwich(left, right)
        const = np.zeros(a * b, dtype=complex) if expr.const is None else np.asarray(expr.const, complex).reshape(-1)
        if a == b and expr.is_hermitian():
            diag, off_r, off_i = _hermitian_compress(a)
            F = np.vstack([np.real(K[diag]), _SQRT2 * np.real(K[off_r]), _SQRT2 * np.imag(K[off_i])])
            f = np.concatenate([np.real(const[diag]), _SQRT2 * np.real(const[off_r]), _SQRT2 * np.imag(const[off_i])])
        else:
            F = np.vstack([np.real(K), np.imag(K)])
            f = np.concatenate([np.real(const), np.imag(const)])
        return F, f

    def build(self):
        prog = self.program
        q = np.zeros(self.n)
        for _, lin in prog.objective:
            q += self.linear_row(lin)
        for weight, name in prog.nuclear:
            dim = self.bases[name].n
            q += weight * self.linear_row(Linear({name: np.eye(dim)}))

        blocks_A, blocks_b, cones = [], [], []

        if prog.equalities:
            A = np.array([self.linear_row(lin) for _, lin in prog.equalities])
            b = np.array([-lin.const for _, lin in prog.equalities])
            blocks_A.append(A)
            blocks_b.append(b)
            cones.append(clarabel.ZeroConeT(len(b)))

        nonneg_A, nonneg_b = [], []
        for _, lin in prog.inequalities:
            nonneg_A.append(self.linear_row(lin))
            nonneg_b.append(-lin.const)
        for var in prog.variables:
            if isinstance(var, VectorVar):
                off = self.offsets[var.name]
                for i in range(var.size):
                    if var.lower is not None:
                        row = np.zeros(self.n)
                        row[off + i] = -1.0
                        nonneg_A.append(row)
                        nonneg_b.append(-var.lower)
                    if var.upper is not None:
                        row = np.zeros(self.n)
                        row[off + i] = 1.0
                        nonneg_A.append(row)
                        nonneg_b.append(var.upper)
        if nonneg_A:
            blocks_A.append(np.array(nonneg_A))
            blocks_b.append(np.array(nonneg_b))
            cones.append(clarabel.NonnegativeConeT(len(nonneg_b)))

        for quad in prog.quadratics:
            # ||z||^2 <= t  with  t = -l(x)  <=>  (t + 1, t - 1, 2z) in SOC
            c = self.linear_row(quad.linear)
            d = quad.linear.const
            Fs, fs = [], []
            for weight, expr in quad.squares:
                if weight == 0:
                    continue
                F, f = self.matrix_rows(expr)
                Fs.append(np.sqrt(weight) * F)
                fs.append(np.sqrt(weight) * f)
            F = np.vstack(Fs) if Fs else np.zeros((0, self.n))
            f = np.concatenate(fs) if fs else np.zeros(0)
            blocks_A.append(np.vstack([c, c, -2.0 * F]))
            blocks_b.append(np.concatenate([[1.0 - d, -1.0 - d], 2.0 * f]))
            cones.append(clarabel.SecondOrderConeT(2 + len(f)))

        for var in prog.variables:
            if isinstance(var, HermitianVar):
                basis = self.bases[var.name]
                T = basis.psd_embedding()
                A = np.zeros((T.shape[0], self.n))
                off = self.offsets[var.name]
                A[:, off:off + basis.n * basis.n] = -T
                blocks_A.append(A)
                blocks_b.append(np.zeros(T.shape[0]))
                cones.append(clarabel.PSDTriangleConeT(2 * var.dim))

        A = sp.csc_matrix(np.vstack(blocks_A))
        b = np.concatenate(blocks_b)
        return q, A, b, cones

    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray]:
        values = {}
        for var in self.program.variables:
            off = self.offsets[var.name]
            chunk = x[off:off + var.n_params]
            if isinstance(var, HermitianVar):
                values[var.name] = self.bases[var.name].unpack(chunk)
            else:
                values[var.name] = chunk.copy()
        return values


_SOLVED = {"Solved", "AlmostSolved"}
_INFEASIBLE = {"PrimalInfeasible", "AlmostPrimalInfeasible"}


# settings tried in turn when the interior-point method stalls
_FALLBACKS = (
    {},
    {"equilibrate_enable": False},
    {"iterative_refinement_reltol": 1e-15, "iterative_refinement_max_iter": 50},
    {"dynamic_regularization_delta": 1e-10, "dynamic_regularization_eps": 1e-15},
)


def _run_backend(asm, q, A, b, cones, tolerance, max_iter, overrides):
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_gap_abs = tolerance
    settings.tol_gap_rel = tolerance
    settings.tol_feas = tolerance
    settings.max_iter = max_iter
    for key, value in overrides.items():
        setattr(settings, key, value)
    P = sp.csc_matrix((asm.n, asm.n))
    return clarabel.DefaultSolver(P, q, A, b, cones, settings).solve()


def solve(program: ConicProgram, tolerance: float = DEFAULT_TOLERANCE, max_iter: int = 400) -> ConicResult:
    """Solve ``program`` and map the backend status onto :class:`ConicStatus`.

    Stalled solves are retried with a few alternative backend settings
    before ``NUMERICAL_FAILURE`` is reported.
    """
    asm = _Assembler(program)
    q, A, b, cones = asm.build()
    iterations = 0
    for overrides in _FALLBACKS:
        sol = _run_backend(asm, q, A, b, cones, tolerance, max_iter, overrides)
        iterations += int(sol.iterations)
        status_name = str(sol.status).split(".")[-1]
        x = np.asarray(sol.x, dtype=float)
        values = asm.unpack(x) if x.size == asm.n else {}
        if status_name in _SOLVED and values:
            return ConicResult(ConicStatus.OPTIMAL, values, program.objective_value(values), status_name, iterations)
        if status_name in _INFEASIBLE:
            return ConicResult(ConicStatus.INFEASIBLE, values, float("inf"), status_name, iterations)
    return ConicResult(ConicStatus.NUMERICAL_FAILURE, values, float("nan"), status_name, iterations)


def hermitian_part(x: np.ndarray) -> np.ndarray:
    return 0.5 * (x + x.conj().T)


def trace_matrix(dim: int) -> np.ndarray:
    return np.eye(dim)


def selector(dim: int, index: int) -> np.ndarray:
    """Hermitian coefficient picking the diagonal entry ``X[index, index]``."""
    e = np.zeros((dim, dim))
    e[index, index] = 1.0
    return e


def unit(size: int, index: int, value: float = 1.0) -> np.ndarray:
    e = np.zeros(size)
    e[index] = value
    return e


def stack_terms(terms: Sequence[tuple[str, Linear]]) -> Linear:
    out = Linear()
    for _, lin in terms:
        out = out + lin
    return out
