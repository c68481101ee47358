import numpy as np
import pytest

from conftest import random_hermitian
from star_ris import conic
from star_ris.conic import (ConicProgram, ConicStatus, HermitianVar, Linear, MatrixAffine, Quadratic, VectorVar,
                            selector)


def _min_trace(A):
    return ConicProgram(
        variables=(HermitianVar("W", 2),),
        objective=(("trace", Linear({"W": np.eye(2)})),),
        inequalities=(("gain", Linear({"W": -A}, 1.0)),),  # Tr(AW) >= 1
    )


@pytest.mark.parametrize("scale, expected", [(1.0, 1.0), (2.0, 0.5)])
def test_min_trace_with_gain(scale, expected):
    res = conic.solve(_min_trace(scale * np.eye(2)))
    assert res.status is ConicStatus.OPTIMAL
    assert res.objective == pytest.approx(expected, abs=1e-7)
    W = res.values["W"]
    assert np.allclose(W, W.conj().T)
    assert np.min(np.linalg.eigvalsh(W)) >= -1e-8
    assert np.real(np.trace(scale * W)) >= 1 - 1e-7


def test_infeasible_is_reported():
    prog = ConicProgram(
        variables=(HermitianVar("W", 2),),
        objective=(("trace", Linear({"W": np.eye(2)})),),
        inequalities=(("upper", Linear({"W": np.eye(2)})), ("lower", Linear({"W": -np.eye(2)}, 1.0))),
    )
    res = conic.solve(prog)
    assert res.status is ConicStatus.INFEASIBLE
    assert not res.ok


def test_nuclear_norm_with_unit_diagonal():
    prog = ConicProgram(
        variables=(HermitianVar("Q", 2),),
        nuclear=((1.0, "Q"),),
        equalities=tuple((f"d{m}", Linear({"Q": selector(2, m)}, -1.0)) for m in range(2)),
    )
    res = conic.solve(prog)
    assert res.ok
    assert res.objective == pytest.approx(2.0, abs=1e-7)


def test_nuclear_equals_trace_on_psd(rng):
    for n in (2, 5, 9):
        Q = random_hermitian(rng, n, psd=True)
        nuclear = np.sum(np.abs(np.linalg.eigvalsh(Q)))
        assert nuclear == pytest.approx(np.real(np.trace(Q)), rel=1e-9)


def test_quadratic_constraint_and_vector_bounds():
    # minimise -x0 - x1 subject to (x0 - 1)^2 + x1^2 <= 1 via a 1x1 Hermitian map
    prog = ConicProgram(
        variables=(HermitianVar("X", 1), VectorVar("y", 1, lower=0.0, upper=0.25)),
        objective=(("neg", Linear({"X": -np.eye(1), "y": np.array([-1.0])})),),
        quadratics=(Quadratic(((1.0, MatrixAffine((("X", np.eye(1), np.eye(1)),), const=-np.eye(1))),),
                              Linear({}, -1.0)),),
    )
    res = conic.solve(prog)
    assert res.ok
    assert res.values["X"][0, 0].real == pytest.approx(2.0, abs=1e-6)
    assert res.values["y"][0] == pytest.approx(0.25, abs=1e-7)


def test_complex_sdp_recovers_principal_direction(rng):
    # max Tr(R V), Tr V = 1 attains the top eigenvalue of R
    R = random_hermitian(rng, 4, psd=True)
    prog = ConicProgram(
        variables=(HermitianVar("V", 4),),
        objective=(("gain", Linear({"V": -R})),),
        equalities=(("trace", Linear({"V": np.eye(4)}, -1.0)),),
    )
    res = conic.solve(prog)
    assert res.ok
    assert -res.objective == pytest.approx(np.linalg.eigvalsh(R)[-1], rel=1e-7)


def test_solve_twice_is_reproducible(rng):
    R = random_hermitian(rng, 3, psd=True)
    prog = ConicProgram(
        variables=(HermitianVar("V", 3),),
        objective=(("gain", Linear({"V": -R})),),
        equalities=tuple((f"d{m}", Linear({"V": selector(3, m)}, -1.0)) for m in range(3)),
    )
    assert conic.solve(prog).objective == pytest.approx(conic.solve(prog).objective, abs=1e-8)


def test_program_validation():
    with pytest.raises(ValueError):
        ConicProgram(variables=(HermitianVar("W", 2),), objective=(("x", Linear({"Z": np.eye(2)})),))
    with pytest.raises(ValueError):
        ConicProgram(variables=(HermitianVar("W", 2), HermitianVar("W", 3)))
    with pytest.raises(ValueError):
        ConicProgram(variables=(HermitianVar("W", 2),), objective=(("x", Linear({"W": np.eye(3)})),))


def test_hermitian_map_detection():
    H = np.array([[1.0, 2j], [0.5, 1.0]])
    assert MatrixAffine((("X", 3.0 * H, H.conj().T),)).is_hermitian()
    assert not MatrixAffine((("X", H, H),)).is_hermitian()


def test_linear_algebra_helpers():
    a = Linear({"x": np.array([1.0, 2.0])}, 1.0)
    b = Linear({"x": np.array([0.5, 0.0])}, -2.0)
    vals = {"x": np.array([1.0, 1.0])}
    assert (a + b).evaluate(vals) == pytest.approx(2.5)
    assert (a - b).evaluate(vals) == pytest.approx(5.5)
    assert (2 * a).evaluate(vals) == pytest.approx(8.0)
