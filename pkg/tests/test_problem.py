import logging

import numpy as np
import pytest

from herglotz import expr as ex
from herglotz.errors import DimensionMismatch, InvalidInterval, ParseError, VariableOutOfBounds
from herglotz.ode import Grid
from herglotz.problem import (
    HerglotzProblem,
    Sense,
    eval_along,
    make_traj,
    reduce_to_ocp,
    validate,
    x_derivs,
    z_values,
)


def problem(L, n=1, m=1, interval=(0.0, 1.0), alpha=None, gamma=0.0, sense="min"):
    alpha = np.zeros((n, m)) if alpha is None else alpha
    return HerglotzProblem.from_source(L, n, m, interval, alpha, gamma, sense)


def test_validate_classical_flag():
    assert validate(problem("x1'^2/2")).classical
    assert not validate(problem("x1'^2/2 - z")).classical


def test_validate_invalid_interval():
    with pytest.raises(InvalidInterval):
        validate(problem("x1'^2/2", interval=(1.0, 0.0)))


def test_validate_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        validate(problem("x1'^2/2", alpha=np.zeros((2, 1))))


def test_validate_non_finite_initial_data():
    with pytest.raises(DimensionMismatch):
        validate(problem("x1'^2/2", gamma=float("inf")))


def test_validate_out_of_bounds_variable():
    L = ex.parse("x1'' + x2", 2, 2)
    p = HerglotzProblem(1, 1, 0.0, 1.0, L, np.zeros((1, 1)), 0.0)
    with pytest.raises(VariableOutOfBounds):
        validate(p)


def test_from_source_rejects_bad_lagrangian():
    with pytest.raises(ParseError):
        problem("x1''")


def test_singular_control_warning(caplog):
    with caplog.at_level(logging.WARNING):
        info = validate(problem("x1' + x1^2"))
    assert info.singular_control
    assert "singular" in caplog.text


def test_sense_parse():
    assert Sense.parse("Max") is Sense.MAXIMIZE
    assert Sense.parse("minimize") is Sense.MINIMIZE
    with pytest.raises(ValueError):
        Sense.parse("sideways")


def test_ocp_second_order_example():
    F = reduce_to_ocp(problem("x1''^2/2", n=2))
    assert np.array_equal(F.vector_field(0.0, [1.0, 2.0, 0.0], [3.0]), [2.0, 3.0, 4.5])


def test_ocp_pure_discount_example():
    F = reduce_to_ocp(problem("-z"))
    assert np.array_equal(F.vector_field(0.0, [0.0, 5.0], [7.0]), [7.0, -5.0])


def test_ocp_third_order_structure():
    F = reduce_to_ocp(problem("x1'''^2 + x2'''^2 + sin(x1*z)", n=3, m=2))
    assert F.state_dim == 7 and F.control_dim == 2
    rng = np.random.default_rng(0)
    X = rng.standard_normal(7)
    u = rng.standard_normal(2)
    out = F.vector_field(0.3, X, u)
    assert np.array_equal(out[:4], X[2:6])
    assert np.array_equal(out[4:6], u)


def test_ocp_z_component_is_bit_identical_to_eval():
    p = problem("x1'^2/2 - cos(t*x1) - z/3 + x2'*x1", m=2)
    F = reduce_to_ocp(p)
    rng = np.random.default_rng(1)
    for _ in range(20):
        X = rng.standard_normal(3)
        u = rng.standard_normal(2)
        t = float(rng.uniform())
        pt = ex.EvalPoint(t=t, x=np.column_stack([X[:2], u]), z=X[2])
        assert F.vector_field(t, X, u)[-1] == ex.evaluate(p.lagrangian, pt)


def test_ocp_initial_state_and_payoff():
    p = problem("x1''^2/2", n=2, alpha=np.array([[1.0], [2.0]]), gamma=3.0)
    F = reduce_to_ocp(p)
    assert np.array_equal(F.initial_state(), [1.0, 2.0, 3.0])
    assert F.payoff([1.0, 2.0, 7.5]) == 7.5


def test_traj_packing_round_trip():
    p = problem("x1'^2 + x2'^2", m=2)
    g = Grid(0.0, 1.0, 5)
    xd = np.arange(5 * 2 * 2, dtype=float).reshape(5, 2, 2)
    traj = make_traj(p, g, xd, np.linspace(0, 1, 5))
    assert np.array_equal(x_derivs(p, traj), xd)
    assert np.array_equal(z_values(p, traj), np.linspace(0, 1, 5))
    with pytest.raises(DimensionMismatch):
        make_traj(p, g, xd[:, :1], np.zeros(5))


def test_eval_along_shapes():
    p = problem("x1'^2/2 + t")
    g = Grid(0.0, 1.0, 5)
    xd = np.stack([g.t, np.ones(5)], axis=1)[:, :, None]
    traj = make_traj(p, g, xd, np.zeros(5))
    assert np.allclose(eval_along(p.kernels.L, p, traj), 0.5 + g.t)
    assert eval_along(p.kernels.partials, p, traj).shape == (5, 3)
