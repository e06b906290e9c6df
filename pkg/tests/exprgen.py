"""Random expression trees for property tests."""

import numpy as np

from herglotz import expr as ex


def refs(n, m):
    return [ex.T, ex.Z] + list(ex.state_refs(n, m))


def random_expr(rng: np.random.Generator, variables, depth: int = 4) -> ex.Expr:
    """Smooth random expression, free of domain errors on bounded inputs.

    Divisions use a denominator bounded away from zero and exp/log only see
    bounded arguments, so FD comparisons stay well conditioned.
    """
    if depth == 0 or rng.random() < 0.2:
        if rng.random() < 0.7:
            return ex.Var(variables[rng.integers(len(variables))])
        return ex.Const(float(np.round(rng.uniform(-2, 2), 2)))
    a = random_expr(rng, variables, depth - 1)
    kind = rng.integers(9)
    if kind == 0:
        return ex.Add(a, random_expr(rng, variables, depth - 1))
    if kind == 1:
        return ex.Sub(a, random_expr(rng, variables, depth - 1))
    if kind == 2:
        return ex.Mul(a, random_expr(rng, variables, depth - 1))
    if kind == 3:
        b = random_expr(rng, variables, depth - 1)
        return ex.Div(a, ex.Add(ex.Const(2.0), ex.Pow(b, ex.Const(2.0))))
    if kind == 4:
        return ex.Pow(a, ex.Const(float(rng.integers(2, 4))))
    if kind == 5:
        return ex.Func("sin", a)
    if kind == 6:
        return ex.Func("cos", a)
    if kind == 7:
        return ex.Func("exp", ex.Func("sin", a))
    return ex.Func("log", ex.Add(ex.Const(1.5), ex.Func("cos", a)))


def random_point(rng: np.random.Generator, n: int, m: int) -> ex.EvalPoint:
    return ex.EvalPoint(
        t=float(rng.uniform(-1, 1)),
        x=rng.uniform(-1, 1, size=(m, n + 1)),
        z=float(rng.uniform(-1, 1)),
    )


def shifted(p: ex.EvalPoint, v, delta: float) -> ex.EvalPoint:
    t, xs, z = p.t, np.array(p.x, dtype=float), p.z
    if v.kind is ex.VarKind.TIME:
        t += delta
    elif v.kind is ex.VarKind.Z:
        z += delta
    else:
        xs[v.k - 1, v.j] += delta
    return ex.EvalPoint(t=t, x=xs, z=z)


def central_difference(e, p, v, h):
    return (ex.evaluate(e, shifted(p, v, h)) - ex.evaluate(e, shifted(p, v, -h))) / (2 * h)
