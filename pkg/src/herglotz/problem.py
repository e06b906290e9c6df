"""Herglotz problems of order n and their first-order optimal-control form.

State packing used everywhere in the package: the control-system state is
``X = (x_0 block, x_1 block, ..., x_{n-1} block, z)`` where block ``j`` holds
the m components of ``x^{(j)}``; the control ``u`` is the ``x^{(n)}`` block.
A trajectory sample stores ``(x^{(0)}, ..., x^{(n)}, z)`` in the same order,
i.e. ``X`` with ``u`` spliced in before ``z``.
"""

from __future__ import annotations

import enum
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import expr as ex
from .errors import DimensionMismatch, InvalidInterval, ParseError, VariableOutOfBounds
from .ode import Grid, GridFunction

log = logging.getLogger(__name__)


class Sense(enum.Enum):
    MINIMIZE = "min"
    MAXIMIZE = "max"

    @classmethod
    def parse(cls, text: str) -> "Sense":
        key = text.strip().lower()
        if key in ("min", "minimize", "minimise"):
            return cls.MINIMIZE
        if key in ("max", "maximize", "maximise"):
            return cls.MAXIMIZE
        raise ValueError(f"unknown optimization sense {text!r}")


@dataclass(frozen=True, eq=False)
class HerglotzProblem:
    """``z(b) -> extr`` subject to ``z' = L(t, x, x', ..., x^{(n)}, z)``.

    ``alpha[j]`` is the prescribed value of ``x^{(j)}(a)`` (shape n x m) and
    ``gamma`` the value of ``z(a)``.
    """

    n: int
    m: int
    a: float
    b: float
    lagrangian: ex.Expr
    alpha: np.ndarray
    gamma: float
    sense: Sense = Sense.MINIMIZE

    def __post_init__(self):
        alpha = np.array(self.alpha, dtype=float)
        alpha.setflags(write=False)
        object.__setattr__(self, "alpha", alpha)

    @classmethod
    def from_source(cls, lagrangian: str, n: int, m: int, interval, alpha, gamma, sense="min"):
        L = ex.parse(lagrangian, n, m)
        a, b = interval
        if isinstance(sense, str):
            sense = Sense.parse(sense)
        return cls(n, m, float(a), float(b), L, np.asarray(alpha, dtype=float), float(gamma), sense)

    @property
    def state_dim(self) -> int:
        return self.n * self.m + 1

    @property
    def traj_dim(self) -> int:
        return (self.n + 1) * self.m + 1

    @cached_property
    def kernels(self) -> "LagrangianKernels":
        return LagrangianKernels(self)

    def grid(self, N: int = 1001) -> Grid:
        return Grid(self.a, self.b, N)


@dataclass(frozen=True)
class Validation:
    classical: bool
    singular_control: bool


def validate(p: HerglotzProblem) -> Validation:
    """Check bounds and finiteness; report the classical and singular-control flags."""
    if p.n < 1 or p.m < 1:
        raise DimensionMismatch(f"order and dimension must be >= 1 (got n={p.n}, m={p.m})")
    if not (math.isfinite(p.a) and math.isfinite(p.b)) or not p.a < p.b:
        raise InvalidInterval(f"interval [{p.a}, {p.b}] must satisfy a < b")
    if p.alpha.shape != (p.n, p.m):
        raise DimensionMismatch(f"initial data has shape {p.alpha.shape}, expected ({p.n}, {p.m})")
    if not np.all(np.isfinite(p.alpha)) or not math.isfinite(p.gamma):
        raise DimensionMismatch("initial data must be finite")
    try:
        ex.check_bounds(p.lagrangian, p.n, p.m)
    except ParseError as err:
        raise VariableOutOfBounds(str(err)) from err
    classical = ex.diff(p.lagrangian, ex.Z) == ex.ZERO
    singular = all(
        ex.diff(ex.diff(p.lagrangian, ex.x(k, p.n)), ex.x(l, p.n)) == ex.ZERO
        for k in range(1, p.m + 1)
        for l in range(1, p.m + 1)
    )
    if singular:
        log.warning("L is affine in the highest derivative; control elimination is singular")
    return Validation(classical=classical, singular_control=singular)


class LagrangianKernels:
    """Compiled partial derivatives of L used by the multipliers and solver.

    Every kernel has the signature ``f(t, xs, z)`` with ``xs`` the flat
    derivative-major state list ``(x^{(0)}, ..., x^{(n)})``.
    """

    def __init__(self, p: HerglotzProblem):
        n, m, L = p.n, p.m, p.lagrangian
        refs = list(ex.state_refs(n, m))
        self.n, self.m = n, m
        self.dL_dstate = [ex.diff(L, r) for r in refs]
        self.dL_dz = ex.diff(L, ex.Z)
        self.dL_dt = ex.diff(L, ex.T)
        u_refs = refs[n * m :]
        self.d2L_du2 = [[ex.diff(ex.diff(L, r), q) for q in u_refs] for r in u_refs]

        self.L = ex.compile_expr(L, m)
        # all (n+1)m state partials followed by dL/dz
        self.partials = ex.compile_exprs(self.dL_dstate + [self.dL_dz], m)
        self.lower_partials = ex.compile_exprs(self.dL_dstate[: n * m] + [self.dL_dz], m)
        self.grad_u = ex.compile_exprs(self.dL_dstate[n * m :], m)
        self.hess_u = ex.compile_exprs([h for row in self.d2L_du2 for h in row], m)
        self.L_t = ex.compile_expr(self.dL_dt, m)
        # L followed by the partials the adjoint equations need
        self.L_and_lower = ex.compile_exprs([L] + self.dL_dstate[: n * m] + [self.dL_dz], m)


class OcpSystem:
    """First-order control system equivalent to the Herglotz problem.

    ``x_{j-1}' = x_j`` (j < n), ``x_{n-1}' = u``, ``z' = L``; the payoff is
    ``z(b)``.
    """

    def __init__(self, p: HerglotzProblem):
        self.problem = p
        self.n, self.m = p.n, p.m
        self._L = p.kernels.L

    @property
    def state_dim(self) -> int:
        return self.n * self.m + 1

    @property
    def control_dim(self) -> int:
        return self.m

    def initial_state(self) -> np.ndarray:
        p = self.problem
        return np.concatenate([p.alpha.ravel(), [p.gamma]])

    def vector_field(self, t: float, X, u) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        u = np.asarray(u, dtype=float).reshape(self.m)
        nm = self.n * self.m
        xs = X[:nm].tolist() + u.tolist()
        out = np.empty(nm + 1)
        out[: nm - self.m] = X[self.m : nm]
        out[nm - self.m : nm] = u
        out[nm] = self._L(float(t), xs, float(X[nm]))
        return out

    def payoff(self, X) -> float:
        return float(np.asarray(X)[-1])


def reduce_to_ocp(p: HerglotzProblem) -> OcpSystem:
    validate(p)
    return OcpSystem(p)


# --------------------------------------------------------------------------
# Trajectory packing


def make_traj(p: HerglotzProblem, grid: Grid, x_derivs, z) -> GridFunction:
    """Pack ``x_derivs[i, j, k] = x_{k+1}^{(j)}(t_i)`` and ``z[i]`` into a grid function."""
    xd = np.asarray(x_derivs, dtype=float)
    if xd.shape != (grid.N, p.n + 1, p.m):
        raise DimensionMismatch(f"x derivatives have shape {xd.shape}, expected {(grid.N, p.n + 1, p.m)}")
    vals = np.concatenate([xd.reshape(grid.N, -1), np.asarray(z, dtype=float).reshape(-1, 1)], axis=1)
    return GridFunction(grid, vals)


def x_derivs(p: HerglotzProblem, traj: GridFunction) -> np.ndarray:
    """View of a trajectory as ``(N, n+1, m)`` derivative samples."""
    check_traj(p, traj)
    return traj.values[:, : (p.n + 1) * p.m].reshape(traj.grid.N, p.n + 1, p.m)


def z_values(p: HerglotzProblem, traj: GridFunction) -> np.ndarray:
    check_traj(p, traj)
    return traj.values[:, -1]


def check_traj(p: HerglotzProblem, traj: GridFunction) -> None:
    if traj.d != p.traj_dim:
        raise DimensionMismatch(f"trajectory has {traj.d} columns, problem needs {p.traj_dim}")


def eval_along(fn, p: HerglotzProblem, traj: GridFunction) -> np.ndarray:
    """Evaluate a compiled kernel at every node of ``traj``.

    Returns shape ``(N,)`` for scalar kernels or ``(N, k)`` for k-tuple ones.
    """
    check_traj(p, traj)
    nx = (p.n + 1) * p.m
    rows = traj.values.tolist()
    t = traj.grid.t.tolist()
    out = [fn(ti, row[:nx], row[nx]) for ti, row in zip(t, rows)]
    return np.array(out, dtype=float)
