"""Uniform grids, fixed-step RK4, Simpson quadrature and grid differentiation."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import GridTooCoarse, NonFiniteState

FORWARD = "forward"
BACKWARD = "backward"


@dataclass(frozen=True)
class Grid:
    a: float
    b: float
    N: int = 1001

    def __post_init__(self):
        if not self.a < self.b:
            raise ValueError(f"grid needs a < b, got [{self.a}, {self.b}]")
        if self.N < 3 or self.N % 2 == 0:
            raise ValueError(f"grid needs an odd node count >= 3, got {self.N}")

    @property
    def h(self) -> float:
        return (self.b - self.a) / (self.N - 1)

    @property
    def t(self) -> np.ndarray:
        nodes = self.a + self.h * np.arange(self.N)
        nodes[-1] = self.b
        return nodes

    def refine(self, factor: int = 2) -> "Grid":
        return Grid(self.a, self.b, (self.N - 1) * factor + 1)


@dataclass(frozen=True)
class GridFunction:
    """Samples of a vector-valued function: ``values[i]`` lives at ``grid.t[i]``."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim == 1:
            vals = vals[:, None]
        if vals.ndim != 2 or vals.shape[0] != self.grid.N or vals.shape[1] < 1:
            raise ValueError(f"values of shape {vals.shape} do not fit a grid of {self.grid.N} nodes")
        bad = ~np.all(np.isfinite(vals), axis=1)
        if bad.any():
            node = int(np.argmax(bad))
            raise NonFiniteState(f"non-finite value at node {node}", node)
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    @property
    def d(self) -> int:
        return self.values.shape[1]

    @property
    def t(self) -> np.ndarray:
        return self.grid.t

    def column(self, i: int) -> np.ndarray:
        return self.values[:, i]


def rk4(
    F: Callable[[float, np.ndarray], np.ndarray],
    y0,
    grid: Grid,
    direction: str = FORWARD,
) -> GridFunction:
    """Classical RK4 on ``grid``.

    ``direction="backward"`` starts from ``y0`` at ``grid.b`` and steps with
    ``-h`` down to ``grid.a``; the returned samples are still ordered by
    increasing ``t``.
    """
    if direction not in (FORWARD, BACKWARD):
        raise ValueError(f"unknown direction {direction!r}")
    t = grid.t
    y = np.array(y0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise NonFiniteState("non-finite initial state", 0 if direction == FORWARD else grid.N - 1)
    out = np.empty((grid.N, y.size))
    if direction == FORWARD:
        order = range(grid.N)
        h = grid.h
    else:
        order = range(grid.N - 1, -1, -1)
        h = -grid.h
    it = iter(order)
    i = next(it)
    out[i] = y
    for nxt in it:
        ti = t[i]
        k1 = F(ti, y)
        k2 = F(ti + 0.5 * h, y + (0.5 * h) * k1)
        k3 = F(ti + 0.5 * h, y + (0.5 * h) * k2)
        k4 = F(t[nxt], y + h * k3)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(y)):
            raise NonFiniteState(f"integration blew up at node {nxt} (t={t[nxt]:.6g})", nxt)
        out[nxt] = y
        i = nxt
    return GridFunction(grid, out)


def _quad_1d(y: np.ndarray, h: float, start: int, stop: int) -> np.ndarray:
    count = stop - start
    if count == 0:
        return np.zeros(y.shape[1:])
    if count == 1:
        # quadratic through a neighbouring node keeps the local error O(h^4)
        if stop + 1 < y.shape[0]:
            return (h / 12.0) * (5.0 * y[start] + 8.0 * y[stop] - y[stop + 1])
        if start >= 1:
            return (h / 12.0) * (-y[start - 1] + 8.0 * y[start] + 5.0 * y[stop])
        return 0.5 * h * (y[start] + y[stop])
    odd = count % 2 == 1
    end = stop - 1 if odd else stop
    seg = y[start : end + 1]
    total = (h / 3.0) * (seg[0] + seg[-1] + 4.0 * seg[1:-1:2].sum(axis=0) + 2.0 * seg[2:-1:2].sum(axis=0))
    if odd:
        # last interval from the quadratic through the final three nodes
        total = total + (h / 12.0) * (-y[stop - 2] + 8.0 * y[stop - 1] + 5.0 * y[stop])
    return total


def quad(f: GridFunction, start: int = 0, stop: int | None = None) -> np.ndarray:
    """Integral of ``f`` from node ``start`` to node ``stop`` (one value per column).

    Composite Simpson on an even number of intervals; an odd count is closed
    with a three-point end correction on the final interval. A single
    interval borrows the adjacent node for the same three-point rule.
    """
    N = f.grid.N
    if stop is None:
        stop = N - 1
    if not 0 <= start <= stop <= N - 1:
        raise ValueError(f"invalid node range [{start}, {stop}]")
    return _quad_1d(f.values, f.grid.h, start, stop)


def quad_to_end(f: GridFunction) -> GridFunction:
    """``G[i] = quad(f, i, N-1)`` for every node."""
    N = f.grid.N
    vals = np.array([_quad_1d(f.values, f.grid.h, i, N - 1) for i in range(N)])
    return GridFunction(f.grid, vals)


def quad_from_start(f: GridFunction) -> GridFunction:
    """``G[i] = quad(f, 0, i)`` for every node."""
    vals = np.array([_quad_1d(f.values, f.grid.h, 0, i) for i in range(f.grid.N)])
    return GridFunction(f.grid, vals)


def fd_first(values: np.ndarray, h: float) -> np.ndarray:
    """Second-order first derivative along axis 0 (central inside, one-sided at the ends)."""
    return np.gradient(values, h, axis=0, edge_order=2)


def fd_derivative(f: GridFunction, order: int = 1) -> GridFunction:
    """``order``-fold application of the second-order first-derivative operator."""
    if order < 1:
        raise ValueError("derivative order must be >= 1")
    if f.grid.N < 2 * order + 1:
        raise GridTooCoarse(f"{f.grid.N} nodes cannot support a derivative of order {order}")
    vals = f.values
    for _ in range(order):
        vals = fd_first(vals, f.grid.h)
    return GridFunction(f.grid, vals)


def fd_values(values: np.ndarray, h: float, order: int) -> np.ndarray:
    """Array form of :func:`fd_derivative` for intermediate products."""
    if values.shape[0] < 2 * order + 1:
        raise GridTooCoarse(f"{values.shape[0]} nodes cannot support a derivative of order {order}")
    for _ in range(order):
        values = fd_first(values, h)
    return values


def rk4_final(F: Callable[[float, list], list], y0, t: np.ndarray) -> list[float]:
    """RK4 over the nodes ``t`` on plain float lists, returning only the final state.

    Same scheme as :func:`rk4`; meant for objective functions evaluated
    thousands of times, where per-step array overhead dominates.
    """
    y = [float(v) for v in y0]
    ts = t.tolist()
    for t0, t1 in zip(ts[:-1], ts[1:]):
        h = t1 - t0
        hh = 0.5 * h
        tm = t0 + hh
        k1 = F(t0, y)
        k2 = F(tm, [a + hh * b for a, b in zip(y, k1)])
        k3 = F(tm, [a + hh * b for a, b in zip(y, k2)])
        k4 = F(t1, [a + h * b for a, b in zip(y, k3)])
        y = [a + (h / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4) for a, b1, b2, b3, b4 in zip(y, k1, k2, k3, k4)]
    return y
