"""Lagrange multipliers along a trajectory and the Pontryagin Hamiltonian.

Two independent routes are provided: the backward adjoint ODE (the solver's
authoritative source) and the closed-form alternating sum of time
derivatives (used as a cross-check).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from . import expr as ex
from .ode import BACKWARD, Grid, GridFunction, fd_values, quad_to_end, rk4
from .problem import HerglotzProblem, check_traj, eval_along, x_derivs


@dataclass(frozen=True)
class MultiplierSet:
    """``psi_z`` (N x 1) and ``psi`` (N x n*m, blocks j = 1..n of m columns)."""

    psi_z: GridFunction
    psi: GridFunction

    def __post_init__(self):
        if self.psi_z.d != 1:
            raise ValueError("psi_z must be scalar")
        if np.any(self.psi_z.values <= 0.0):
            raise ValueError("psi_z must be positive at every node")

    def block(self, j: int, m: int) -> np.ndarray:
        """Samples of ``psi_j`` (1-based), shape ``(N, m)``."""
        return self.psi.values[:, (j - 1) * m : j * m]


@dataclass(frozen=True)
class HamiltonianValue:
    H: float
    partial_t: float


def is_classical(p: HerglotzProblem) -> bool:
    return p.kernels.dL_dz == ex.ZERO


def psi_z_quadrature(p: HerglotzProblem, traj: GridFunction, short_circuit: bool = True) -> GridFunction:
    """``psi_z(t) = exp(integral_t^b dL/dz)`` by Simpson quadrature.

    For a z-independent L the result is the constant 1 without any arithmetic
    unless ``short_circuit`` is False.
    """
    check_traj(p, traj)
    if short_circuit and is_classical(p):
        return GridFunction(traj.grid, np.ones(traj.grid.N))
    dLdz = eval_along(ex.compile_expr(p.kernels.dL_dz, p.m), p, traj)
    tail = quad_to_end(GridFunction(traj.grid, dLdz))
    return GridFunction(traj.grid, np.exp(tail.values))


def _half_grid_samples(traj: GridFunction) -> tuple[Grid, GridFunction]:
    """Trajectory on the grid with midpoints added (cubic-spline interpolated)."""
    fine = traj.grid.refine(2)
    vals = np.empty((fine.N, traj.d))
    vals[::2] = traj.values
    spline = CubicSpline(traj.grid.t, traj.values, axis=0)
    vals[1::2] = spline(fine.t[1::2])
    return fine, GridFunction(fine, vals)


def psi_backward_ode(p: HerglotzProblem, traj: GridFunction) -> MultiplierSet:
    """Integrate the adjoint system backward from ``psi_j(b) = 0``, ``psi_z(b) = 1``.

    ``psi_1' = -psi_z dL/dx``, ``psi_j' = -psi_{j-1} - psi_z dL/dx^{(j-1)}``,
    ``psi_z' = -psi_z dL/dz``. The partials are sampled on the trajectory
    nodes and at spline-interpolated midpoints so RK4 stages hit exact table
    entries.
    """
    check_traj(p, traj)
    n, m = p.n, p.m
    nm = n * m
    fine, fine_traj = _half_grid_samples(traj)
    table = eval_along(p.kernels.lower_partials, p, fine_traj)
    a, half = fine.a, fine.h

    def F(t, y):
        row = table[int(round((t - a) / half))]
        psi_z = y[nm]
        out = np.empty(nm + 1)
        out[:m] = -psi_z * row[:m]
        for j in range(1, n):
            out[j * m : (j + 1) * m] = -y[(j - 1) * m : j * m] - psi_z * row[j * m : (j + 1) * m]
        out[nm] = -psi_z * row[nm]
        return out

    y_end = np.zeros(nm + 1)
    y_end[nm] = 1.0
    sol = rk4(F, y_end, traj.grid, BACKWARD)
    return MultiplierSet(GridFunction(traj.grid, sol.values[:, nm]), GridFunction(traj.grid, sol.values[:, :nm]))


def weighted_partials(p: HerglotzProblem, traj: GridFunction, psi_z: GridFunction) -> np.ndarray:
    """``psi_z * dL/dx^{(j)}`` at every node, shape ``(N, n+1, m)``."""
    P = eval_along(p.kernels.partials, p, traj)[:, : (p.n + 1) * p.m]
    return psi_z.values[:, :1].reshape(-1, 1, 1) * P.reshape(traj.grid.N, p.n + 1, p.m)


def psi_closed_form(p: HerglotzProblem, traj: GridFunction, psi_z: GridFunction) -> MultiplierSet:
    """``psi_j = sum_{i=0}^{n-j} (-1)^{i+1} d^i/dt^i (psi_z dL/dx^{(i+j)})`` on the grid."""
    n, m, h = p.n, p.m, traj.grid.h
    W = weighted_partials(p, traj, psi_z)
    blocks = []
    for j in range(1, n + 1):
        acc = np.zeros((traj.grid.N, m))
        for i in range(0, n - j + 1):
            term = W[:, i + j, :]
            if i:
                term = fd_values(term, h, i)
            acc += (-1.0) ** (i + 1) * term
        blocks.append(acc)
    return MultiplierSet(psi_z, GridFunction(traj.grid, np.concatenate(blocks, axis=1)))


def bracket(p: HerglotzProblem, traj: GridFunction, mult: MultiplierSet) -> np.ndarray:
    """``sum_j psi_j . x^{(j)} + psi_z L`` at every node (the Hamiltonian along traj)."""
    xd = x_derivs(p, traj)
    L = eval_along(p.kernels.L, p, traj)
    out = mult.psi_z.values[:, 0] * L
    for j in range(1, p.n + 1):
        out = out + np.einsum("ik,ik->i", mult.block(j, p.m), xd[:, j, :])
    return out


def hamiltonian(p: HerglotzProblem, traj: GridFunction, mult: MultiplierSet, node: int) -> HamiltonianValue:
    check_traj(p, traj)
    row = traj.values[node].tolist()
    nx = (p.n + 1) * p.m
    t = float(traj.grid.t[node])
    xs, z = row[:nx], row[nx]
    psi_z = float(mult.psi_z.values[node, 0])
    psi = mult.psi.values[node]
    H = psi_z * p.kernels.L(t, xs, z)
    for j in range(1, p.n + 1):
        H += float(np.dot(psi[(j - 1) * p.m : j * p.m], xs[j * p.m : (j + 1) * p.m]))
    return HamiltonianValue(H=H, partial_t=psi_z * p.kernels.L_t(t, xs, z))
