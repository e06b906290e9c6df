"""Numerical certificates for extremals of Herglotz problems.

Every check compares a grid residual against a tolerance that scales with
``h**2`` (default ``50 h^2``), since each of them involves at least one
second-order finite-difference time derivative.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import expr as ex
from .errors import DimensionMismatch, IdentityViolation
from .multipliers import MultiplierSet, bracket, weighted_partials
from .ode import Grid, GridFunction, fd_first, fd_values
from .problem import HerglotzProblem, check_traj, eval_along, x_derivs, z_values

TOL_SCALE = 50.0
FAMILY_EPS = 1e-4
IDENTITY_TOL = 1e-10


def grid_tolerance(grid: Grid, scale: float = TOL_SCALE) -> float:
    return scale * grid.h**2


def interior_margin(order: int) -> int:
    """Nodes dropped at each end after ``order`` stacked first-derivative stencils.

    A single application is second order up to the boundary; stacking them
    lets the one-sided boundary error leak one node further inward per pass.
    """
    return order if order >= 2 else 0


def _interior(values: np.ndarray, margin: int) -> np.ndarray:
    return values[margin : values.shape[0] - margin] if margin else values


@dataclass(frozen=True)
class VerificationReport:
    name: str
    residual: float
    tol: float
    passed: bool
    aux: dict = field(default_factory=dict)

    def line(self) -> str:
        verdict = "PASS" if self.passed else "FAIL"
        return f"{self.name:<16} residual={self.residual:.3e} tol={self.tol:.3e} {verdict}"


def _report(name: str, residual: float, tol: float, **aux) -> VerificationReport:
    residual = float(residual)
    return VerificationReport(name, residual, float(tol), bool(residual <= tol), aux)


# --------------------------------------------------------------------------
# Euler-Lagrange, transversality, DuBois-Reymond


def el_residual(p: HerglotzProblem, traj: GridFunction, psi_z: GridFunction) -> GridFunction:
    """``sum_j (-1)^j d^j/dt^j (psi_z dL/dx^{(j)})`` at every node, shape (N, m)."""
    W = weighted_partials(p, traj, psi_z)
    h = traj.grid.h
    res = W[:, 0, :].copy()
    for j in range(1, p.n + 1):
        res += (-1.0) ** j * fd_values(W[:, j, :], h, j)
    return GridFunction(traj.grid, res)


def check_el(p: HerglotzProblem, traj: GridFunction, psi_z: GridFunction, tol: float | None = None) -> VerificationReport:
    tol = grid_tolerance(traj.grid) if tol is None else tol
    res = el_residual(p, traj, psi_z).values
    margin = interior_margin(p.n)
    return _report("el_residual", np.abs(_interior(res, margin)).max(), tol, margin=margin)


def transversality(p: HerglotzProblem, mult: MultiplierSet, tol: float | None = None) -> VerificationReport:
    """``max_j |psi_j(b)|`` together with ``|psi_z(b) - 1|``."""
    tol = grid_tolerance(mult.psi.grid) if tol is None else tol
    psi_b = mult.psi.values[-1]
    if psi_b.size != p.n * p.m:
        raise DimensionMismatch(f"multiplier set has {psi_b.size} components, expected {p.n * p.m}")
    psi_z_err = abs(float(mult.psi_z.values[-1, 0]) - 1.0)
    psi_err = float(np.abs(psi_b).max())
    return _report("transversality", max(psi_err, psi_z_err), tol, psi_b=psi_b.copy(), psi_z_b_error=psi_z_err)


def dubois_reymond(p: HerglotzProblem, traj: GridFunction, mult: MultiplierSet, tol: float | None = None) -> VerificationReport:
    """Drift of the Hamiltonian bracket against ``psi_z dL/dt``.

    For autonomous L the bracket must also be constant; its maximal deviation
    from the mean then enters the residual.
    """
    tol = grid_tolerance(traj.grid) if tol is None else tol
    B = bracket(p, traj, mult)
    Lt = eval_along(p.kernels.L_t, p, traj)
    drift = fd_first(B, traj.grid.h) - mult.psi_z.values[:, 0] * Lt
    drift_norm = float(np.abs(drift[1:-1]).max())
    autonomous = p.kernels.dL_dt == ex.ZERO
    mean = float(B.mean())
    deviation = float(np.abs(B - mean).max())
    residual = max(drift_norm, deviation) if autonomous else drift_norm
    return _report(
        "dubois_reymond",
        residual,
        tol,
        drift=drift_norm,
        autonomous=autonomous,
        bracket_mean=mean,
        bracket_deviation=deviation,
    )


# --------------------------------------------------------------------------
# Symmetry families and Noether charges


def _parse_all(sources, n, m, allow_param):
    return tuple(ex.parse(src, n, m, allow_param=allow_param) for src in sources)


@dataclass(frozen=True)
class SymmetryFamily:
    """Generators ``T``, ``X_0`` (m entries) and ``Z`` of a one-parameter family."""

    T: ex.Expr
    X: tuple
    Z: ex.Expr

    @classmethod
    def from_source(cls, T: str, X, Z: str, n: int, m: int) -> "SymmetryFamily":
        if len(X) != m:
            raise DimensionMismatch(f"X needs {m} components, got {len(X)}")
        T_, Z_ = _parse_all((T, Z), n, m, False)
        return cls(T_, _parse_all(X, n, m, False), Z_)


def time_translation(m: int) -> SymmetryFamily:
    return SymmetryFamily(ex.ONE, (ex.ZERO,) * m, ex.ZERO)


@dataclass(frozen=True)
class FiniteFamily:
    """Transformations ``(T^s, X^s, Z^s)`` written over the alphabet plus ``s``."""

    Ts: ex.Expr
    Xs: tuple
    Zs: ex.Expr

    @classmethod
    def from_source(cls, Ts: str, Xs, Zs: str, n: int, m: int) -> "FiniteFamily":
        if len(Xs) != m:
            raise DimensionMismatch(f"Xs needs {m} components, got {len(Xs)}")
        T_, Z_ = _parse_all((Ts, Zs), n, m, True)
        return cls(T_, _parse_all(Xs, n, m, True), Z_)


def _eval_family(exprs, p: HerglotzProblem, traj: GridFunction, s: float = 0.0) -> np.ndarray:
    """Evaluate expressions (possibly involving ``s``) at every node, shape (N, len)."""
    fn = ex.compile_exprs(list(exprs), p.m)
    nx = (p.n + 1) * p.m
    rows = traj.values.tolist()
    return np.array([fn(t, row[:nx], row[nx], s) for t, row in zip(traj.grid.t.tolist(), rows)], dtype=float).reshape(
        traj.grid.N, len(exprs)
    )


def gen_X(fam: SymmetryFamily, p: HerglotzProblem, traj: GridFunction) -> list[GridFunction]:
    """``X_0`` by evaluation, then ``X_i = d/dt X_{i-1} - x^{(i)} dT/dt`` for i < n."""
    check_traj(p, traj)
    h = traj.grid.h
    xd = x_derivs(p, traj)
    vals = _eval_family((fam.T,) + tuple(fam.X), p, traj)
    dT = fd_first(vals[:, 0], h)
    cur = vals[:, 1:]
    out = [GridFunction(traj.grid, cur)]
    for i in range(1, p.n):
        cur = fd_first(cur, h) - xd[:, i, :] * dT[:, None]
        out.append(GridFunction(traj.grid, cur))
    return out


def noether_values(p: HerglotzProblem, traj: GridFunction, mult: MultiplierSet, fam: SymmetryFamily) -> np.ndarray:
    """``sum_i psi_i . X_{i-1} + psi_z Z - bracket * T`` at every node."""
    Xs = gen_X(fam, p, traj)
    TZ = _eval_family((fam.T, fam.Z), p, traj)
    psi_z = mult.psi_z.values[:, 0]
    out = psi_z * TZ[:, 1]
    for i in range(1, p.n + 1):
        out = out + np.einsum("ik,ik->i", mult.block(i, p.m), Xs[i - 1].values)
    return out - bracket(p, traj, mult) * TZ[:, 0]


def noether_charge(
    p: HerglotzProblem,
    traj: GridFunction,
    mult: MultiplierSet,
    fam: SymmetryFamily,
    tol: float | None = None,
    invariance: VerificationReport | None = None,
) -> VerificationReport:
    """Constancy of the Noether charge, measured as ``max|C - mean| / (1 + |mean|)``.

    ``aux["guarded"]`` is True only when a passing invariance report for the
    same family is supplied; without it a constant charge is an observation,
    not a certified conservation law.
    """
    tol = grid_tolerance(traj.grid) if tol is None else tol
    C = noether_values(p, traj, mult, fam)
    margin = interior_margin(p.n - 1)
    inner = _interior(C, margin)
    mean = float(inner.mean())
    max_dev = float(np.abs(inner - mean).max())
    rel = max_dev / (1.0 + abs(mean))
    guarded = invariance is not None and invariance.passed
    return _report("noether_charge", rel, tol, mean=mean, max_dev=max_dev, values=C, guarded=guarded)


def _check_identity(ffam: FiniteFamily, p: HerglotzProblem, traj: GridFunction) -> None:
    vals = _eval_family((ffam.Ts,) + tuple(ffam.Xs) + (ffam.Zs,), p, traj, 0.0)
    expected = np.column_stack([traj.grid.t, x_derivs(p, traj)[:, 0, :], z_values(p, traj)])
    err = np.abs(vals - expected) / (1.0 + np.abs(expected))
    if not np.all(err <= IDENTITY_TOL):
        node = int(np.argmax(err.max(axis=1)))
        raise IdentityViolation(f"family is not the identity at s=0 (node {node}, error {err.max():.3e})")


def _condition_pieces(ffam: FiniteFamily, p: HerglotzProblem, traj: GridFunction, s: float):
    """``dT^s/dt`` and ``dZ^s/dt - L(T^s, X^s, dX^s/dT^s, ...) dT^s/dt`` along traj."""
    n, m, h = p.n, p.m, traj.grid.h
    vals = _eval_family((ffam.Ts,) + tuple(ffam.Xs) + (ffam.Zs,), p, traj, s)
    Tv, Xv, Zv = vals[:, 0], vals[:, 1 : 1 + m], vals[:, 1 + m]
    with np.errstate(divide="ignore", invalid="ignore"):
        dT = fd_first(Tv, h)
        derivs = [Xv]
        for _ in range(n):
            derivs.append(fd_first(derivs[-1], h) / dT[:, None])
        xs_rows = np.concatenate(derivs, axis=1).tolist()
        L = p.kernels.L
        Lv = np.array([L(t, xs, z) for t, xs, z in zip(Tv.tolist(), xs_rows, Zv.tolist())])
        resid = fd_first(Zv, h) - Lv * dT
    return dT, resid


def invariance_check(
    p: HerglotzProblem,
    traj: GridFunction,
    ffam: FiniteFamily,
    tol: float | None = None,
    eps: float = FAMILY_EPS,
) -> VerificationReport:
    """First-order (in s) invariance of the problem under a finite family.

    Condition (i): the s-derivative of ``dT^s/dt`` at s=0 yields a node-wise
    ``xi(t) = -(z(b)/(b-a)) d/ds(dT^s/dt)``, which must be constant.
    Condition (ii): the s-derivative of ``dZ^s/dt - L(...) dT^s/dt`` must
    vanish. Both s-derivatives are central differences with step ``eps``.
    """
    tol = grid_tolerance(traj.grid) if tol is None else tol
    check_traj(p, traj)
    _check_identity(ffam, p, traj)
    c = float(z_values(p, traj)[-1]) / (p.b - p.a)
    dT_p, R_p = _condition_pieces(ffam, p, traj, eps)
    dT_m, R_m = _condition_pieces(ffam, p, traj, -eps)
    xi = -c * (dT_p - dT_m) / (2.0 * eps)
    xi_mean = float(xi.mean())
    xi_dev = float(np.abs(xi - xi_mean).max())
    dR = _interior((R_p - R_m) / (2.0 * eps), interior_margin(p.n))
    cond_ii = float(np.abs(dR).max())
    if not np.isfinite(xi_dev):
        xi_dev = float("inf")
    if not np.isfinite(cond_ii):
        cond_ii = float("inf")
    return _report(
        "invariance",
        max(xi_dev, cond_ii),
        tol,
        xi=xi_mean,
        xi_deviation=xi_dev,
        condition_i=xi_dev <= tol,
        condition_ii_residual=cond_ii,
        condition_ii=cond_ii <= tol,
    )
