"""Extremals of Herglotz problems.

``shoot`` solves the Pontryagin boundary-value problem by single shooting on
the initial costates. ``direct_oracle`` minimizes ``z(b)`` over a piecewise
linear control with Nelder-Mead and shares no machinery with the shooting
path beyond the control-system right-hand side.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .errors import DomainError, HerglotzError, NoConvergence, NonFiniteState, SingularControl
from .multipliers import MultiplierSet, psi_backward_ode
from .ode import Grid, GridFunction, rk4, rk4_final
from .problem import HerglotzProblem, OcpSystem, Sense, make_traj, validate

log = logging.getLogger(__name__)

CONTROL_TOL = 1e-12


@dataclass(frozen=True)
class ShootingConfig:
    grid: Grid
    tol: float = 1e-8
    max_iter: int = 50
    multistart: int = 8
    seed: int = 42
    fd_eps: float = 1e-6

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1 or self.multistart < 1:
            raise ValueError("max_iter and multistart must be >= 1")


@dataclass(frozen=True)
class Extremal:
    traj: GridFunction
    mult: MultiplierSet
    converged: bool
    residual_norm: float
    z_b: float
    iterations: int = 0
    branch: int = 0
    costate0: np.ndarray = field(default_factory=lambda: np.zeros(0))


# --------------------------------------------------------------------------
# Control elimination


def _solve_control(K, m, t, base, z, psi_n, psi_z, u, max_iter=50):
    """Damped Newton on ``psi_n + psi_z * dL/du = 0``; lists in, list out."""

    def resid(v):
        g = K.grad_u(t, base + v, z)
        return [pn + psi_z * gi for pn, gi in zip(psi_n, g)]

    scale = 1.0 + math.sqrt(sum(pn * pn for pn in psi_n))
    r = resid(u)
    rn = math.sqrt(sum(ri * ri for ri in r))
    for _ in range(max_iter):
        if rn <= CONTROL_TOL * scale:
            return u
        hess = K.hess_u(t, base + u, z)
        if m == 1:
            h = psi_z * hess[0]
            if h == 0.0 or not math.isfinite(h):
                raise SingularControl(f"d2L/du2 vanishes at t={t:.6g}")
            step = [-r[0] / h]
        else:
            Hm = psi_z * np.array(hess).reshape(m, m)
            if not np.all(np.isfinite(Hm)) or np.linalg.cond(Hm) > 1e14:
                raise SingularControl(f"d2L/du2 is singular at t={t:.6g}")
            step = np.linalg.solve(Hm, -np.array(r)).tolist()
        lam = 1.0
        for _ in range(21):
            trial = [ui + lam * si for ui, si in zip(u, step)]
            r_new = resid(trial)
            rn_new = math.sqrt(sum(ri * ri for ri in r_new))
            if rn_new < rn:
                break
            lam *= 0.5
        else:
            raise NoConvergence(f"control Newton stalled at t={t:.6g} (residual {rn:.3e})")
        u, r, rn = trial, r_new, rn_new
    if rn <= CONTROL_TOL * scale:
        return u
    raise NoConvergence(f"control Newton did not converge at t={t:.6g}")


def control_from_costate(p: HerglotzProblem, t, X, psi_n, psi_z, u_guess=None) -> np.ndarray:
    """Solve the optimality condition ``psi_n + psi_z dL/du = 0`` for the control."""
    if not psi_z > 0:
        raise ValueError("psi_z must be positive")
    nm = p.n * p.m
    X = np.asarray(X, dtype=float)
    u0 = np.zeros(p.m) if u_guess is None else np.asarray(u_guess, dtype=float).reshape(p.m)
    u = _solve_control(
        p.kernels,
        p.m,
        float(t),
        X[:nm].tolist(),
        float(X[nm]),
        np.asarray(psi_n, dtype=float).reshape(p.m).tolist(),
        float(psi_z),
        u0.tolist(),
    )
    return np.array(u)


# --------------------------------------------------------------------------
# Single shooting


class _CoupledSystem:
    """State-costate right-hand side with the control eliminated pointwise.

    Layout: ``(x_0..x_{n-1} blocks, z, psi_1..psi_n blocks, psi_z)``. The last
    control found is reused as the Newton start for the next evaluation.
    """

    def __init__(self, p: HerglotzProblem):
        self.p = p
        self.K = p.kernels
        self.n, self.m = p.n, p.m
        self.u = [0.0] * p.m

    def reset(self):
        self.u = [0.0] * self.m

    def control(self, t, Y):
        n, m = self.n, self.m
        nm = n * m
        psi_z = Y[2 * nm + 1]
        if not psi_z > 0:
            raise NonFiniteState(f"psi_z left the positive half-line at t={t:.6g}")
        self.u = _solve_control(self.K, m, t, Y[:nm], Y[nm], Y[2 * nm + 1 - m : 2 * nm + 1], psi_z, self.u)
        return self.u

    def __call__(self, t, Yarr):
        n, m = self.n, self.m
        nm = n * m
        Y = Yarr.tolist()
        u = self.control(t, Y)
        terms = self.K.L_and_lower(t, Y[:nm] + u, Y[nm])
        psi = Y[nm + 1 : 2 * nm + 1]
        psi_z = Y[2 * nm + 1]
        out = Y[m:nm] + u + [terms[0]]
        out += [-psi_z * d for d in terms[1 : m + 1]]
        for j in range(1, n):
            out += [-pp - psi_z * d for pp, d in zip(psi[(j - 1) * m : j * m], terms[1 + j * m : 1 + (j + 1) * m])]
        out.append(-psi_z * terms[nm + 1])
        return np.array(out)


def _integrate(p: HerglotzProblem, system: _CoupledSystem, grid: Grid, costate0) -> GridFunction:
    system.reset()
    y0 = np.concatenate([p.alpha.ravel(), [p.gamma], costate0])
    return rk4(system, y0, grid)


def _residual(p: HerglotzProblem, sol: GridFunction) -> np.ndarray:
    nm = p.n * p.m
    end = sol.values[-1]
    r = end[nm + 1 :].copy()
    r[-1] -= 1.0
    return r


_TRIAL_ERRORS = (HerglotzError, FloatingPointError, OverflowError, ValueError)


def _newton_branch(p, system, cfg, guess):
    """Damped Newton with a forward-difference Jacobian. Returns (v, sol, R, iterations)."""
    v = np.array(guess, dtype=float)
    sol = _integrate(p, system, cfg.grid, v)
    R = _residual(p, sol)
    it = 0
    while it < cfg.max_iter and np.linalg.norm(R) > cfg.tol:
        it += 1
        J = np.empty((v.size, v.size))
        try:
            for i in range(v.size):
                step = cfg.fd_eps * (1.0 + abs(v[i]))
                vp = v.copy()
                vp[i] += step
                J[:, i] = (_residual(p, _integrate(p, system, cfg.grid, vp)) - R) / step
        except _TRIAL_ERRORS as err:
            log.debug("jacobian evaluation failed: %s", err)
            break
        delta = np.linalg.lstsq(J, -R, rcond=None)[0]
        lam, accepted = 1.0, False
        for _ in range(21):
            trial = v + lam * delta
            try:
                sol_t = _integrate(p, system, cfg.grid, trial)
                R_t = _residual(p, sol_t)
            except _TRIAL_ERRORS:
                R_t = None
            if R_t is not None and np.linalg.norm(R_t) < np.linalg.norm(R):
                accepted = True
                break
            lam *= 0.5
        if not accepted:
            log.debug("newton stagnated at residual %.3e", np.linalg.norm(R))
            break
        v, sol, R = trial, sol_t, R_t
    return v, sol, R, it


def _trajectory_from_solution(p: HerglotzProblem, system: _CoupledSystem, sol: GridFunction) -> GridFunction:
    n, m = p.n, p.m
    nm = n * m
    grid = sol.grid
    system.reset()
    t = grid.t.tolist()
    Y = sol.values.tolist()
    u = np.array([system.control(ti, yi) for ti, yi in zip(t, Y)])
    xd = np.concatenate([sol.values[:, :nm], u], axis=1).reshape(grid.N, n + 1, m)
    return make_traj(p, grid, xd, sol.values[:, nm])


def shoot(p: HerglotzProblem, cfg: ShootingConfig) -> Extremal:
    """Solve the state-costate boundary-value problem by single shooting.

    Unknowns are the initial costates ``(psi_1(a), ..., psi_n(a), psi_z(a))``;
    the residual is ``(psi_1(b), ..., psi_n(b), psi_z(b) - 1)``. Branch 0 and
    the following ones start from seeded gaussian guesses for ``psi_j(a)``
    with ``psi_z(a) = 1``; the first converged branch is returned, otherwise
    the branch with the smallest residual.
    """
    info = validate(p)
    if info.singular_control:
        raise SingularControl("L is affine in the highest derivative; the control cannot be eliminated")
    if cfg.grid.a != p.a or cfg.grid.b != p.b:
        raise ValueError("shooting grid must span the problem interval")
    system = _CoupledSystem(p)
    rng = np.random.default_rng(cfg.seed)
    nm = p.n * p.m
    best = None
    last_error: Exception | None = None
    for branch in range(cfg.multistart):
        guess = np.concatenate([rng.standard_normal(nm), [1.0]])
        try:
            v, sol, R, it = _newton_branch(p, system, cfg, guess)
        except SingularControl:
            raise
        except _TRIAL_ERRORS as err:
            log.debug("branch %d failed: %s", branch, err)
            last_error = err
            continue
        rn = float(np.linalg.norm(R))
        log.debug("branch %d: residual %.3e after %d iterations", branch, rn, it)
        if best is None or rn < best[0]:
            best = (rn, branch, v, sol, it)
        if rn <= cfg.tol:
            break
    if best is None:
        if isinstance(last_error, HerglotzError):
            raise last_error
        raise NoConvergence(f"every shooting branch failed: {last_error}")
    rn, branch, v, sol, it = best
    traj = _trajectory_from_solution(p, system, sol)
    mult = psi_backward_ode(p, traj)
    return Extremal(
        traj=traj,
        mult=mult,
        converged=rn <= cfg.tol,
        residual_norm=rn,
        z_b=float(traj.values[-1, -1]),
        iterations=it,
        branch=branch,
        costate0=v,
    )


# --------------------------------------------------------------------------
# Direct transcription oracle


@dataclass(frozen=True)
class OracleConfig:
    n_coarse: int = 21
    substeps: int = 2
    restarts: int = 6
    maxfev: int = 40000
    fatol: float = 1e-10
    xatol: float = 1e-6
    seed: int = 42
    simplex_scale: float = 0.5

    def __post_init__(self):
        if self.n_coarse < 2 or self.substeps < 1:
            raise ValueError("need n_coarse >= 2 and substeps >= 1")


@dataclass(frozen=True)
class OracleResult:
    traj: GridFunction
    z_b: float
    controls: np.ndarray
    converged: bool
    nfev: int


class _PayoffObjective:
    """``params -> z(b)`` for a piecewise-linear control, signed for minimization."""

    def __init__(self, p: HerglotzProblem, cfg: OracleConfig):
        self.p = p
        self.ocp = OcpSystem(p)
        self.coarse = np.linspace(p.a, p.b, cfg.n_coarse)
        self.fine = Grid(p.a, p.b, (cfg.n_coarse - 1) * cfg.substeps + 1)
        # RK4 stages sit on the fine nodes and their midpoints
        self.stage_t = self.fine.refine(2).t
        self.sign = 1.0 if p.sense is Sense.MINIMIZE else -1.0
        self.nfev = 0

    def controls(self, params: np.ndarray, t: np.ndarray) -> np.ndarray:
        U = np.asarray(params, dtype=float).reshape(self.p.m, -1)
        return np.stack([np.interp(t, self.coarse, U[k]) for k in range(self.p.m)], axis=1)

    def payoff(self, params: np.ndarray) -> float:
        p = self.p
        n, m = p.n, p.m
        nm = n * m
        table = self.controls(params, self.stage_t).tolist()
        a, half = p.a, self.fine.h / 2.0
        L = p.kernels.L

        def F(t, y):
            u = table[int(round((t - a) / half))]
            return y[m:nm] + u + [L(t, y[:nm] + u, y[nm])]

        y0 = p.alpha.ravel().tolist() + [p.gamma]
        return rk4_final(F, y0, self.fine.t)[nm]

    def __call__(self, params: np.ndarray) -> float:
        self.nfev += 1
        try:
            val = self.payoff(params)
        except (DomainError, OverflowError, ZeroDivisionError):
            return math.inf
        return self.sign * val if math.isfinite(val) else math.inf

    def trajectory(self, params: np.ndarray) -> GridFunction:
        p = self.p
        n, m = p.n, p.m
        nm = n * m
        u_fine = self.controls(params, self.stage_t)
        a, half = p.a, self.fine.h / 2.0

        def F(t, X):
            return self.ocp.vector_field(t, X, u_fine[int(round((t - a) / half))])

        sol = rk4(F, self.ocp.initial_state(), self.fine)
        xd = np.concatenate([sol.values[:, :nm], u_fine[::2]], axis=1).reshape(self.fine.N, n + 1, m)
        return make_traj(p, self.fine, xd, sol.values[:, nm])


def direct_oracle(p: HerglotzProblem, cfg: OracleConfig | None = None) -> OracleResult:
    """Optimize ``z(b)`` directly over controls sampled at ``cfg.n_coarse`` nodes.

    The control is linear between samples; the control system is integrated
    by RK4 with ``cfg.substeps`` steps per sample interval. Nelder-Mead is
    restarted from the incumbent with a fresh seeded simplex until a restart
    no longer improves the payoff.
    """
    cfg = cfg or OracleConfig()
    validate(p)
    obj = _PayoffObjective(p, cfg)
    rng = np.random.default_rng(cfg.seed)
    dim = cfg.n_coarse * p.m
    x0 = np.zeros(dim)
    f0 = obj(x0)
    converged = False
    for restart in range(cfg.restarts):
        scale = cfg.simplex_scale / (1 + restart)
        steps = scale * rng.choice([-1.0, 1.0], size=dim)
        simplex = np.vstack([x0, x0 + np.diag(steps)])
        res = minimize(
            obj,
            x0,
            method="Nelder-Mead",
            options={
                "initial_simplex": simplex,
                "maxfev": cfg.maxfev,
                "xatol": cfg.xatol,
                "fatol": cfg.fatol,
                "adaptive": True,
            },
        )
        improvement = f0 - res.fun
        if res.fun <= f0:
            x0, f0 = res.x, res.fun
        log.debug("oracle restart %d: payoff %.12g (improvement %.3e, nfev %d)", restart, f0, improvement, res.nfev)
        if improvement <= max(1e-10, 1e-10 * abs(f0)):
            converged = True
            break
    if not converged:
        log.warning("direct oracle stopped before the simplex stagnated")
    traj = obj.trajectory(x0)
    return OracleResult(
        traj=traj,
        z_b=float(traj.values[-1, -1]),
        controls=np.asarray(x0).reshape(p.m, -1),
        converged=converged,
        nfev=obj.nfev,
    )
