"""Command-line front end: problem files in, trajectories and reports out.

Exit codes: 0 on success, 1 on input errors, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import os
import sys
from dataclasses import dataclass, field

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import expr as ex
from . import verify as vf
from .errors import ColumnMismatch, DimensionMismatch, HerglotzError, MissingSection, NoConvergence, ParseError
from .multipliers import MultiplierSet, psi_backward_ode, psi_closed_form, psi_z_quadrature
from .ode import Grid, GridFunction
from .problem import HerglotzProblem, Sense, validate
from .solver import OracleConfig, ShootingConfig, direct_oracle, shoot

log = logging.getLogger("herglotz")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_FAILURE = 2

DEFAULT_GRID = 1001
GRID_ENV = "HERGLOTZ_GRID"


class InputError(HerglotzError, ValueError):
    """Malformed file content that is not an expression parse error."""


# --------------------------------------------------------------------------
# Problem files


@dataclass
class SolverSettings:
    method: str = "shooting"
    grid_points: int | None = None
    tolerance: float = 1e-8
    max_iterations: int = 50
    multistart: int = 8
    seed: int = 42


@dataclass
class ProblemFile:
    path: str
    problem: HerglotzProblem
    solver: SolverSettings = field(default_factory=SolverSettings)
    symmetry: vf.SymmetryFamily | None = None
    finite_symmetry: vf.FiniteFamily | None = None


def _locate(text: str, section: str, key: str, item: int | None = None) -> tuple[int, int] | None:
    """1-based line and column of the opening quote of a string value in ``text``.

    ``item`` selects the n-th string of an array value.
    """
    current = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if line.startswith("[") and not line.startswith("[["):
            current = line.strip("[] ")
            continue
        if current != section:
            continue
        name, sep, rest = raw.partition("=")
        if not sep or name.strip() != key:
            continue
        col = len(name) + 1
        skip = item or 0
        while True:
            q = raw.find('"', col)
            if q < 0:
                return lineno, col + 1
            if skip == 0:
                return lineno, q + 1
            close = raw.find('"', q + 1)
            col = close + 1 if close >= 0 else len(raw)
            skip -= 1
    return None


def _parse_error(path: str, text: str, section: str, key: str, err: ParseError, item=None) -> InputError:
    where = _locate(text, section, key, item)
    name = type(err).__name__
    if where is None:
        return InputError(f"{path}: [{section}] {key}: {name}: {err}")
    line, col = where
    if err.position is not None:
        col += err.position + 1
    return InputError(f"{path}:{line}:{col}: [{section}] {key}: {name}: {err}")


def _section(data: dict, name: str) -> dict:
    if name not in data:
        raise MissingSection(f"missing [{name}] section")
    sec = data[name]
    if not isinstance(sec, dict):
        raise InputError(f"[{name}] must be a table")
    return sec


def _require(sec: dict, section: str, key: str):
    if key not in sec:
        raise InputError(f"[{section}] is missing key {key!r}")
    return sec[key]


def _string_list(value, section: str, key: str, m: int) -> list[str]:
    if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
        raise InputError(f"[{section}] {key} must be a list of expression strings")
    if len(value) != m:
        raise DimensionMismatch(f"[{section}] {key} needs {m} entries, got {len(value)}")
    return value


def _expr_string(sec: dict, section: str, key: str) -> str:
    value = _require(sec, section, key)
    if not isinstance(value, str):
        raise InputError(f"[{section}] {key} must be a quoted expression string")
    return value


def parse_problem_text(text: str, path: str = "<string>") -> ProblemFile:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise InputError(f"{path}: {err}") from err

    sec = _section(data, "problem")
    try:
        n = int(_require(sec, "problem", "order"))
        m = int(_require(sec, "problem", "dim"))
        interval = [float(v) for v in _require(sec, "problem", "interval")]
        alpha = np.array(_require(sec, "problem", "x_init"), dtype=float)
        gamma = float(_require(sec, "problem", "z_init"))
        sense = Sense.parse(str(sec.get("sense", "min")))
    except (TypeError, ValueError) as err:
        if isinstance(err, HerglotzError):
            raise
        raise InputError(f"{path}: [problem] {err}") from err
    if len(interval) != 2:
        raise InputError(f"{path}: [problem] interval needs exactly two numbers")
    if alpha.shape != (n, m):
        raise DimensionMismatch(f"{path}: [problem] x_init needs {n} rows of {m} entries, got shape {alpha.shape}")

    lagrangian = _expr_string(sec, "problem", "lagrangian")
    try:
        problem = HerglotzProblem.from_source(lagrangian, n, m, interval, alpha, gamma, sense)
    except ParseError as err:
        raise _parse_error(path, text, "problem", "lagrangian", err) from err
    validate(problem)

    settings = SolverSettings()
    if "solver" in data:
        s = _section(data, "solver")
        try:
            settings = SolverSettings(
                method=str(s.get("method", settings.method)),
                grid_points=int(s["grid_points"]) if "grid_points" in s else None,
                tolerance=float(s.get("tolerance", settings.tolerance)),
                max_iterations=int(s.get("max_iterations", settings.max_iterations)),
                multistart=int(s.get("multistart", settings.multistart)),
                seed=int(s.get("seed", settings.seed)),
            )
        except (TypeError, ValueError) as err:
            raise InputError(f"{path}: [solver] {err}") from err
        if settings.method not in ("shooting", "direct"):
            raise InputError(f"{path}: [solver] method must be 'shooting' or 'direct'")

    pf = ProblemFile(path, problem, settings)

    if "symmetry" in data:
        s = _section(data, "symmetry")
        T = _expr_string(s, "symmetry", "T")
        X = _string_list(_require(s, "symmetry", "X"), "symmetry", "X", m)
        Z = _expr_string(s, "symmetry", "Z")
        pf.symmetry = _parse_family(vf.SymmetryFamily, path, text, "symmetry", ("T", "X", "Z"), (T, X, Z), n, m)

    if "finite_symmetry" in data:
        s = _section(data, "finite_symmetry")
        Ts = _expr_string(s, "finite_symmetry", "Ts")
        Xs = _string_list(_require(s, "finite_symmetry", "Xs"), "finite_symmetry", "Xs", m)
        Zs = _expr_string(s, "finite_symmetry", "Zs")
        pf.finite_symmetry = _parse_family(
            vf.FiniteFamily, path, text, "finite_symmetry", ("Ts", "Xs", "Zs"), (Ts, Xs, Zs), n, m
        )
    return pf


def _parse_family(cls, path, text, section, keys, values, n, m):
    # parse entry by entry so an error can be pinned to its key
    allow = cls is vf.FiniteFamily
    for key, value in zip(keys, values):
        items = value if isinstance(value, list) else [value]
        for idx, src in enumerate(items):
            try:
                ex.parse(src, n, m, allow_param=allow)
            except ParseError as err:
                raise _parse_error(path, text, section, key, err, idx if isinstance(value, list) else None) from err
    return cls.from_source(*values, n, m)


def load_problem(path: str) -> ProblemFile:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as err:
        raise InputError(f"cannot read {path}: {err.strerror}") from err
    return parse_problem_text(text, path)


# --------------------------------------------------------------------------
# Trajectory files


def traj_columns(n: int, m: int) -> list[str]:
    cols = ["t"]
    cols += [f"x{k}d{j}" for k in range(1, m + 1) for j in range(n + 1)]
    cols.append("z")
    if m == 1:
        cols += [f"psi{j}" for j in range(1, n + 1)]
    else:
        cols += [f"psi{j}_{k}" for j in range(1, n + 1) for k in range(1, m + 1)]
    cols.append("psi_z")
    return cols


def _state_permutation(n: int, m: int) -> np.ndarray:
    """Trajectory column index (derivative-major) for every CSV x column (component-major)."""
    return np.array([j * m + (k - 1) for k in range(1, m + 1) for j in range(n + 1)])


def write_trajectory(out, p: HerglotzProblem, traj: GridFunction, mult: MultiplierSet) -> None:
    n, m = p.n, p.m
    nx = (n + 1) * m
    xs = traj.values[:, :nx][:, _state_permutation(n, m)]
    table = np.column_stack([traj.grid.t, xs, traj.values[:, nx], mult.psi.values, mult.psi_z.values[:, 0]])
    writer = csv.writer(out, lineterminator="\n")
    writer.writerow(traj_columns(n, m))
    for row in table:
        writer.writerow(["%.17g" % v for v in row])


@dataclass
class TrajectoryFile:
    traj: GridFunction
    mult: MultiplierSet


def read_trajectory(path: str, p: HerglotzProblem) -> TrajectoryFile:
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as err:
        raise InputError(f"cannot read {path}: {err.strerror}") from err
    if not rows:
        raise ColumnMismatch(f"{path}: empty trajectory file")
    header = [c.strip() for c in rows[0]]
    expected = traj_columns(p.n, p.m)
    if header != expected:
        raise ColumnMismatch(
            f"{path}: {len(header)} columns {header[:4]}... do not match order {p.n}, dim {p.m} "
            f"(expected {len(expected)} columns {expected})"
        )
    try:
        data = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float)
    except ValueError as err:
        raise InputError(f"{path}: {err}") from err
    if data.ndim != 2 or data.shape[0] < 3 or data.shape[1] != len(expected):
        raise ColumnMismatch(f"{path}: every row needs {len(expected)} values and at least 3 rows are required")
    t = data[:, 0]
    if not np.all(np.diff(t) > 0):
        raise InputError(f"{path}: t must be strictly increasing")
    try:
        grid = Grid(float(t[0]), float(t[-1]), t.size)
    except ValueError as err:
        raise InputError(f"{path}: {err}") from err
    if not np.allclose(t, grid.t, rtol=0.0, atol=1e-9 * (1.0 + abs(grid.b - grid.a))):
        raise InputError(f"{path}: t must be a uniform grid")
    if not (np.isclose(grid.a, p.a) and np.isclose(grid.b, p.b)):
        raise InputError(f"{path}: grid [{grid.a}, {grid.b}] does not span the problem interval [{p.a}, {p.b}]")
    grid = Grid(p.a, p.b, t.size)

    n, m = p.n, p.m
    nx = (n + 1) * m
    vals = np.empty((t.size, nx + 1))
    vals[:, _state_permutation(n, m)] = data[:, 1 : 1 + nx]
    vals[:, nx] = data[:, 1 + nx]
    psi = data[:, 2 + nx : 2 + nx + n * m]
    psi_z = data[:, -1]
    traj = GridFunction(grid, vals)
    return TrajectoryFile(traj, MultiplierSet(GridFunction(grid, psi_z), GridFunction(grid, psi)))


# --------------------------------------------------------------------------
# Output helpers


def sci(value: float) -> str:
    """Six-digit mantissa with an unpadded integer exponent, e.g. ``5.000000e0``."""
    if not np.isfinite(value):
        return str(value)
    mant, _, exp = format(value, ".6e").partition("e")
    return f"{mant}e{int(exp)}"


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _grid_points(flag: int | None, settings: SolverSettings) -> int:
    if flag is not None:
        return flag
    env = os.environ.get(GRID_ENV)
    if env:
        try:
            return int(env)
        except ValueError as err:
            raise InputError(f"{GRID_ENV} must be an integer, got {env!r}") from err
    return settings.grid_points or DEFAULT_GRID


# --------------------------------------------------------------------------
# Commands


def cmd_solve(args) -> int:
    pf = load_problem(args.file)
    p, s = pf.problem, pf.solver
    method = args.method or s.method
    if method == "direct":
        res = direct_oracle(p, OracleConfig(seed=args.seed if args.seed is not None else s.seed))
        traj, converged = res.traj, res.converged
        mult = psi_backward_ode(p, traj)
        summary = f"z(b)={sci(res.z_b)} converged={str(converged).lower()} method=direct evaluations={res.nfev}"
    else:
        N = _grid_points(args.grid, s)
        try:
            grid = p.grid(N)
        except ValueError as err:
            raise InputError(str(err)) from err
        cfg = ShootingConfig(
            grid=grid,
            tol=args.tol if args.tol is not None else s.tolerance,
            max_iter=s.max_iterations,
            multistart=s.multistart,
            seed=args.seed if args.seed is not None else s.seed,
        )
        ext = shoot(p, cfg)
        traj, mult, converged = ext.traj, ext.mult, ext.converged
        summary = (
            f"z(b)={sci(ext.z_b)} converged={str(converged).lower()} "
            f"residual={sci(ext.residual_norm)} iterations={ext.iterations}"
        )
    out, close = _open_out(args.out)
    try:
        write_trajectory(out, p, traj, mult)
    finally:
        if close:
            out.close()
    # keep stdout clean when it carries the CSV
    print(summary, file=sys.stderr if not close else sys.stdout)
    return EXIT_OK if converged else EXIT_FAILURE


def cmd_oracle(args) -> int:
    args.method = "direct"
    return cmd_solve(args)


def _recomputed_multipliers(p: HerglotzProblem, traj: GridFunction) -> MultiplierSet:
    return psi_closed_form(p, traj, psi_z_quadrature(p, traj))


def cmd_verify(args) -> int:
    pf = load_problem(args.problem)
    p = pf.problem
    tf = read_trajectory(args.traj, p)
    traj = tf.traj
    tol = vf.grid_tolerance(traj.grid, args.tol_scale)
    mult = _recomputed_multipliers(p, traj)
    reports = [
        vf.check_el(p, traj, mult.psi_z, tol),
        vf.transversality(p, mult, tol),
        vf.dubois_reymond(p, traj, mult, tol),
    ]
    for r in reports:
        print(r.line())
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAILURE


def cmd_noether(args) -> int:
    pf = load_problem(args.file)
    p = pf.problem
    if pf.symmetry is None:
        raise MissingSection(f"{args.file}: noether needs a [symmetry] section")
    tf = read_trajectory(args.traj, p)
    traj = tf.traj
    tol = vf.grid_tolerance(traj.grid, args.tol_scale)
    inv = None
    if pf.finite_symmetry is None:
        log.warning("no [finite_symmetry] section: the charge is computed without an invariance certificate")
    else:
        inv = vf.invariance_check(p, traj, pf.finite_symmetry, tol)
        print(inv.line())
        print(f"  condition (i)  xi={sci(inv.aux['xi'])} deviation={sci(inv.aux['xi_deviation'])} "
              f"{'PASS' if inv.aux['condition_i'] else 'FAIL'}")
        print(f"  condition (ii) residual={sci(inv.aux['condition_ii_residual'])} "
              f"{'PASS' if inv.aux['condition_ii'] else 'FAIL'}")
        if not inv.passed:
            print("charge not asserted: the problem is not invariant under the family")
            return EXIT_FAILURE
    mult = psi_backward_ode(p, traj)
    rep = vf.noether_charge(p, traj, mult, pf.symmetry, tol, invariance=inv)
    print(rep.line())
    print(f"  charge mean={sci(rep.aux['mean'])} max_deviation={sci(rep.aux['max_dev'])} "
          f"guarded={str(rep.aux['guarded']).lower()}")
    return EXIT_OK if rep.passed else EXIT_FAILURE


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="herglotz", description="Solve and verify Herglotz variational problems.")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def solve_flags(sp, with_method=True):
        sp.add_argument("file", help="problem file (TOML)")
        sp.add_argument("--out", help="trajectory CSV path (default: stdout)")
        if with_method:
            sp.add_argument("--method", choices=("shooting", "direct"))
        sp.add_argument("--grid", type=int, help=f"grid points (overrides ${GRID_ENV})")
        sp.add_argument("--tol", type=float, help="shooting residual tolerance")
        sp.add_argument("--seed", type=int, help="multistart / oracle seed")

    sp = sub.add_parser("solve", help="compute an extremal and write its trajectory")
    solve_flags(sp)
    sp.set_defaults(func=cmd_solve)

    sp = sub.add_parser("oracle", help="same as solve --method direct")
    solve_flags(sp, with_method=False)
    sp.set_defaults(func=cmd_oracle)

    sp = sub.add_parser("verify", help="check the extremal conditions on a trajectory")
    sp.add_argument("traj", help="trajectory CSV")
    sp.add_argument("--problem", required=True, help="problem file (TOML)")
    sp.add_argument("--tol-scale", type=float, default=vf.TOL_SCALE, help="tolerance is C*h^2 (default 50)")
    sp.set_defaults(func=cmd_verify)

    sp = sub.add_parser("noether", help="certify invariance and check the Noether charge")
    sp.add_argument("file", help="problem file (TOML)")
    sp.add_argument("--traj", required=True, help="trajectory CSV")
    sp.add_argument("--tol-scale", type=float, default=vf.TOL_SCALE, help="tolerance is C*h^2 (default 50)")
    sp.set_defaults(func=cmd_noether)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except NoConvergence as err:
        print(f"error: NoConvergence: {err}", file=sys.stderr)
        return EXIT_FAILURE
    except ArithmeticError as err:
        # singular control, blow-up or domain errors during the numerics
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_FAILURE
    except (HerglotzError, ValueError, KeyError) as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
