"""Manufactured-solution verification on the unit interval.

Three smooth space-time fields with closed-form derivatives drive the
scheme through a source f chosen so that each field solves the constant
mobility Cahn-Hilliard equation with quartic potential exactly:

    f = phi_t + eps*phi_xxxx - (1/eps) * (6*phi*phi_x^2 + (3*phi^2-1)*phi_xx)

The convergence sweep integrates to a horizon T for a grid of (tau, zeta)
cells and reports the discrete L2(0,T;L2) error against the nodal
interpolant of the exact solution.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ChsavError, ConfigError
from .linalg import StepOperatorContext
from .mesh_fem import (LumpedMass, Mesh, NodalField, assemble_lumped_mass,
                       assemble_stiffness, build_interval_mesh,
                       nodal_interpolate)
from .sav_core import (DiagnosticsRow, RQuadratic, SavState, SchemeParams,
                       q_functional, quartic_double_well, rsav_step)


@dataclass(frozen=True)
class AnalyticSolution:
    """Exact field phi_star(x, t) with the x/t derivatives the source
    construction needs (through fourth order in x)."""

    tag: str
    phi_star: object
    d_t: object
    d_x: object
    d_xx: object
    d_xxxx: object


def _cos_linear() -> AnalyticSolution:
    pi = np.pi

    def phi(x, t):
        return np.cos(pi * x) * (1.0 + t)

    return AnalyticSolution(
        "cos_linear", phi,
        d_t=lambda x, t: np.cos(pi * x),
        d_x=lambda x, t: -pi * np.sin(pi * x) * (1.0 + t),
        d_xx=lambda x, t: -pi**2 * np.cos(pi * x) * (1.0 + t),
        d_xxxx=lambda x, t: pi**4 * np.cos(pi * x) * (1.0 + t))


def _expcos_cos() -> AnalyticSolution:
    pi = np.pi

    def E(x):
        return np.exp(np.cos(pi * x))

    def phi(x, t):
        return E(x) * np.cos(t)

    def d_xx(x, t):
        c, s = np.cos(pi * x), np.sin(pi * x)
        return pi**2 * (s * s - c) * E(x) * np.cos(t)

    def d_xxxx(x, t):
        c, s = np.cos(pi * x), np.sin(pi * x)
        poly = c - 4.0 * s * s + 3.0 * c * c - 6.0 * c * s * s + s**4
        return pi**4 * poly * E(x) * np.cos(t)

    return AnalyticSolution(
        "expcos_cos", phi,
        d_t=lambda x, t: -E(x) * np.sin(t),
        d_x=lambda x, t: -pi * np.sin(pi * x) * E(x) * np.cos(t),
        d_xx=d_xx, d_xxxx=d_xxxx)


def _expcost_sin2() -> AnalyticSolution:
    pi = np.pi

    def phi(x, t):
        return np.exp(np.cos(t)) * np.sin(pi * x) ** 2

    return AnalyticSolution(
        "expcost_sin2", phi,
        d_t=lambda x, t: -np.sin(t) * np.exp(np.cos(t)) * np.sin(pi * x) ** 2,
        d_x=lambda x, t: np.exp(np.cos(t)) * pi * np.sin(2.0 * pi * x),
        d_xx=lambda x, t: np.exp(np.cos(t)) * 2.0 * pi**2
        * np.cos(2.0 * pi * x),
        d_xxxx=lambda x, t: -np.exp(np.cos(t)) * 8.0 * pi**4
        * np.cos(2.0 * pi * x))


_SOLUTIONS = {
    "cos_linear": _cos_linear,
    "expcos_cos": _expcos_cos,
    "expcost_sin2": _expcost_sin2,
}

SOLUTION_TAGS = tuple(_SOLUTIONS)


def get_solution(tag: str) -> AnalyticSolution:
    try:
        return _SOLUTIONS[tag]()
    except KeyError:
        raise ConfigError(
            f"unknown solution '{tag}'; valid tags: {', '.join(SOLUTION_TAGS)}")


def manufactured_f(sol: AnalyticSolution, eps: float, x, t):
    """Source making phi_star solve the equation with quartic potential."""
    phi = sol.phi_star(x, t)
    lap_fprime = (6.0 * phi * sol.d_x(x, t) ** 2
                  + (3.0 * phi * phi - 1.0) * sol.d_xx(x, t))
    return sol.d_t(x, t) + eps * sol.d_xxxx(x, t) - lap_fprime / eps


def l2l2_error(trajectory, sol: AnalyticSolution, mesh: Mesh,
               mass: LumpedMass, tau: float) -> float:
    """sqrt(sum_n tau * ||phi^n - I_h phi*(t^n)||_h^2), n = 1..N.

    trajectory[n-1] holds phi^n; the initial state is not included.
    """
    err2 = 0.0
    for n, phi in enumerate(trajectory, start=1):
        phi = np.asarray(phi, dtype=float)
        if phi.shape != (mesh.n_nodes,):
            raise ValueError("trajectory field length does not match mesh")
        e = phi - nodal_interpolate(
            mesh, lambda x: sol.phi_star(x, n * tau))
        err2 += tau * float(np.dot(mass.diag, e * e))
    return float(np.sqrt(err2))


@dataclass
class ErrorCell:
    tau: float
    zeta: float
    error: float
    steps: int
    wall_ms: float
    failed: str | None = None
    final: DiagnosticsRow | None = None


@dataclass
class ErrorTable:
    cells: list

    def get(self, tau: float, zeta: float) -> ErrorCell:
        for cell in self.cells:
            if np.isclose(cell.tau, tau) and np.isclose(cell.zeta, zeta):
                return cell
        raise KeyError(f"no cell for tau={tau}, zeta={zeta}")

    def to_csv(self) -> str:
        lines = ["tau,zeta,error,steps,wall_ms"]
        for c in self.cells:
            lines.append(f"{c.tau:.17g},{c.zeta:.17g},{c.error:.17g},"
                         f"{c.steps},{c.wall_ms:.3f}")
        return "\n".join(lines) + "\n"


def _steps_for(T: float, tau: float) -> int:
    N = int(round(T / tau))
    if N < 1 or abs(N * tau - T) > 1e-9 * max(1.0, T):
        raise ConfigError(f"horizon T={T} is not a multiple of tau={tau}")
    return N


def _interval_operators(h: float):
    n_cells = int(round(1.0 / h))
    if abs(n_cells * h - 1.0) > 1e-9:
        raise ConfigError(f"mesh size h={h} does not tile the unit interval")
    mesh = build_interval_mesh(0.0, 1.0, n_cells)
    mass = assemble_lumped_mass(mesh)
    stiff = assemble_stiffness(mesh)
    return mesh, mass, stiff


def _run_cell(sol, mesh, mass, stiff, tau, zeta, T, eta, M, eps, tol,
              collect=False):
    """One (tau, zeta) integration; returns (error, steps, rows or last)."""
    params = SchemeParams(eps=eps, tau=tau, C0=1.0, eta_relax=eta,
                          M_relax=M,
                          zeta_policy="optimal" if zeta is None else "fixed",
                          zeta_fixed=0.0 if zeta is None else zeta, tol=tol)
    ctx = StepOperatorContext(mass, stiff, stiff, eps, tau, mesh)
    pot = quartic_double_well()
    x = mesh.nodes
    N = _steps_for(T, tau)
    phi0 = nodal_interpolate(mesh, lambda xx: sol.phi_star(xx, 0.0))
    state = SavState(phi0, q_functional(phi0, pot, eps, 1.0, mass))
    g = np.zeros(mesh.n_nodes)
    err2 = 0.0
    rows = []
    row = None
    for n in range(1, N + 1):
        f = manufactured_f(sol, eps, x, (n - 1) * tau)
        state, _mu, _r, row = rsav_step(state, ctx, pot, params, f, g)
        e = state.phi - sol.phi_star(x, n * tau)
        err2 += tau * float(np.dot(mass.diag, e * e))
        if collect:
            rows.append(row)
    return float(np.sqrt(err2)), N, rows if collect else row


def run_convergence(sol: AnalyticSolution, taus, zetas, h: float, T: float,
                    eta: float = 0.0, M: float = 0.0, eps: float = 1.0,
                    tol: float = 1e-12, workers: int | None = None
                    ) -> ErrorTable:
    """Error table over the (tau, zeta) grid; cells run concurrently.

    A solver failure in one cell is recorded in that cell (error = nan,
    failed = message) and does not abort the sweep.
    """
    mesh, mass, stiff = _interval_operators(h)
    grid = [(tau, zeta) for tau in taus for zeta in zetas]
    cells: list = [None] * len(grid)

    def work(i):
        tau, zeta = grid[i]
        t0 = time.perf_counter()
        try:
            error, steps, last = _run_cell(sol, mesh, mass, stiff, tau,
                                           zeta, T, eta, M, eps, tol)
            cells[i] = ErrorCell(tau, zeta, error, steps,
                                 (time.perf_counter() - t0) * 1e3,
                                 final=last)
        except ChsavError as exc:
            # the step count itself may be what was invalid, so do not
            # let its recomputation abort the failure record
            try:
                steps = _steps_for(T, tau)
            except ChsavError:
                steps = 0
            cells[i] = ErrorCell(tau, zeta, float("nan"), steps,
                                 (time.perf_counter() - t0) * 1e3,
                                 failed=str(exc))

    if workers == 1 or len(grid) == 1:
        for i in range(len(grid)):
            work(i)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(work, range(len(grid))))
    return ErrorTable(cells)


@dataclass
class ZetaStudy:
    """Per-step relaxation history of an optimal-policy run."""

    rows: list
    quads: list

    @property
    def zetas(self) -> np.ndarray:
        return np.array([row.zeta for row in self.rows])

    def to_csv(self) -> str:
        lines = ["step,time,zeta,a,b,c"]
        for row, quad in zip(self.rows, self.quads):
            lines.append(f"{row.step},{row.time:.17g},{row.zeta:.17g},"
                         f"{quad.a:.17g},{quad.b:.17g},{quad.c:.17g}")
        return "\n".join(lines) + "\n"


def run_zeta_study(sol: AnalyticSolution, tau: float, h: float, T: float,
                   eta: float, M: float, eps: float = 1.0,
                   tol: float = 1e-12) -> ZetaStudy:
    """Optimal-policy run logging the selected zeta and the R coefficients."""
    from .sav_core import compute_R_quadratic  # local to avoid cycle noise

    mesh, mass, stiff = _interval_operators(h)
    params = SchemeParams(eps=eps, tau=tau, C0=1.0, eta_relax=eta,
                          M_relax=M, zeta_policy="optimal", tol=tol)
    ctx = StepOperatorContext(mass, stiff, stiff, eps, tau, mesh)
    pot = quartic_double_well()
    x = mesh.nodes
    N = _steps_for(T, tau)
    phi0 = nodal_interpolate(mesh, lambda xx: sol.phi_star(xx, 0.0))
    state = SavState(phi0, q_functional(phi0, pot, eps, 1.0, mass))
    g = np.zeros(mesh.n_nodes)
    rows, quads = [], []
    for n in range(1, N + 1):
        f = manufactured_f(sol, eps, x, (n - 1) * tau)
        q_prev = state.q
        state, mu, r, row = rsav_step(state, ctx, pot, params, f, g)
        Q_new = q_functional(state.phi, pot, eps, params.C0, mass)
        quads.append(compute_R_quadratic(
            r, Q_new, q_prev, tau, eta, M, params.m0, row.grad_mu_sq))
        rows.append(row)
    return ZetaStudy(rows, quads)
