"""One relaxed-SAV time step and its energy diagnostics.

The scheme evolves a phase field phi together with a scalar auxiliary
variable q that shadows the square root of the shifted potential energy
Q(phi) = sqrt((1/eps)*(F(phi), 1)^h + C0).  A step solves the linearized
Cahn-Hilliard system implicitly (two B-solves plus a rank-one Sherman-
Morrison correction), producing an intermediate scalar r; the relaxation
then sets q = zeta*r + (1-zeta)*Q(phi_new), where zeta is either fixed or
chosen as the smallest value keeping a per-step quadratic functional R
nonpositive.

The linearization vector b uses the previous scalar q, not the recomputed
functional Q, in its denominator: b = F'(phi)/(eps*q).  With zeta = 0 the
two choices coincide identically; with relaxation they differ at O(tau),
and the q-denominator is the variant whose errors are insensitive to zeta
at small tau (see the convergence tests).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StepError
from .linalg import StepOperatorContext, solve_B
from .mesh_fem import LumpedMass, NodalField

DIAGNOSTICS_HEADER = "step,time,zeta,r,q,G,E_GL,mean_phi,grad_mu_sq"


@dataclass(frozen=True)
class PotentialSpec:
    """Double-well potential F with derivative F_prime; F must be >= 0."""

    F: object
    F_prime: object
    name: str


def quartic_double_well() -> PotentialSpec:
    """F(s) = (s^2 - 1)^2 / 4, wells at -1 and +1."""

    def F(s):
        return 0.25 * (s * s - 1.0) ** 2

    def F_prime(s):
        return s**3 - s

    return PotentialSpec(F, F_prime, "quartic_double_well")


def unit_double_well() -> PotentialSpec:
    """F(s) = 2 s^2 (s - 1)^2, wells at 0 and 1 (image-valued fields)."""

    def F(s):
        return 2.0 * (s * (s - 1.0)) ** 2

    def F_prime(s):
        return 4.0 * s * (s - 1.0) * (2.0 * s - 1.0)

    return PotentialSpec(F, F_prime, "unit_double_well")


@dataclass(frozen=True)
class SchemeParams:
    """Scheme constants: interface width eps, step tau, energy shift C0,
    relaxation weights (eta_relax, M_relax), mobility lower bound m0, and
    the zeta policy ("optimal" or "fixed" with zeta_fixed)."""

    eps: float
    tau: float
    C0: float = 1.0
    eta_relax: float = 0.0
    M_relax: float = 0.0
    m0: float = 1.0
    zeta_policy: str = "optimal"
    zeta_fixed: float = 1.0
    tol: float = 1e-12

    def __post_init__(self):
        if self.eps <= 0.0 or self.tau <= 0.0 or self.C0 <= 0.0:
            raise ConfigError("eps, tau and C0 must be positive")
        if not 0.0 <= self.eta_relax < 1.0:
            raise ConfigError("eta_relax must lie in [0, 1)")
        if self.M_relax < 0.0:
            raise ConfigError("M_relax must be nonnegative")
        if self.m0 <= 0.0:
            raise ConfigError("m0 must be positive")
        if self.zeta_policy not in ("optimal", "fixed"):
            raise ConfigError("zeta_policy must be 'optimal' or 'fixed'")
        if not 0.0 <= self.zeta_fixed <= 1.0:
            raise ConfigError("zeta_fixed must lie in [0, 1]")
        if not 0.0 < self.tol < 1.0:
            raise ConfigError("tol must lie in (0, 1)")


@dataclass(frozen=True)
class SavState:
    phi: NodalField
    q: float
    step: int = 0
    time: float = 0.0


@dataclass(frozen=True)
class RQuadratic:
    """Coefficients of R(zeta) = a*zeta^2 + b*zeta + c; a >= 0."""

    a: float
    b: float
    c: float

    def evaluate(self, zeta: float) -> float:
        return (self.a * zeta + self.b) * zeta + self.c


@dataclass(frozen=True)
class DiagnosticsRow:
    step: int
    time: float
    zeta: float
    r: float
    q: float
    G: float
    E_GL: float
    mean_phi: float
    grad_mu_sq: float

    def to_csv(self) -> str:
        vals = (self.time, self.zeta, self.r, self.q, self.G,
                self.E_GL, self.mean_phi, self.grad_mu_sq)
        return f"{self.step}," + ",".join(f"{v:.17g}" for v in vals)


def q_functional(phi: NodalField, pot: PotentialSpec, eps: float,
                 C0: float, mass: LumpedMass) -> float:
    """Q_h(phi) = sqrt((1/eps) * (F(phi), 1)^h + C0)."""
    if C0 <= 0.0:
        raise ValueError("C0 must be positive")
    radicand = float(np.dot(mass.diag, pot.F(phi))) / eps + C0
    if radicand < 0.0:
        raise StepError("negative radicand in Q functional; potential "
                        "is not nonnegative")
    return float(np.sqrt(radicand))


def compute_R_quadratic(r_n: float, Q_new: float, q_prev: float, tau: float,
                        eta: float, M: float, m0: float,
                        grad_mu_sq: float) -> RQuadratic:
    """Expand R(zeta) = z^2 - r^2 + ((z - q)^2 - (r - q)^2)/2 - dissipation,
    where z = zeta*r + (1 - zeta)*Q, into quadratic coefficients."""
    diff = r_n - Q_new
    a = 1.5 * diff * diff
    b = diff * (3.0 * Q_new - q_prev)
    c = (Q_new**2 - r_n**2
         + 0.5 * ((Q_new - q_prev) ** 2 - (r_n - q_prev) ** 2)
         - tau * eta * m0 * grad_mu_sq - tau * M)
    return RQuadratic(a, b, c)


def select_zeta(quad: RQuadratic) -> float:
    """Smallest zeta in [0, 1] with R(zeta) <= 0 (largest relaxation).

    R is convex with R(1) <= 0, so the admissible set is an interval whose
    left endpoint is the smaller root; clamping to [0, 1] keeps it valid.
    """
    a, b, c = quad.a, quad.b, quad.c
    if a <= 1e-14:
        return 0.0 if c <= 0.0 else 1.0
    disc = b * b - 4.0 * a * c
    if disc < 0.0:
        if disc < -1e-14:
            raise StepError(
                f"negative discriminant {disc:.3e} in zeta selection; "
                "R(1) <= 0 must have been violated")
        disc = 0.0
    root = (-b - np.sqrt(disc)) / (2.0 * a)
    return float(min(1.0, max(0.0, root)))


def modified_energy(phi: NodalField, q: float,
                    ctx: StepOperatorContext) -> float:
    """G = (phi, phi)^h / 2 + (eps/2) S phi . phi + q^2."""
    m = ctx.mass.diag
    return float(0.5 * np.dot(m * phi, phi)
                 + 0.5 * ctx.eps * np.dot(phi, ctx.stiff @ phi) + q * q)


def gl_energy(phi: NodalField, pot: PotentialSpec, eps: float, C0: float,
              ctx: StepOperatorContext) -> float:
    """Discrete Ginzburg-Landau energy (eps/2) S phi . phi + Q_h^2 - C0."""
    Q = q_functional(phi, pot, eps, C0, ctx.mass)
    return float(0.5 * eps * np.dot(phi, ctx.stiff @ phi) + Q * Q - C0)


def rsav_step(state: SavState, ctx: StepOperatorContext, pot: PotentialSpec,
              params: SchemeParams, f_vec: NodalField, g_vec: NodalField,
              extra_rhs: NodalField | None = None
              ) -> tuple[SavState, NodalField, float, DiagnosticsRow]:
    """Advance one step; returns (new state, mu, r, diagnostics row).

    f_vec and g_vec are the nodal source data at the previous time level;
    extra_rhs, when given, is a fully scaled vector added verbatim to the
    phi-equation right-hand side (used for the tumor flux coupling).
    """
    eps, tau = params.eps, params.tau
    if abs(ctx.eps - eps) > 1e-14 * max(1.0, eps) or \
            abs(ctx.tau - tau) > 1e-14 * max(1.0, tau):
        raise StepError("operator context disagrees with scheme parameters")

    m = ctx.mass.diag
    phi = state.phi
    q_prev = state.q
    if not np.isfinite(q_prev):
        raise StepError(f"previous scalar q = {q_prev}")

    # linearization vector; the denominator Q_h(phi) >= sqrt(C0) keeps it
    # bounded even when the relaxed scalar q drifts toward zero in long
    # sourced runs
    Q_prev = q_functional(phi, pot, eps, params.C0, ctx.mass)
    b = pot.F_prime(phi) / (eps * Q_prev)
    Mb = m * b
    S_h = ctx.stiff_m

    c = phi + tau * f_vec + tau * (
        (S_h @ (g_vec + (0.5 * np.dot(Mb, phi) - q_prev) * b)) / m)
    if extra_rhs is not None:
        c = c + extra_rhs

    y1, _rep1 = solve_B(ctx, c, params.tol)
    y2, _rep2 = solve_B(ctx, (S_h @ b) / m, params.tol)

    d = np.dot(Mb, y1) / (1.0 + 0.5 * tau * np.dot(Mb, y2))
    phi_new = y1 - 0.5 * tau * d * y2
    r = float(q_prev + 0.5 * np.dot(Mb, phi_new - phi))
    mu = eps * (ctx.stiff @ phi_new) / m - g_vec + r * b

    Q_new = q_functional(phi_new, pot, eps, params.C0, ctx.mass)
    grad_mu_sq = float(mu @ (ctx.stiff @ mu))
    quad = compute_R_quadratic(r, Q_new, q_prev, tau, params.eta_relax,
                               params.M_relax, params.m0, grad_mu_sq)

    # forced identity R(1) = -tau*eta*m0*|grad mu|^2 - tau*M; if the
    # coefficients ever drift from it the expansion above is corrupt
    rhs_id = -tau * params.eta_relax * params.m0 * grad_mu_sq \
        - tau * params.M_relax
    # scale against the magnitudes the cancellation actually runs through
    scale = max(1.0, Q_new * Q_new + r * r + q_prev * q_prev, abs(rhs_id))
    if not np.isfinite(scale) or \
            abs(quad.a + quad.b + quad.c - rhs_id) > 1e-12 * scale:
        raise StepError("R(1) identity violated", diagnostics=quad)

    if params.zeta_policy == "optimal":
        zeta = select_zeta(quad)
        if quad.evaluate(zeta) > 1e-10:
            raise StepError(
                f"selected zeta = {zeta} violates admissibility: "
                f"R(zeta) = {quad.evaluate(zeta):.3e}", diagnostics=quad)
    else:
        zeta = params.zeta_fixed
    q_new = float(zeta * r + (1.0 - zeta) * Q_new)

    if not (np.all(np.isfinite(phi_new)) and np.all(np.isfinite(mu))
            and np.isfinite(r) and np.isfinite(q_new)):
        raise StepError("non-finite values after step", diagnostics=quad)

    new_state = SavState(phi_new, q_new, state.step + 1, state.time + tau)
    row = DiagnosticsRow(
        step=new_state.step, time=new_state.time, zeta=zeta, r=r, q=q_new,
        G=modified_energy(phi_new, q_new, ctx),
        E_GL=gl_energy(phi_new, pot, eps, params.C0, ctx),
        mean_phi=float(np.dot(m, phi_new)) / ctx.mass.total,
        grad_mu_sq=grad_mu_sq)
    return new_state, mu, r, row
