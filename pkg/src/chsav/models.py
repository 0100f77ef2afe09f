"""Source terms and coupled-field steps for the four applications.

Every application drives the same rsav_step with its own nodal sources:

* cho       - mean-reverting source f = eta*(c - phi) (diblock copolymers)
* segment   - Chan-Vese style fidelity with a regularized Heaviside and
              per-step updated average intensities c1, c2
* inpaint   - masked fidelity f = lambda0 * mask * (I - clamp(phi))
* tumor     - nutrient field sigma solved first (SPD system), then phi
              with proliferation source and a chemotaxis flux term
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, ConfigError, StepError
from .linalg import StepOperatorContext, solve_spd
from .mesh_fem import (Mesh, NodalField, assemble_weighted_stiffness,
                       LumpedMass)


@dataclass(frozen=True)
class MobilitySpec:
    """Mobility function m(phi) with pointwise bounds 0 < m0 <= m <= m1."""

    m: object
    m0: float
    m1: float

    def __post_init__(self):
        if not 0.0 < self.m0 <= self.m1:
            raise ConfigError("mobility bounds must satisfy 0 < m0 <= m1")

    @property
    def is_constant(self) -> bool:
        return self.m0 == self.m1


def constant_mobility(value: float = 1.0) -> MobilitySpec:
    def m(s):
        return np.full_like(np.asarray(s, dtype=float), value)

    return MobilitySpec(m, value, value)


def mobility_values(spec: MobilitySpec, phi: NodalField) -> NodalField:
    """Evaluate the mobility at nodal values, enforcing its bounds."""
    vals = np.asarray(spec.m(phi), dtype=float)
    vals = np.broadcast_to(vals, np.shape(phi)).astype(float)
    tol = 1e-12 * max(1.0, spec.m1)
    if np.any(vals < spec.m0 - tol) or np.any(vals > spec.m1 + tol):
        raise AssemblyError("mobility values escape the declared bounds")
    return vals


# --- Cahn-Hilliard-Oono --------------------------------------------------

@dataclass(frozen=True)
class ChoParams:
    """Mean-reverting source strength eta and target mean c."""

    eta: float
    c: float

    def __post_init__(self):
        if self.eta <= 0.0:
            raise ConfigError("cho eta must be positive")


def cho_source(phi_prev: NodalField, p: ChoParams) -> NodalField:
    return p.eta * (p.c - phi_prev)


def cho_mean_recursion(mean0: float, c: float, eta: float, tau: float,
                       n: int) -> float:
    """Closed form of the lumped-mean recursion after n steps."""
    decay = (1.0 - tau * eta) ** n
    return mean0 * decay + c * (1.0 - decay)


# --- image segmentation --------------------------------------------------

@dataclass
class SegParams:
    """Regularization width eta, fidelity weights lambda1/lambda2, the
    grayscale image I in [0,1], and the current average intensities."""

    eta: float
    lambda1: float
    lambda2: float
    image: NodalField
    c1: float = 1.0
    c2: float = 0.0

    def __post_init__(self):
        img = np.asarray(self.image, dtype=float)
        if np.any(img < 0.0) or np.any(img > 1.0):
            raise ConfigError("segmentation image values must lie in [0, 1]")
        if self.eta <= 0.0 or self.lambda1 <= 0.0 or self.lambda2 <= 0.0:
            raise ConfigError("eta, lambda1, lambda2 must be positive")


def regularized_heaviside(z: NodalField, eta: float) -> NodalField:
    return 0.5 * (1.0 + (2.0 / np.pi) * np.arctan(z / eta))


def seg_update_intensities(phi: NodalField, p: SegParams,
                           mass: LumpedMass) -> tuple[float, float]:
    """Lumped weighted averages of I inside (H) and outside (1-H)."""
    H = regularized_heaviside(phi - 0.5, p.eta)
    w_in = mass.diag * H
    w_out = mass.diag * (1.0 - H)
    c1 = float(np.dot(w_in, p.image) / w_in.sum())
    c2 = float(np.dot(w_out, p.image) / w_out.sum())
    return c1, c2


def seg_source(phi_prev: NodalField, p: SegParams) -> NodalField:
    num = (p.lambda1 * (p.image - p.c1) ** 2
           - p.lambda2 * (p.image - p.c2) ** 2)
    f = -p.eta * num / (np.pi * (p.eta**2 + (phi_prev - 0.5) ** 2))
    bound = (p.lambda1 + p.lambda2) / (np.pi * p.eta)
    if np.max(np.abs(f)) > bound * (1.0 + 1e-12):
        raise StepError("segmentation source exceeded its bound")
    return f


# --- image inpainting ----------------------------------------------------

@dataclass(frozen=True)
class InpaintParams:
    """Fidelity strength lambda0, binary keep-mask (1 = undamaged), and
    the binary image I with values in {-1, +1}."""

    lambda0: float
    mask: NodalField
    image: NodalField

    def __post_init__(self):
        if self.lambda0 < 0.0:
            raise ConfigError("lambda0 must be nonnegative")
        mask = np.asarray(self.mask, dtype=float)
        if not np.all((mask == 0.0) | (mask == 1.0)):
            raise ConfigError("inpainting mask must be binary")
        img = np.asarray(self.image, dtype=float)
        if not np.all((img == -1.0) | (img == 1.0)):
            raise ConfigError("inpainting image must take values in {-1, 1}")


def inpaint_source(phi_prev: NodalField, p: InpaintParams) -> NodalField:
    f = p.lambda0 * p.mask * (p.image - np.clip(phi_prev, -1.0, 1.0))
    if np.max(np.abs(f)) > 2.0 * p.lambda0 * (1.0 + 1e-12):
        raise StepError("inpainting source exceeded its bound")
    return f


# --- tumor growth --------------------------------------------------------

@dataclass
class TumorParams:
    """Nutrient diffusion chi_sigma, chemotaxis chi, active transport eta,
    kinetic rates (P_rate, A_rate, C_rate), saturation sigma_inf, and the
    nutrient mobility spec."""

    chi_sigma: float
    chi: float
    eta: float
    P_rate: float
    A_rate: float
    C_rate: float
    sigma_inf: float
    n_mob: MobilitySpec
    sigma: NodalField | None = None

    def __post_init__(self):
        if min(self.chi_sigma, self.chi, self.eta, self.P_rate, self.A_rate,
               self.C_rate) < 0.0:
            raise ConfigError("tumor rates must be nonnegative")
        if self.sigma_inf <= 0.0:
            raise ConfigError("sigma_inf must be positive")


def interp_clamp(s: NodalField) -> NodalField:
    """h(s) = clamp((1+s)/2, 0, 1): volume fraction of the tumor phase.

    Equals (1 + clamp(s, -1, 1))/2, so overshoots of the phase field
    outside [-1, 1] keep the fraction nonnegative and bounded.
    """
    return np.clip(0.5 * (1.0 + s), 0.0, 1.0)


def nutrient_clamp(s: NodalField, sigma_inf: float) -> NodalField:
    """k(s) = clamp(s, 0, sigma_inf): saturated nutrient concentration."""
    return np.clip(s, 0.0, sigma_inf)


def tumor_sigma_step(sigma_prev: NodalField, phi_prev: NodalField,
                     p: TumorParams, ctx: StepOperatorContext,
                     tau: float) -> NodalField:
    """Implicit nutrient step: (M + tau*chi_sigma*S_n + tau*C_rate*
    diag(M h(phi))) sigma = M sigma_prev + tau*eta*S_n phi_prev."""
    if tau <= 0.0:
        raise ValueError("tau must be positive")
    mass = ctx.mass
    if p.n_mob.is_constant:
        S_n = p.n_mob.m0 * ctx.stiff
    else:
        if ctx.mesh is None:
            raise ValueError("nonconstant nutrient mobility needs the mesh")
        S_n = assemble_weighted_stiffness(
            ctx.mesh, mobility_values(p.n_mob, phi_prev))
    reaction = tau * p.C_rate * mass.diag * interp_clamp(phi_prev)
    rhs = mass.diag * sigma_prev + tau * p.eta * (S_n @ phi_prev)
    sigma, _report = solve_spd(mass, S_n, rhs, alpha=1.0,
                               beta=tau * p.chi_sigma, reaction=reaction,
                               tol=1e-12)
    return sigma


def tumor_phi_step_inputs(sigma_new: NodalField, phi_prev: NodalField,
                          p: TumorParams, ctx: StepOperatorContext,
                          tau: float) -> tuple[NodalField, NodalField,
                                               NodalField]:
    """Sources for the phi step given the fresh nutrient field.

    f is the proliferation term h(phi)(P_rate*k(sigma) - A_rate); g is
    zero (the chemotaxis potential is folded into the chemical potential);
    extra_rhs carries the known flux divergence of the chemotaxis term,
    tau*chi*M^-1*S_m*sigma, already scaled for direct addition to the
    phi-equation right-hand side.
    """
    f_vec = interp_clamp(phi_prev) * (
        p.P_rate * nutrient_clamp(sigma_new, p.sigma_inf) - p.A_rate)
    bound = p.P_rate * p.sigma_inf + p.A_rate
    if np.max(np.abs(f_vec)) > bound * (1.0 + 1e-12):
        raise StepError("tumor proliferation source exceeded its bound")
    g_vec = np.zeros_like(phi_prev)
    if p.chi == 0.0:
        extra = np.zeros_like(phi_prev)
    else:
        extra = tau * p.chi * (ctx.stiff_m @ sigma_new) / ctx.mass.diag
    return f_vec, g_vec, extra


def tumor_initial_phi(mesh: Mesh) -> NodalField:
    """Perturbed-circle interface centered in the unit square."""
    if mesh.dimension != 2:
        raise ConfigError("tumor initial condition needs a 2D mesh")
    x = mesh.nodes[:, 0] - 0.5
    y = mesh.nodes[:, 1] - 0.5
    rad = np.hypot(x, y)
    theta = np.arctan2(y, x)
    width = np.sqrt(2.0) * 0.01
    return -np.tanh((rad - (0.05 + 0.02 * np.cos(2.0 * theta))) / width)
