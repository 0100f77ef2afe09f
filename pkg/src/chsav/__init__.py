"""Relaxed scalar-auxiliary-variable solver for Cahn-Hilliard systems.

First-order time stepping with P1 finite elements on intervals and
Friedrichs-Keller triangulations, plus application drivers for phase
separation with a mass source, image segmentation, inpainting, and a
two-field tumor growth model.
"""

from .errors import (AssemblyError, ChsavError, ConfigError, SolverError,
                     StepError)
from .linalg import SolveReport, StepOperatorContext, apply_B, solve_B, \
    solve_spd
from .manufactured import (SOLUTION_TAGS, AnalyticSolution, ErrorCell,
                           ErrorTable, ZetaStudy, get_solution, l2l2_error,
                           manufactured_f, run_convergence, run_zeta_study)
from .mesh_fem import (LumpedMass, Mesh, NodalField, assemble_lumped_mass,
                       assemble_stiffness, assemble_weighted_stiffness,
                       build_friedrichs_keller, build_interval_mesh,
                       lumped_norm, nodal_interpolate)
from .models import (ChoParams, InpaintParams, MobilitySpec, SegParams,
                     TumorParams, cho_mean_recursion, cho_source,
                     constant_mobility, inpaint_source, mobility_values,
                     regularized_heaviside, seg_source,
                     seg_update_intensities, tumor_initial_phi,
                     tumor_phi_step_inputs, tumor_sigma_step)
from .sav_core import (DIAGNOSTICS_HEADER, DiagnosticsRow, PotentialSpec,
                       RQuadratic, SavState, SchemeParams,
                       compute_R_quadratic, gl_energy, modified_energy,
                       q_functional, quartic_double_well, rsav_step,
                       select_zeta, unit_double_well)
from .io_cli import (GrayscaleImage, RunConfig, cli_dispatch,
                     default_app_config, emit_field_snapshot, emit_line_plot,
                     execute_run, image_to_field, load_config, main,
                     read_pgm, synthetic_image, validate_config, write_pgm)

__version__ = "0.1.0"
