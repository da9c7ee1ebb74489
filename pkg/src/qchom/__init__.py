"""qchom: quasicrystal homogenization at desk scale.

Cut-and-project maps with a diophantine gate, constant-rank differential
constraints and their lifted torus symbols, spectral projection onto the
admissible corrector space, cell-problem solvers for quadratic and convex
energies, and a numerical laboratory for slice two-scale convergence.
"""

__version__ = "0.1.0"

from .cell import (CellSolution, EffectiveTensor, EnergyDensity, StepRule,
                   convex_density, effective_tensor, f_hom_table,
                   isotropic_quadratic, quadratic_density, solve_cell_convex,
                   solve_cell_quadratic)
from .cutproject import (CellLattice, CutProjectMap, DiophantineReport,
                         QuasiperiodicField, alcufe_map, check_diophantine,
                         ergodic_mean, golden_ratio_map, identity_map,
                         penrose_demo, penrose_map, sample_slice, unit_cell,
                         write_pgm)
from .errors import (ConfigError, InternalError, InvalidInputError,
                     MapValidationError, QchomError, UnsupportedDemoError)
from .fourier import (ProjectionStats, SpectralField, field_from_coeffs,
                      field_from_values, forward_transform, load_field,
                      project_AR_free, rms, save_field, synthesize_G_R,
                      truncate)
from .operators import (OperatorSpec, RankReport, check_constant_rank,
                        kernel_projector, lifted_symbol, preset, symbol)
from .twoscale import (ConvergenceReport, Domain, PairingExperiment,
                       TrigFunction, TrigTerm, direct_1d_experiment,
                       limit_pairing, oscillatory_pairing, synthesize_recovery,
                       term)

__all__ = [name for name in dir() if not name.startswith("_")]
