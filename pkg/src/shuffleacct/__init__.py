"""Privacy accounting for the shuffle model with discrete privacy loss distributions."""

from .accountant import (AccountantConfig, ComposedDensity, DeltaForm, DeltaRangeError,
                         WrapAroundWarning, compose, delta_at, delta_curve, discretize,
                         epsilon_for_delta, exact_delta_single, naive_compose, round_grid_size)
from .clones import (ClonesParams, build_clones_pld, build_clones_pld_full,
                     build_subsampled_clones_pld, loss_value, p0_mass, p1_mass, subsampled_loss)
from .krr import (Adversary, AnalyticEpsilon, JointModel, KrrParams, balle_analytic_epsilon,
                  blanket_joint_mass, build_krr_pld, build_krr_strong_pld, build_krr_weak_pld,
                  weak_loss_bound)
from .oracles import (McEstimate, ViewEnumerationResult, closed_form_gaussian_delta,
                      gaussian_shuffle_mc, krr_view_enumeration, krr_view_pld)
from .pld import (DiscretePLD, Direction, LossAtom, ResourceLimitError, ValidationReport,
                  coalesce, from_csv, to_csv, validate)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
