"""Set-membership estimation for linear systems with bounded disturbances."""

from .sim import (DisturbanceModel, IidInput, PerturbedFeedback, SystemModel, Trajectory,
                  q_w_eval, sample_disturbance, simulate)
from .membership import (MembershipSet, estimate_wmax_lower, point_estimate, prune_redundant,
                         sme_contains, sme_diameter, sme_update, ucb_sme_fit)
from .lse import ay_region, fit_lse, lse_region_diameter
from .bounds import (BmsbParams, choose_m, covering_bound, derive_constants, sme_failure_bound,
                     wmax_failure_bound)

__version__ = "0.1.0"

__all__ = [
    "DisturbanceModel", "IidInput", "PerturbedFeedback", "SystemModel", "Trajectory",
    "q_w_eval", "sample_disturbance", "simulate",
    "MembershipSet", "estimate_wmax_lower", "point_estimate", "prune_redundant",
    "sme_contains", "sme_diameter", "sme_update", "ucb_sme_fit",
    "ay_region", "fit_lse", "lse_region_diameter",
    "BmsbParams", "choose_m", "covering_bound", "derive_constants", "sme_failure_bound",
    "wmax_failure_bound",
]
