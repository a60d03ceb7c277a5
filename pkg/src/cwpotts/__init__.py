"""Glauber dynamics for the mean-field (Curie-Weiss) Potts model.

Submodules:

* ``model``      -- parameters, states, tilt/drift/rate functions
* ``constants``  -- critical and spinodal temperatures, drift landscape, mixing constants
* ``exact``      -- the exact lumped chain and its total-variation profiles
* ``simulate``   -- Monte Carlo runs of the lumped and configuration chains
* ``couplings``  -- couplings of two chains and coalescence bounds
* ``cli``        -- the ``cwpotts`` command line
"""
from .model import (InvalidInput, ModelParams, OutOfDomain, ProportionsVector, TooLarge,
                    coordinate_drift_exact, gibbs_log_weight, proportions_of, rate_function,
                    site_update_distribution, tilt, worst_case_drift)
from .constants import (alpha1, beta_c, beta_s, critical_points, max_drift, ordered_phase_vector,
                        passage_schedule, psi_passage_time, regime_classify, tangency_expansion)

__version__ = "0.1.0"

__all__ = [
    "InvalidInput", "ModelParams", "OutOfDomain", "ProportionsVector", "TooLarge",
    "coordinate_drift_exact", "gibbs_log_weight", "proportions_of", "rate_function",
    "site_update_distribution", "tilt", "worst_case_drift",
    "alpha1", "beta_c", "beta_s", "critical_points", "max_drift", "ordered_phase_vector",
    "passage_schedule", "psi_passage_time", "regime_classify", "tangency_expansion",
]
