from ..model.params import ModelParams
from ..partition import EpaParams
from .estimators import (BatchTerms, batch_terms, grad_phi_estimate, grad_theta_estimate,
                         iwae_estimate, observation_distances)
from .fit import FitAborted, FitTrace, VIConfig, fit
from .transforms import (constrain_epa, constrain_model, epa_grad_to_unconstrained,
                         model_jacobian, unconstrain_epa, unconstrain_model)


def unconstrain(params):
    """Unconstrained coordinates of model or EPA parameters."""
    if isinstance(params, EpaParams):
        return unconstrain_epa(params)
    return unconstrain_model(params)


def constrain(u, like):
    """Inverse of :func:`unconstrain`; ``like`` picks the parameter family."""
    if isinstance(like, EpaParams) or like == "epa":
        return constrain_epa(u)
    return constrain_model(u, like)


__all__ = [
    "BatchTerms", "FitAborted", "FitTrace", "VIConfig", "batch_terms", "constrain",
    "constrain_epa", "constrain_model", "epa_grad_to_unconstrained", "fit",
    "grad_phi_estimate", "grad_theta_estimate", "iwae_estimate", "model_jacobian",
    "observation_distances", "unconstrain", "unconstrain_epa", "unconstrain_model",
]
