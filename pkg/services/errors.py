"""Error hierarchy shared by every PoBO service."""

from typing import Any, Dict, Optional


class PoboError(Exception):
    """Base error; carries a JSON-ready details payload."""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message)
        self.message = message
        self.details = details or {}

    def to_dict(self) -> Dict[str, Any]:
        return {'message': self.message, **self.details}


class ModelError(PoboError):
    """Invalid uncertainty model or dimension mismatch."""


class SamplingError(PoboError):
    """Rejection sampling could not fill its quota."""


class BasisError(PoboError):
    """Gram matrix too ill-conditioned to orthonormalise."""


class QuadratureError(PoboError):
    """Quadrature residual stayed above tolerance."""


class FitError(PoboError):
    """Surrogate design matrix is rank deficient."""


class KinshipError(PoboError):
    """Kinship SDP failed or kinship evaluated outside [-1, inf)."""


class ScalingError(PoboError):
    """Scaled yield metric fell below -1."""


class InfeasibleProblemError(PoboError):
    """No design satisfies the (reformulated) chance constraints."""


class SpectrumError(PoboError):
    """Spectral metric undefined on the simulated grid."""


class ConfigError(PoboError):
    """Experiment configuration could not be loaded."""
