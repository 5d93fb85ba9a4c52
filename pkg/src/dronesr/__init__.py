"""Drone burst super-resolution toolkit: registration, analysis, metrics,
and an altitude-conditioned SR network, all in numpy (numba-accelerated
kernels with a pure-numpy fallback, selected by the DSRF_NUMBA env var).
"""

__version__ = "0.1.0"

from .errors import (DroneSRError, EstimationFailureError, InvalidInputError,
                     PointAtInfinityError, RegistrationFailureError,
                     UndefinedCorrelationError)
from .imgcore import BayerRaw, Image, pack_bayer, resize_bicubic, rgb_to_y
from .geometry import Homography, estimate_homography_dlt, ransac_homography

__all__ = [
    "BayerRaw", "DroneSRError", "EstimationFailureError", "Homography",
    "Image", "InvalidInputError", "PointAtInfinityError",
    "RegistrationFailureError", "UndefinedCorrelationError",
    "estimate_homography_dlt", "pack_bayer", "ransac_homography",
    "resize_bicubic", "rgb_to_y", "__version__",
]
