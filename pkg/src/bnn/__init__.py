"""Multiplicative-noise variational inference for small neural networks.

Bernoulli/Gaussian dropout and dropconnect plus spike-and-slab dropout,
Monte-Carlo predictive inference and calibration metrics, all on numpy.
"""

__version__ = "0.1.0"

from .errors import BnnError, ConfigError, DataError, DimensionError, NumericError, ParameterError
from .masks import MaskKind, MaskSpec, mask_moments, mean_mask, sample_mask, sigma_dc_squared
from .tensor import Rng, matmul, rng_normal, softmax

__all__ = [
    "BnnError",
    "ConfigError",
    "DataError",
    "DimensionError",
    "MaskKind",
    "MaskSpec",
    "NumericError",
    "ParameterError",
    "Rng",
    "mask_moments",
    "matmul",
    "mean_mask",
    "rng_normal",
    "sample_mask",
    "sigma_dc_squared",
    "softmax",
]
