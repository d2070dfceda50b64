"""Small input-validation helpers shared by the estimator classes and the functional core."""

import numpy as np

from .exceptions import ConfigInvalid


def as_array(x, shape=None, name="array", dtype=np.float64):
    """Convert to a float ndarray, optionally enforcing a shape.

    `shape` entries of -1 match any extent.
    """
    a = np.asarray(x, dtype=dtype)
    if shape is not None:
        if a.ndim != len(shape):
            raise ValueError(f"{name}: expected {len(shape)} dims, got shape {a.shape}")
        for want, got in zip(shape, a.shape):
            if want != -1 and want != got:
                raise ValueError(f"{name}: expected shape {tuple(shape)}, got {a.shape}")
    return a


def check_finite(a, name="array"):
    a = np.asarray(a)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains non-finite values")
    return a


def check_positive(value, name):
    if not value > 0:
        raise ConfigInvalid(f"{name} must be > 0, got {value}")
    return value


def check_in_unit_interval(value, name):
    if not 0.0 <= value <= 1.0:
        raise ConfigInvalid(f"{name} must be in [0, 1], got {value}")
    return value


def check_probability_rates(**rates):
    for name, value in rates.items():
        check_in_unit_interval(value, name)
