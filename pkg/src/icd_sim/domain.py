"""Decision vectors, box decision sets and Euclidean projection."""

from dataclasses import dataclass

import numpy as np


class ConfigurationError(ValueError):
    """Raised when inputs are structurally inconsistent (shapes, ranges)."""


def as_vector(v, dim=None, name="vector"):
    """Return `v` as a finite 1-D float64 array, optionally of length `dim`."""
    arr = np.atleast_1d(np.asarray(v, dtype=np.float64))
    if arr.ndim != 1:
        raise ConfigurationError(f"{name} must be one-dimensional, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise ConfigurationError(f"{name} has dimension {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name} has non-finite coordinates")
    return arr


@dataclass(frozen=True)
class BoxSet:
    """Axis-aligned box ``{x : lower <= x <= upper}`` with nonempty interior."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = as_vector(self.lower, name="box lower")
        upper = as_vector(self.upper, dim=lower.shape[0], name="box upper")
        if not np.all(lower < upper):
            raise ConfigurationError("box requires lower[p] < upper[p] for every coordinate")
        lower.flags.writeable = False
        upper.flags.writeable = False
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @classmethod
    def cube(cls, low, high, dim=1):
        return cls(np.full(dim, float(low)), np.full(dim, float(high)))

    @property
    def dim(self):
        return self.lower.shape[0]

    def corners(self):
        """All 2**D corner points, shape (2**D, D)."""
        grids = np.meshgrid(*zip(self.lower, self.upper), indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=-1)

    def contains(self, x, atol=0.0):
        x = np.asarray(x, dtype=np.float64)
        return bool(np.all(x >= self.lower - atol) and np.all(x <= self.upper + atol))


def project(v, box):
    """Euclidean projection of `v` onto `box` (coordinate-wise clamp).

    Works on a single vector of shape (D,) or a stack of shape (..., D).
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != box.dim:
        raise ConfigurationError(f"dimension mismatch: vector has {v.shape[-1]}, box has {box.dim}")
    return np.clip(v, box.lower, box.upper)


def norm2(v):
    return float(np.sqrt(np.sum(np.square(np.asarray(v, dtype=np.float64)))))
