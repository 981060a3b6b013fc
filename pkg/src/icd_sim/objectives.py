"""Client objectives, their gradients and the bound constants used by the analysis."""

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .domain import ConfigurationError, as_vector


@dataclass(frozen=True)
class QuadraticObjective:
    """``f(x) = scale * ||x - center||**2`` with ``scale > 0``."""

    center: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        center = as_vector(self.center, name="objective center")
        center.flags.writeable = False
        object.__setattr__(self, "center", center)
        if not (np.isfinite(self.scale) and self.scale > 0):
            raise ConfigurationError(f"objective scale must be positive, got {self.scale}")
        object.__setattr__(self, "scale", float(self.scale))

    @property
    def dim(self):
        return self.center.shape[0]

    @property
    def lipschitz(self):
        return 2.0 * self.scale

    def value(self, x):
        d = np.asarray(x, dtype=np.float64) - self.center
        return self.scale * np.sum(d * d, axis=-1)

    def grad(self, x):
        return 2.0 * self.scale * (np.asarray(x, dtype=np.float64) - self.center)


@dataclass(frozen=True)
class GradientObjective:
    """User-supplied objective given as value/gradient callables.

    The caller declares the gradient bound and Lipschitz constant; they are
    sanity-checked on a sample grid of the decision set by `compute_bounds`.
    """

    value_fn: Callable[[np.ndarray], float]
    grad_fn: Callable[[np.ndarray], np.ndarray]
    dim: int
    grad_bound: float
    lipschitz: float

    def value(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return float(self.value_fn(x))
        return np.array([self.value_fn(row) for row in x.reshape(-1, self.dim)]).reshape(x.shape[:-1])

    def grad(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 1:
            return np.asarray(self.grad_fn(x), dtype=np.float64)
        rows = [np.asarray(self.grad_fn(row), dtype=np.float64) for row in x.reshape(-1, self.dim)]
        return np.stack(rows).reshape(x.shape)


@dataclass(frozen=True)
class ObjectiveBounds:
    grad_bounds: tuple  # L_h per client
    lipschitz: tuple  # N_h per client

    @property
    def L_sum(self):
        return float(sum(self.grad_bounds))

    @property
    def N_sum(self):
        return float(sum(self.lipschitz))


def gradient(f, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != f.dim:
        raise ConfigurationError(f"dimension mismatch: point has {x.shape[-1]}, objective has {f.dim}")
    return f.grad(x)


def _grad_sup(f, box):
    if isinstance(f, QuadraticObjective):
        # ||g|| is convex in x, so its maximum over a box sits at a corner.
        return float(np.max(np.linalg.norm(f.grad(box.corners()), axis=-1)))
    rng = np.random.default_rng(0)
    pts = np.concatenate([box.corners(), rng.uniform(box.lower, box.upper, size=(512, box.dim))])
    return float(np.max(np.linalg.norm(f.grad(pts), axis=-1)))


def compute_bounds(objectives, box, declared_L=None):
    """Gradient bounds L_h over `box` and Lipschitz constants N_h.

    `objectives` may be a single objective or a sequence. If `declared_L` is
    given, any declared value below the computed supremum is rejected.
    """
    single = not isinstance(objectives, Sequence)
    objs = [objectives] if single else list(objectives)
    Ls, Ns = [], []
    for h, f in enumerate(objs):
        if f.dim != box.dim:
            raise ConfigurationError(f"objective {h} has dimension {f.dim}, box has {box.dim}")
        sup = _grad_sup(f, box)
        if isinstance(f, GradientObjective):
            if f.grad_bound < sup - 1e-9:
                raise ConfigurationError(
                    f"declared gradient bound {f.grad_bound} for objective {h} is below sampled sup {sup}"
                )
            sup = float(f.grad_bound)
        Ls.append(sup)
        Ns.append(float(f.lipschitz))
    if declared_L is not None:
        for h, (dec, got) in enumerate(zip(declared_L, Ls)):
            if dec < got - 1e-9:
                raise ConfigurationError(
                    f"gradient bound violated: declared L_{h + 1}={dec} < sup {got}"
                )
    return ObjectiveBounds(tuple(Ls), tuple(Ns))


def evaluate_sum(objectives, x):
    if len(objectives) == 0:
        raise ConfigurationError("objective list is empty")
    return float(sum(float(f.value(x)) for f in objectives))


def gradient_sum(objectives, x):
    return sum(f.grad(x) for f in objectives)


def split_quadratic(f, parts, rng, spread=1.0):
    """Split a quadratic into `parts` quadratics whose sum equals `f` up to a constant.

    Each part keeps scale ``f.scale / parts`` and gets a center offset drawn
    from ``U[-spread, spread]``; offsets are mean-centered so the summed
    gradients reproduce ``f.grad`` exactly in real arithmetic.
    """
    offsets = rng.uniform(-spread, spread, size=(parts, f.dim))
    offsets -= offsets.mean(axis=0)
    return [QuadraticObjective(f.center + off, f.scale / parts) for off in offsets]
