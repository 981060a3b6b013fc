"""Ground-truth solutions for the aggregate problem, independent of the engine."""

from dataclasses import dataclass

import numpy as np

from .domain import ConfigurationError, project
from .objectives import QuadraticObjective, evaluate_sum, gradient_sum

METHODS = ("closed_form", "centralized_pgd", "grid")


@dataclass(frozen=True)
class OracleSolution:
    xstar: np.ndarray
    fstar: float
    method: str
    trajectory: np.ndarray | None = None  # (steps+1, D) for centralized_pgd


def solve_closed_form(quadratics, box):
    """Minimizer of a sum of isotropic quadratics over a box.

    The sum is again an isotropic quadratic centered at ``sum(a c) / sum(a)``,
    so projecting that point onto the box is exact.
    """
    if not quadratics:
        raise ConfigurationError("objective list is empty")
    if not all(isinstance(f, QuadraticObjective) for f in quadratics):
        raise ConfigurationError("closed form needs quadratic objectives")
    a = np.array([f.scale for f in quadratics])
    c = np.stack([f.center for f in quadratics])
    x = project(a @ c / a.sum(), box)
    return OracleSolution(x, evaluate_sum(quadratics, x), "closed_form")


def solve_centralized_pgd(objectives, box, steps, schedule, x0=None):
    """Plain projected gradient descent on the summed objective.

    `schedule` maps the 1-based step number to a step size (a
    `StepSizeSchedule` or anything with ``values(n)``).
    """
    x = np.zeros(box.dim) if x0 is None else project(np.asarray(x0, dtype=np.float64), box)
    alphas = schedule.values(steps)
    traj = np.empty((steps + 1, box.dim))
    traj[0] = x
    for t in range(steps):
        x = project(x - alphas[t] * gradient_sum(objectives, x), box)
        traj[t + 1] = x
    return OracleSolution(x, evaluate_sum(objectives, x), "centralized_pgd", traj)


def solve_grid(objectives, box, points=20001):
    """Brute-force scan over a regular grid; only practical for D <= 2."""
    if box.dim > 2:
        raise ConfigurationError("grid oracle supports D <= 2")
    axes = [np.linspace(lo, hi, points) for lo, hi in zip(box.lower, box.upper)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, box.dim)
    vals = sum(f.value(grid) for f in objectives)
    x = grid[int(np.argmin(vals))]
    return OracleSolution(x, evaluate_sum(objectives, x), "grid")


def distance_to_optimum(x, solution):
    return float(np.linalg.norm(np.asarray(x) - solution.xstar, axis=-1).max())
