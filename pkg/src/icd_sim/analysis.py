"""Metrics on traces and per-cycle evaluation of the convergence inequalities.

Every residual is ``RHS - LHS`` of the corresponding inequality, so a
negative value is a violation. Budgets ``M`` and ``Mbar`` enter as window
aggregates (sums over the delta steps of a cycle).
"""

from dataclasses import dataclass

import numpy as np

from .objectives import compute_bounds
from .topology import scrambling_coefficient

DELTA_TOL = 1e-9
NONEXPANSIVE_TOL = 1e-9
CYCLE_TOL = 1e-6


class NotScrambling(ValueError):
    pass


class ModeMismatch(ValueError):
    pass


@dataclass(frozen=True)
class CycleMetrics:
    xbar: np.ndarray
    delta: np.ndarray  # (S, D), rows sum to zero
    max_delta: float
    eta_sq: float
    f_gap: float
    max_pairwise: float


def server_mean(x):
    """Average over the server axis (-2), exact when all servers agree."""
    ref = x[..., :1, :]
    return ref[..., 0, :] + np.mean(x - ref, axis=-2)


def _f(objectives, x):
    return sum(f.value(x) for f in objectives)


def max_pairwise(states):
    """Largest distance between any two rows of (..., S, D)."""
    diff = states[..., :, None, :] - states[..., None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1)).max(axis=(-1, -2))


def compute_cycle_metrics(trace, k, y, fstar=None):
    x = trace.boundary[k]
    y = np.asarray(y, dtype=np.float64)
    xbar = server_mean(x)
    delta = x - xbar
    objs = trace.config.objectives
    ref = _f(objs, y) if fstar is None else fstar
    return CycleMetrics(
        xbar=xbar,
        delta=delta,
        max_delta=float(np.linalg.norm(delta, axis=1).max()),
        eta_sq=float(np.sum((x - y) ** 2)),
        f_gap=float(_f(objs, xbar) - ref),
        max_pairwise=float(max_pairwise(x)),
    )


def metrics_table(trace, y, fstar=None):
    """The per-boundary metric columns for k = 0..K as arrays."""
    x = trace.boundary
    y = np.asarray(y, dtype=np.float64)
    xbar = server_mean(x)
    objs = trace.config.objectives
    ref = _f(objs, y) if fstar is None else fstar
    return {
        "k": np.arange(x.shape[0]),
        "err_norm": np.linalg.norm(xbar - y, axis=-1),
        "eta_sq": np.sum((x - y) ** 2, axis=(1, 2)),
        "max_delta": np.linalg.norm(x - xbar[:, None, :], axis=-1).max(axis=1),
        "max_pairwise": max_pairwise(x),
        "f_gap": _f(objs, xbar) - ref,
    }


@dataclass(frozen=True)
class BoundConstants:
    S: int
    C: int
    delta: int
    M: float  # window
    Mbar: float  # window
    L: tuple
    N: tuple
    nu: float
    mp0: float  # initial max pairwise disagreement

    @property
    def L_sum(self):
        return float(sum(self.L))

    @property
    def N_sum(self):
        return float(sum(self.N))

    @property
    def C2_sq(self):
        return 4.0 * (self.Mbar * self.L_sum) ** 2

    @property
    def C3_sq(self):
        return 2.0 * self.Mbar ** 2 * self.N_sum * self.L_sum

    @property
    def C4(self):
        return self.Mbar * (2.0 * self.L_sum + self.N_sum)

    @property
    def F(self):
        return self.N_sum + 4.0 * self.C * self.delta * self.L_sum

    def gamma(self, alpha, max_delta):
        return (2 * alpha ** 2 * self.Mbar ** 2 * self.N_sum * self.L_sum
                + alpha * self.Mbar * self.N_sum * max_delta) / self.S

    def per_step(self):
        """Same constants with budgets read per step instead of per window."""
        return BoundConstants(self.S, self.C, self.delta, self.M / self.delta, self.Mbar / self.delta,
                              self.L, self.N, self.nu, self.mp0)

    @classmethod
    def from_trace(cls, trace):
        cfg, info = trace.config, trace.report.info
        b = compute_bounds(cfg.objectives, cfg.box)
        used = sorted(set(int(i) for i in trace.consensus_index))
        nu = max(scrambling_coefficient(cfg.consensus[i].B) for i in used)
        return cls(cfg.servers, cfg.clients, cfg.delta, float(info["M_window"]), float(info["Mbar_window"]),
                   b.grad_bounds, b.lipschitz, nu, float(max_pairwise(trace.boundary[0])))


def _abs_weights(W):
    """|W| collapsed over coordinates (largest per entry) to shape (delta, S, C)."""
    A = np.abs(W)
    return A.max(axis=-1) if A.ndim == 4 else A


def C1_sq(W, L):
    """Sum over steps and servers of (sum_h |W[J,h]| L_h)**2 for one cycle."""
    return float(np.sum((_abs_weights(W) @ np.asarray(L)) ** 2))


def disagreement_bound(k, constants, alphas):
    """Bound on ``max_J ||delta^J_{k+1}||`` after the consensus ending cycle k (0-based).

    ``alphas[j]`` is the step size of the cycle leaving boundary j; the sum
    runs over every cycle up to and including k.
    """
    c = constants
    if c.nu >= 1.0:
        raise NotScrambling(f"consensus matrix is not scrambling (nu={c.nu:.6g})")
    j = np.arange(k + 1)
    tail = np.sum(np.asarray(alphas[:k + 1]) * c.nu ** (k - j + 1)) if c.nu > 0 else 0.0
    return (c.S - 1) / c.S * (c.nu ** (k + 1) * c.mp0 + 4 * c.Mbar * c.L_sum * tail)


def disagreement_bounds(constants, alphas):
    """`disagreement_bound` for every k at once via the recursion b_{k} = nu (b_{k-1} + a_k)."""
    c = constants
    if c.nu >= 1.0:
        raise NotScrambling(f"consensus matrix is not scrambling (nu={c.nu:.6g})")
    acc, out = 0.0, np.empty(len(alphas))
    for k, a in enumerate(alphas):
        acc = c.nu * (acc + a)
        out[k] = acc
    powers = c.nu ** np.arange(1, len(alphas) + 1)
    return (c.S - 1) / c.S * (powers * c.mp0 + 4 * c.Mbar * c.L_sum * out)


def consensus_residual(trace, k, y):
    """``sum_J ||x_{delta,k} - y||^2 - sum_J ||x_{0,k+1} - y||^2``."""
    y = np.asarray(y, dtype=np.float64)
    before = trace.states[k, -1]
    after = trace.boundary[k + 1]
    return float(np.sum((before - y) ** 2) - np.sum((after - y) ** 2))


def descent_cycle_residual(trace, k, y, constants=None):
    """Residual of the general one-cycle inequality on ``eta^2`` (any signed W)."""
    c = constants or BoundConstants.from_trace(trace)
    y = np.asarray(y, dtype=np.float64)
    x, x1 = trace.boundary[k], trace.boundary[k + 1]
    a = float(trace.alphas[k])
    xbar = server_mean(x)
    md = float(np.linalg.norm(x - xbar, axis=1).max())
    objs = trace.config.objectives
    eta, eta1 = np.sum((x - y) ** 2), np.sum((x1 - y) ** 2)
    rhs = ((1 + c.gamma(a, md)) * eta
           - 2 * a * c.M * (_f(objs, xbar) - _f(objs, y))
           + a ** 2 * (C1_sq(trace.cycle_weights(k), c.L) + c.C2_sq + c.C3_sq)
           + a * c.C4 * md)
    return float(rhs - eta1)


def _complete_state(trace, k):
    # every row is identical in the complete-graph modes; use server 1
    return trace.boundary[k][0], trace.boundary[k + 1][0]


def _signed_sum(W, L):
    """(delta, S) array of sum_h W[J,h] L_h, coordinate weights collapsed by largest magnitude."""
    if W.ndim == 4:
        idx = np.abs(W).argmax(axis=-1)[..., None]
        W = np.take_along_axis(W, idx, axis=-1)[..., 0]
    return W @ np.asarray(L)


def nonneg_C0_sq(W, L):
    s = _signed_sum(W, L)  # (delta, S)
    before = np.cumsum(s, axis=0) - s  # sum over earlier steps t < i
    return float(np.sum(s ** 2 + 2 * s * before))


def signed_C0_sq(W, L, constants, alpha):
    c = constants
    first = float(np.sum(_signed_sum(W, L) ** 2))
    return (first + 8 * c.delta * (c.Mbar * c.L_sum) ** 2
            + 2 * alpha * (c.Mbar * c.N_sum + c.C * c.delta * (4 * c.Mbar * c.L_sum) ** 2)
            + c.Mbar * c.F)


def complete_graph_residual(trace, k, y, variant=None, constants=None):
    """Residual of the one-cycle inequality for a complete server graph.

    ``variant="nonneg"`` uses the sharper inequality valid for nonnegative
    weights; ``variant="signed"`` the general one. By default the variant
    follows the trace's mode.
    """
    mode = trace.config.mode
    if mode == "general":
        raise ModeMismatch("complete-graph inequality needs a complete-graph mode trace")
    if variant is None:
        variant = "nonneg" if mode == "complete_graph_nonneg_W" else "signed"
    if variant == "nonneg" and mode != "complete_graph_nonneg_W":
        raise ModeMismatch("nonnegative-weight inequality needs a complete_graph_nonneg_W trace")
    if variant not in ("nonneg", "signed"):
        raise ModeMismatch(f"unknown variant {variant!r}")
    c = constants or BoundConstants.from_trace(trace)
    y = np.asarray(y, dtype=np.float64)
    x, x1 = _complete_state(trace, k)
    a = float(trace.alphas[k])
    objs = trace.config.objectives
    W = trace.cycle_weights(k)
    d0, d1 = np.sum((x - y) ** 2), np.sum((x1 - y) ** 2)
    descent = 2 * a * c.M / c.S * (_f(objs, x) - _f(objs, y))
    if variant == "nonneg":
        rhs = d0 - descent + a ** 2 * nonneg_C0_sq(W, c.L) / c.S
    else:
        rhs = (1 + a ** 2 * c.Mbar * c.F / c.S) * d0 - descent + a ** 2 * signed_C0_sq(W, c.L, c, a) / c.S
    return float(rhs - d1)


@dataclass
class BoundReport:
    k: np.ndarray
    alpha: np.ndarray
    disagreement_bound: np.ndarray  # NaN when not scrambling
    observed_delta: np.ndarray  # max_J ||delta_{k+1}||
    consensus_residual: np.ndarray
    cycle_residual: np.ndarray  # general or complete-graph inequality, by mode
    cycle_residual_step: np.ndarray  # general inequality with per-step budgets (general mode only)
    skipped: np.ndarray  # cycles with masked uploads, where the weighted-gradient model does not apply
    mode: str

    def violations(self):
        ok = ~self.skipped
        out = {}
        if np.all(np.isfinite(self.disagreement_bound)):
            out["disagreement"] = int(np.sum(ok & (self.observed_delta > self.disagreement_bound + DELTA_TOL)))
        out["consensus"] = int(np.sum(self.consensus_residual < -NONEXPANSIVE_TOL))
        out["cycle"] = int(np.sum(ok & (self.cycle_residual < -CYCLE_TOL)))
        return out

    @property
    def ok(self):
        return all(v == 0 for v in self.violations().values())


def evaluate_bounds(trace, y):
    """Evaluate every applicable inequality on every cycle of `trace`."""
    c = BoundConstants.from_trace(trace)
    K = trace.cycles
    try:
        bound = disagreement_bounds(c, trace.alphas)
    except NotScrambling:
        bound = np.full(K, np.nan)
    x1 = trace.boundary[1:]
    observed = np.linalg.norm(x1 - server_mean(x1)[:, None, :], axis=-1).max(axis=1)
    cons = np.array([consensus_residual(trace, k, y) for k in range(K)])
    mode = trace.config.mode
    step = np.full(K, np.nan)
    if mode == "general":
        cyc = np.array([descent_cycle_residual(trace, k, y, c) for k in range(K)])
        cs = c.per_step()
        step = np.array([descent_cycle_residual(trace, k, y, cs) for k in range(K)])
    else:
        cyc = np.array([complete_graph_residual(trace, k, y, constants=c) for k in range(K)])
    return BoundReport(np.arange(K), trace.alphas.copy(), bound, observed, cons, cyc, step,
                       trace.mask_events > 0, mode)


@dataclass(frozen=True)
class ConvergenceSummary:
    tol: float
    cycles_to_tol: int | None
    final_gap: float
    final_max_pairwise: float
    final_eta_sq: float
    err_norm: np.ndarray  # ||xbar_{0,k} - x*|| for k = 0..K

    def first_hit(self, tol):
        hit = np.flatnonzero(self.err_norm <= tol)
        return int(hit[0]) if hit.size else None


def convergence_summary(trace, xstar, tol=0.1):
    xstar = np.asarray(xstar, dtype=np.float64)
    xbar = server_mean(trace.boundary)
    err = np.linalg.norm(xbar - xstar, axis=-1)
    hit = np.flatnonzero(err <= tol)
    last = trace.boundary[-1]
    return ConvergenceSummary(
        tol=float(tol),
        cycles_to_tol=int(hit[0]) if hit.size else None,
        final_gap=float(err[-1]),
        final_max_pairwise=float(max_pairwise(last)),
        final_eta_sq=float(np.sum((last - xstar) ** 2)),
        err_norm=err,
    )
