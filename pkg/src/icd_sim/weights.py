"""Gradient-weight schedules and the symmetric-learning / bounded-update checks.

A schedule stores one block of weights per cycle with shape ``(delta, S, C)``,
or ``(delta, S, C, D)`` when every coordinate carries its own weights.
Cycles beyond the stored ones reuse the blocks periodically, so a constant
schedule is a single stored cycle.

Both conditions are defined over the aggregate of a cycle (a window of
``delta`` steps). The validators optionally report the per-step value,
i.e. the window aggregate divided by ``delta``; for a schedule that repeats
one matrix every step this is the plain column sum of that matrix.
"""

from dataclasses import dataclass, field

import numpy as np

from .domain import ConfigurationError

MODES = ("constant", "schedule", "random_signed", "coordinate_wise", "partition")


class WeightError(ConfigurationError):
    pass


class UnequalColumnSums(WeightError):
    def __init__(self, clients, cycle, sums):
        self.clients = [int(c) for c in clients]
        self.cycle = cycle
        self.sums = sums
        super().__init__(
            f"symmetric learning condition (SLC) violated in cycle {cycle}: column sums differ "
            f"for clients {[c + 1 for c in self.clients]} (sums {np.round(sums, 12).tolist()})"
        )


class NonPositiveM(WeightError):
    pass


class InfeasibleBudget(WeightError):
    pass


class EmptyAssignment(WeightError):
    pass


@dataclass(frozen=True)
class WeightSchedule:
    entries: np.ndarray
    mode: str = "schedule"
    M: float | None = None  # declared per-window SLC constant
    Mbar: float | None = None  # declared per-window BUC budget
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.array(self.entries, dtype=np.float64)
        if w.ndim == 3:  # one cycle given as (delta, S, C)
            w = w[None]
        if w.ndim not in (4, 5):
            raise WeightError(f"weight entries need shape (cycles, delta, S, C[, D]), got {w.shape}")
        if min(w.shape) < 1:
            raise WeightError(f"weight entries have an empty axis: {w.shape}")
        if not np.all(np.isfinite(w)):
            raise WeightError("weight entries contain non-finite values")
        if self.mode not in MODES:
            raise WeightError(f"unknown weight mode {self.mode!r}")
        w.flags.writeable = False
        object.__setattr__(self, "entries", w)

    @classmethod
    def constant(cls, matrix, delta, **kw):
        m = np.asarray(matrix, dtype=np.float64)
        return cls(np.broadcast_to(m, (1, delta) + m.shape).copy(), mode="constant", **kw)

    @property
    def cycles(self):
        return self.entries.shape[0]

    @property
    def delta(self):
        return self.entries.shape[1]

    @property
    def servers(self):
        return self.entries.shape[2]

    @property
    def clients(self):
        return self.entries.shape[3]

    @property
    def coordinate_wise(self):
        return self.entries.ndim == 5

    def cycle(self, k):
        return self.entries[k % self.cycles]

    def window_sums(self):
        """Column sums of the window aggregate, shape (cycles, C[, D])."""
        return self.entries.sum(axis=(1, 2))

    def window_abs_sums(self):
        return np.abs(self.entries).sum(axis=(1, 2))

    def masked(self, mask):
        """Copy with entries zeroed where ``mask`` (broadcastable) is False."""
        mask = np.asarray(mask, dtype=bool)
        w = np.where(self._expand(mask), self.entries, 0.0)
        return WeightSchedule(w, mode=self.mode, M=self.M, Mbar=self.Mbar, meta=dict(self.meta))

    def _expand(self, mask):
        if self.coordinate_wise and mask.ndim == self.entries.ndim - 1:
            mask = mask[..., None]
        return mask

    def to_nested(self):
        return self.entries.tolist()


def validate_slc(schedule, tol=1e-9, per_step=False):
    """Common column sum M of every cycle's window aggregate.

    For coordinate-wise schedules the condition is checked for every
    coordinate with a single common M. Raises `UnequalColumnSums` naming the
    offending clients and `NonPositiveM` when the common sum is not positive.
    """
    sums = schedule.window_sums()  # (K, C[, D])
    ref = sums.reshape(sums.shape[0], -1)[:, 0]
    M = float(ref[0])
    for k in range(sums.shape[0]):
        dev = np.abs(sums[k] - M)
        if np.any(dev > tol):
            bad = dev if dev.ndim == 1 else dev.max(axis=-1)
            raise UnequalColumnSums(np.flatnonzero(bad > tol), k, sums[k])
    if M <= tol:
        raise NonPositiveM(f"symmetric learning condition (SLC) needs M > 0, got M={M}")
    return M / schedule.delta if per_step else M


def validate_buc(schedule, per_step=False):
    """Largest column sum of absolute weights over a window (measured M̄)."""
    mbar = float(schedule.window_abs_sums().max())
    return mbar / schedule.delta if per_step else mbar


def check_buc(schedule, budget, tol=1e-9):
    """Raise if any client's absolute window sum exceeds `budget`."""
    abs_sums = schedule.window_abs_sums()
    flat = abs_sums if abs_sums.ndim == 2 else abs_sums.max(axis=-1)
    over = np.argwhere(flat > budget + tol)
    if over.size:
        k, h = over[0]
        raise WeightError(
            f"bounded update condition (BUC) exceeded for client {h + 1} in cycle {k}: "
            f"{flat[k, h]:.12g} > {budget:.12g}"
        )


def _rng(seed):
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def _fill_column(rng, n, M, Mbar, gamma, tries=64):
    """Draw `n` weights summing to M with absolute sum <= Mbar.

    All but the last weight are uniform on [-gamma, gamma]; the last closes
    the sum. Rejected draws are retried, halving gamma every 8 attempts; as
    a last resort nonnegative weights are used, which always fit M <= Mbar.
    """
    if n == 1:
        return np.array([M])
    g = gamma
    for attempt in range(tries):
        if attempt and attempt % 8 == 0:
            g *= 0.5
        w = rng.uniform(-g, g, size=n)
        w[-1] = M - w[:-1].sum()
        if np.abs(w).sum() <= Mbar:
            return w
    w = rng.uniform(0.0, M / n, size=n)
    w[-1] = M - w[:-1].sum()
    return w


def generate_random_signed(S, C, delta, M, Mbar, seed, cycles=1, mask=None, dim=None):
    """Random signed schedule meeting SLC with window sum `M` and BUC budget `Mbar`.

    `M` and `Mbar` are window (per-cycle) aggregates. `mask`, a boolean array
    of shape ``(delta, S, C)`` or ``(cycles, delta, S, C)``, restricts nonzero
    weights to linked server/client pairs. With `dim` set, independent
    weights are drawn for every coordinate.
    """
    if M <= 0:
        raise NonPositiveM(f"M must be positive, got {M}")
    if Mbar < M:
        raise InfeasibleBudget(f"BUC budget {Mbar} is below SLC sum {M}; |sum w| <= sum |w| makes this infeasible")
    if min(S, C, delta, cycles) < 1:
        raise WeightError("S, C, delta and cycles must all be >= 1")
    rng = _rng(seed)
    gamma = Mbar / (2.0 * delta * S)
    coords = 1 if dim is None else dim
    out = np.zeros((cycles, delta, S, C, coords))
    if mask is None:
        mask = np.ones((delta, S, C), dtype=bool)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), (cycles, delta, S, C))
    for k in range(cycles):
        for h in range(C):
            allowed = np.flatnonzero(mask[k, :, :, h].ravel())
            if allowed.size == 0:
                raise WeightError(f"client {h + 1} has no server link in cycle {k}; cannot satisfy SLC")
            for p in range(coords):
                col = np.zeros(delta * S)
                col[allowed] = _fill_column(rng, allowed.size, M, Mbar, gamma)
                out[k, :, :, h, p] = col.reshape(delta, S)
    entries = out if dim is not None else out[..., 0]
    mode = "coordinate_wise" if dim is not None else "random_signed"
    return WeightSchedule(entries, mode=mode, M=M, Mbar=Mbar, meta={"gamma": gamma})


def generate_partition(S, C, delta, assignment):
    """0/1 schedule sending every (virtual) client to exactly one server.

    `assignment[h]` is the server index of client h. Every server must
    receive at least one client. Each client weight is 1 per step, so the
    window SLC sum is `delta`.
    """
    assignment = list(assignment)
    if len(assignment) != C:
        raise EmptyAssignment(f"assignment covers {len(assignment)} clients, expected {C}")
    W = np.zeros((S, C))
    for h, J in enumerate(assignment):
        if not 0 <= int(J) < S:
            raise EmptyAssignment(f"client {h + 1} assigned to nonexistent server {J}")
        W[int(J), h] = 1.0
    empty = np.flatnonzero(W.sum(axis=1) == 0)
    if empty.size:
        raise EmptyAssignment(f"servers {[j + 1 for j in empty]} receive no client partition")
    sched = WeightSchedule.constant(W, delta, M=float(delta), Mbar=float(delta))
    return WeightSchedule(sched.entries, mode="partition", M=float(delta), Mbar=float(delta),
                          meta={"assignment": [int(a) for a in assignment]})


def mask_zero_gradient(uploads, bound, seed):
    """Replace all-zero uploads of one client by nonzero vectors summing to zero.

    `uploads` has shape (n_servers, D). The replacements are scaled dyadic
    integers, so their sum is exactly zero in floating point, and each has
    norm at most `bound`. With a single server the zero vector is returned
    unchanged, since no nonzero decomposition exists.
    """
    uploads = np.asarray(uploads, dtype=np.float64)
    n, D = uploads.shape
    if n < 2:
        return np.zeros_like(uploads)
    rng = _rng(seed)
    while True:
        ints = rng.integers(-(2**20), 2**20 + 1, size=(n, D))
        ints[-1] = -ints[:-1].sum(axis=0)
        if np.all(np.any(ints != 0, axis=1)):
            break
    biggest = np.max(np.linalg.norm(ints.astype(np.float64), axis=1))
    scale = 2.0 ** np.floor(np.log2(bound / biggest))
    return ints.astype(np.float64) * scale
