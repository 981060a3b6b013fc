"""Synchronous interleaved loop: delta projected weighted-gradient steps on
every server, then one consensus step, repeated for a number of cycles.

Indexing follows the ``{i, k}`` convention: ``x_{i,k}`` is the state after
``i`` descent steps following ``k`` consensus steps. Boundary states
``x_{0,k}`` are stored for ``k = 0..cycles``; the cycle leaving ``x_{0,k}``
uses step size ``alphas[k]``, which is the schedule's value for cycle
number ``k + 1``.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import topology as topo
from .domain import BoxSet, ConfigurationError, project
from .objectives import QuadraticObjective, compute_bounds
from .weights import WeightError, WeightSchedule, check_buc, mask_zero_gradient, validate_buc, validate_slc

log = logging.getLogger(__name__)

GRAPH_MODES = ("general", "complete_graph", "complete_graph_nonneg_W")


class ValidationError(ConfigurationError):
    """Raised when a configuration fails one or more checks; carries the report."""

    def __init__(self, report):
        self.report = report
        failed = [c for c in report.checks if not c.passed]
        msg = "; ".join(f"{c.name}: {c.detail}" for c in failed) or "validation failed"
        super().__init__(msg)


class NumericFault(ArithmeticError):
    def __init__(self, k, i, server):
        self.k, self.i, self.server = k, i, server
        super().__init__(f"non-finite gradient at iteration {{i={i}, k={k}}} on server {server + 1}")


@dataclass(frozen=True)
class StepSizeSchedule:
    """``alpha(k) = 1 / (k + offset)`` for cycle numbers k = 1, 2, ..., or an explicit sequence."""

    kind: str = "harmonic"
    offset: float = 1e-4
    sequence: tuple = ()

    def __post_init__(self):
        if self.kind not in ("harmonic", "sequence"):
            raise ConfigurationError(f"unknown step-size kind {self.kind!r}")
        if self.kind == "harmonic" and not self.offset > -1:
            raise ConfigurationError("harmonic step size needs offset > -1 so that alpha_1 > 0")

    def alpha(self, k):
        if self.kind == "harmonic":
            return 1.0 / (k + self.offset)
        return float(self.sequence[k - 1])

    def values(self, n):
        if self.kind == "harmonic":
            return 1.0 / (np.arange(1, n + 1, dtype=np.float64) + self.offset)
        if len(self.sequence) < n:
            raise ConfigurationError(f"step-size sequence has {len(self.sequence)} values, {n} cycles requested")
        return np.asarray(self.sequence[:n], dtype=np.float64)

    def check(self, n):
        """Positivity and monotonicity over the horizon. The harmonic family
        has a divergent sum and a summable square by construction."""
        a = self.values(n)
        if np.any(a <= 0):
            return False, "step sizes must be positive"
        if np.any(np.diff(a) > 0):
            return False, "step sizes must be non-increasing"
        return True, "harmonic: divergent sum, summable squares" if self.kind == "harmonic" else "finite sequence"


@dataclass
class Check:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list = field(default_factory=list)
    info: dict = field(default_factory=dict)

    @property
    def ok(self):
        return all(c.passed for c in self.checks)

    def add(self, name, passed, detail=""):
        self.checks.append(Check(name, bool(passed), detail))

    def as_dict(self):
        return {
            "ok": self.ok,
            "checks": [{"name": c.name, "passed": c.passed, "detail": c.detail} for c in self.checks],
            "info": self.info,
        }


@dataclass
class ExperimentConfig:
    objectives: list
    box: BoxSet
    servers: int
    delta: int
    cycles: int
    weights: WeightSchedule
    consensus: list  # of ConsensusMatrix, used per cycle by `consensus_selection`
    step_size: StepSizeSchedule = field(default_factory=StepSizeSchedule)
    consensus_selection: str = "cycle"  # "cycle": k mod len, "random": seeded draw
    links: topo.ClientLinkSchedule | None = None
    initial: np.ndarray | None = None
    seed: int = 0
    mode: str = "general"
    zero_grad_masking: bool = False
    mask_bound: float = 1.0
    name: str = "experiment"
    tolerance: float = 0.1
    source: dict | None = None  # the JSON document this config was built from

    @property
    def dim(self):
        return self.box.dim

    @property
    def clients(self):
        return len(self.objectives)

    def initial_states(self):
        if self.initial is None:
            return np.zeros((self.servers, self.dim))
        x0 = np.asarray(self.initial, dtype=np.float64)
        return np.broadcast_to(x0, (self.servers, self.dim)).copy()

    def link_mask(self, k):
        """Boolean (delta, S, C) link mask for cycle k (all True without a link schedule)."""
        if self.links is None:
            return np.ones((self.delta, self.servers, self.clients), dtype=bool)
        return np.stack([self.links.at(k * self.delta + i) for i in range(self.delta)])

    def effective_weights(self):
        """Weights with unlinked entries forced to zero, materialized per cycle if needed."""
        if self.links is None:
            return self.weights
        period = self.links.period
        # one full period of cycles realigns both the weights and the links
        n = min(self.cycles, int(np.lcm(self.weights.cycles, period // np.gcd(period, self.delta))))
        mask = np.stack([self.link_mask(k) for k in range(n)])
        entries = np.stack([self.weights.cycle(k) for k in range(n)])
        if self.weights.coordinate_wise:
            mask = mask[..., None]
        return WeightSchedule(np.where(mask, entries, 0.0), mode=self.weights.mode,
                              M=self.weights.M, Mbar=self.weights.Mbar, meta=dict(self.weights.meta))

    def consensus_sequence(self):
        """Index into `consensus` for every cycle."""
        n = len(self.consensus)
        if self.consensus_selection == "random" and n > 1:
            rng = np.random.default_rng([self.seed, 1])
            return rng.integers(n, size=self.cycles)
        return np.arange(self.cycles) % n

    def with_overrides(self, **kw):
        return replace(self, **kw)


@dataclass
class ExperimentTrace:
    config: ExperimentConfig
    states: np.ndarray  # (K, delta+1, S, D): states[k, i] = x_{i,k}
    boundary: np.ndarray  # (K+1, S, D): boundary[k] = x_{0,k}
    alphas: np.ndarray  # (K,)
    weights: WeightSchedule  # effective (link-masked) schedule
    consensus_index: np.ndarray  # (K,)
    mask_events: np.ndarray  # (K,) number of masked client uploads per cycle
    report: ValidationReport

    @property
    def cycles(self):
        return self.alphas.shape[0]

    def cycle_weights(self, k):
        return self.weights.cycle(k)

    def consensus_matrix(self, k):
        return self.config.consensus[int(self.consensus_index[k])].B

    @property
    def events(self):
        return self.cycles * self.config.delta + self.cycles


def _is_uniform(B):
    S = B.shape[0]
    return np.allclose(B, 1.0 / S, rtol=0, atol=1e-12)


def validate(config):
    """Run every configuration check; returns a `ValidationReport`."""
    rep = ValidationReport()
    S, C, delta, K = config.servers, config.clients, config.delta, config.cycles
    rep.add("sizes", S >= 1 and C >= 1 and delta >= 1 and K >= 1,
            f"S={S}, C={C}, delta={delta}, cycles={K} (all must be >= 1)")
    if not rep.ok:
        return rep
    dims_ok = all(f.dim == config.dim for f in config.objectives)
    rep.add("dimensions", dims_ok, f"D={config.dim}")
    try:
        bounds = compute_bounds(config.objectives, config.box)
        rep.info["L"] = list(bounds.grad_bounds)
        rep.info["N"] = list(bounds.lipschitz)
        rep.add("gradient bounds", True, f"L_sum={bounds.L_sum:.12g}, N_sum={bounds.N_sum:.12g}")
    except ConfigurationError as e:
        rep.add("gradient bounds", False, str(e))
    x0 = config.initial_states()
    rep.add("initial iterates in decision set", config.box.contains(x0), "x_{0,0} must lie in the box")
    ok, detail = config.step_size.check(K)
    rep.add("step sizes", ok, detail)
    if config.mode not in GRAPH_MODES:
        rep.add("mode", False, f"unknown mode {config.mode!r}")
        return rep

    w = config.weights
    shape_ok = (w.delta, w.servers, w.clients) == (delta, S, C) and (not w.coordinate_wise or w.entries.shape[4] == config.dim)
    rep.add("weight shape", shape_ok, f"weights {w.entries.shape[1:]} vs (delta, S, C)=({delta}, {S}, {C})")
    if not shape_ok:
        return rep
    eff = config.effective_weights()
    try:
        M = validate_slc(eff)
        rep.info["M_window"] = M
        rep.info["M_step"] = M / delta
        detail = f"M={M:.12g} per window ({M / delta:.12g} per step)"
        passed = True
        if w.M is not None and abs(M - w.M) > 1e-9:
            passed, detail = False, f"measured window M={M:.12g} differs from declared {w.M:.12g}"
        rep.add("symmetric learning condition (SLC)", passed, detail)
    except WeightError as e:
        rep.add("symmetric learning condition (SLC)", False, str(e))
    mbar = validate_buc(eff)
    rep.info["Mbar_window_measured"] = mbar
    rep.info["Mbar_step_measured"] = mbar / delta
    budget = w.Mbar if w.Mbar is not None else mbar
    rep.info["Mbar_window"] = budget
    try:
        check_buc(eff, budget)
        rep.add("bounded update condition (BUC)", True,
                f"max window abs sum {mbar:.12g} <= {budget:.12g} ({mbar / delta:.12g} per step)")
    except WeightError as e:
        rep.add("bounded update condition (BUC)", False, str(e))

    if config.links is not None:
        shape = config.links.links.shape[1:]
        rep.add("link schedule shape", shape == (S, C), f"{shape} vs (S, C)=({S}, {C})")
        rep.add("client delta-connectivity", topo.check_delta_connectivity(config.links, delta),
                f"every client must upload at least once in every {delta} iterations")

    if not config.consensus:
        rep.add("consensus matrices", False, "no consensus matrix given")
        return rep
    nus = []
    for n, cm in enumerate(config.consensus):
        try:
            topo.validate_consensus_matrix(cm.B, cm.graph, cm.kappa if cm.graph is not None else None)
            if cm.B.shape != (S, S):
                raise topo.ConsensusMatrixError(f"shape {cm.B.shape} does not match S={S}")
            g = cm.graph if cm.graph is not None else topo.graph_from_support(cm.B)
            rep.add(f"consensus matrix {n + 1}", True, f"doubly stochastic, connected ({g.kind})")
        except topo.TopologyError as e:
            rep.add(f"consensus matrix {n + 1}", False, str(e))
            continue
        nus.append(topo.scrambling_coefficient(cm.B))
    if nus:
        rep.info["nu"] = max(nus)
        rep.info["scrambling"] = bool(max(nus) < 1.0)
    if config.mode != "general":
        uniform = all(_is_uniform(cm.B) for cm in config.consensus)
        rep.add("complete server graph", uniform, "complete-graph modes need uniform averaging B = 1/S")
    if config.mode == "complete_graph_nonneg_W":
        rep.add("nonnegative weights", bool(np.all(eff.entries >= 0)), "mode requires all W entries >= 0")
    if config.zero_grad_masking:
        rep.add("mask bound", config.mask_bound > 0, f"mask bound {config.mask_bound}")
    return rep


def _stack_quadratics(objectives):
    if all(isinstance(f, QuadraticObjective) for f in objectives):
        scales = np.array([f.scale for f in objectives])
        centers = np.stack([f.center for f in objectives])
        return scales, centers
    return None


def _affine_terms(Wk, scales, centers):
    """Per-step (coef, shift) with coef (delta, S, D|1) and shift (delta, S, D)."""
    if Wk.ndim == 4:  # (delta, S, C, D)
        coef = np.einsum("iscd,c->isd", Wk, scales)
        shift = np.einsum("iscd,c,cd->isd", Wk, scales, centers)
    else:
        coef = (Wk @ scales)[..., None]
        shift = Wk @ (scales[:, None] * centers)
    return coef, shift


def client_gradients(objectives, states, quad=None):
    """Gradients of every client at every server state, shape (S, C, D)."""
    if quad is not None:
        scales, centers = quad
        return 2.0 * scales[None, :, None] * (states[:, None, :] - centers[None, :, :])
    return np.stack([np.stack([f.grad(x) for f in objectives]) for x in states])


def descent_step(states, W_i, alpha, objectives, box, quad=None, mask_rng=None, mask_bound=1.0):
    """One synchronous projected step on every server.

    `W_i` is (S, C) or, coordinate-wise, (S, C, D). Returns the new states
    and the number of client uploads that were replaced by zero-sum masks.
    """
    G = client_gradients(objectives, states, quad)
    if not np.all(np.isfinite(G)):
        J = int(np.argwhere(~np.isfinite(G))[0][0])
        raise NumericFault(-1, -1, J)
    W = W_i[..., None] if W_i.ndim == 2 else W_i
    uploads = W * G
    masked = 0
    if mask_rng is not None:
        linked = np.any(W != 0, axis=-1)  # (S, C)
        zero = ~np.any(G != 0, axis=-1)
        for h in range(G.shape[1]):
            servers = np.flatnonzero(linked[:, h] & zero[:, h])
            if servers.size >= 2:
                uploads[servers, h] = mask_zero_gradient(uploads[servers, h], mask_bound, mask_rng)
                masked += 1
    return project(states - alpha * uploads.sum(axis=1), box), masked


def consensus_step(states, B):
    return np.asarray(B) @ states


def run(config, check=True):
    """Execute the configured experiment and return its full trace.

    Raises `ValidationError` before the first iteration when any check fails.
    """
    report = validate(config)
    if check and not report.ok:
        raise ValidationError(report)
    K, delta = config.cycles, config.delta
    S, D = config.servers, config.dim
    weights = config.effective_weights()
    alphas = config.step_size.values(K)
    cidx = config.consensus_sequence()
    quad = _stack_quadratics(config.objectives)
    mask_rng = np.random.default_rng([config.seed, 2]) if config.zero_grad_masking else None

    states = np.empty((K, delta + 1, S, D))
    boundary = np.empty((K + 1, S, D))
    events = np.zeros(K, dtype=np.int64)
    x = config.initial_states()
    boundary[0] = x
    fast = quad is not None and mask_rng is None
    affine = {}
    lo, hi = config.box.lower, config.box.upper
    for k in range(K):
        Wk = weights.cycle(k)
        states[k, 0] = x
        if fast:
            # sum_h W[J,h] 2 a_h (x - c_h) = 2 (coef[J] x - shift[J]); per stored cycle
            slot = k % weights.cycles
            if slot not in affine:
                affine[slot] = _affine_terms(Wk, *quad)
            coef, shift = affine[slot]
            two_a = 2.0 * alphas[k]
            for i in range(delta):
                x = np.clip(x - two_a * (coef[i] * x - shift[i]), lo, hi)
                states[k, i + 1] = x
        else:
            for i in range(delta):
                try:
                    x, m = descent_step(x, Wk[i], alphas[k], config.objectives, config.box, quad,
                                        mask_rng, config.mask_bound)
                except NumericFault as e:
                    raise NumericFault(k, i, e.server) from None
                events[k] += m
                states[k, i + 1] = x
        x = consensus_step(x, config.consensus[cidx[k]].B)
        boundary[k + 1] = x
    log.debug("ran %s: %d cycles, %d masked uploads", config.name, K, int(events.sum()))
    return ExperimentTrace(config, states, boundary, alphas, weights, cidx, events, report)
