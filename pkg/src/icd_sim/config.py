"""JSON experiment configuration: parsing, building, validation and export.

A document is a JSON object with ``schema_version`` 1. Indices inside the
document (link pairs, partition assignments, hubs) are 0-based. Weight
budgets are given either per window (``M_window``, ``Mbar_window``: sums
over the delta steps of a cycle) or per step (``M_step``, ``Mbar_step``),
which is scaled by delta.
"""

import copy
import json
from importlib import resources

import numpy as np

from . import topology as topo
from .domain import BoxSet, ConfigurationError
from .engine import GRAPH_MODES, ExperimentConfig, StepSizeSchedule, ValidationError, ValidationReport, validate
from .objectives import QuadraticObjective, split_quadratic
from .weights import WeightSchedule, generate_partition, generate_random_signed

SCHEMA_VERSION = 1
PRESETS = ("static", "dynamic", "topology4_path", "topology4_cycle", "topology4_star",
           "topology4_complete", "partition", "complete_nonneg", "complete_signed")

__all__ = ["ParseError", "ValidationError", "build_config", "dump_config", "load_config",
           "load_document", "preset_document", "load_preset", "PRESETS"]


class ParseError(ConfigurationError):
    pass


def _req(doc, key, where="config"):
    if key not in doc:
        raise ParseError(f"{where}: missing required field {key!r}")
    return doc[key]


def _array(value, what, ndim=None):
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError):
        raise ParseError(f"{what}: expected a numeric array") from None
    if ndim is not None and arr.ndim != ndim:
        raise ParseError(f"{what}: expected {ndim}-D array, got shape {arr.shape}")
    return arr


def _int(doc, key, default=None):
    value = doc.get(key, default) if default is not None else _req(doc, key)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ParseError(f"{key}: expected an integer, got {value!r}")
    return value


def _objectives(doc):
    objs = []
    for n, sub in enumerate(_req(doc, "objectives")):
        kind = sub.get("type", "quadratic")
        if kind != "quadratic":
            raise ParseError(f"objectives[{n}]: only 'quadratic' objectives can be loaded from JSON")
        objs.append(QuadraticObjective(_array(_req(sub, "center", f"objectives[{n}]"), "center", 1),
                                       float(sub.get("scale", 1.0))))
    if not objs:
        raise ParseError("objectives: list is empty")
    return objs


def _step_size(doc):
    sub = doc.get("step_size", {"kind": "harmonic", "offset": 1e-4})
    kind = sub.get("kind", "harmonic")
    if kind == "harmonic":
        return StepSizeSchedule("harmonic", float(sub.get("offset", 1e-4)))
    if kind == "sequence":
        return StepSizeSchedule("sequence", sequence=tuple(float(a) for a in _req(sub, "values", "step_size")))
    raise ParseError(f"step_size: unknown kind {kind!r}")


def _consensus(doc, S):
    sub = _req(doc, "consensus")
    selection = sub.get("selection", "cycle")
    if selection not in ("cycle", "random"):
        raise ParseError(f"consensus.selection: expected 'cycle' or 'random', got {selection!r}")
    out = []
    for n, g in enumerate(sub.get("graphs", [])):
        graph = topo.ServerGraph.from_kind(_req(g, "kind", f"consensus.graphs[{n}]"), S,
                                           hub=g.get("hub", 0), edges=g.get("edges"))
        out.append(topo.build_doubly_stochastic(graph, float(_req(g, "kappa", f"consensus.graphs[{n}]"))))
    for n, m in enumerate(sub.get("matrices", [])):
        B = _array(m, f"consensus.matrices[{n}]", 2)
        try:
            out.append(topo.consensus_from_matrix(B))
        except topo.TopologyError as e:
            _fail(f"consensus matrix {n + 1}", str(e))
    if not out:
        raise ParseError("consensus: give at least one entry under 'graphs' or 'matrices'")
    return out, selection


def _fail(name, detail):
    rep = ValidationReport()
    rep.add(name, False, detail)
    raise ValidationError(rep)


def _link_mask(links, delta, cycles, S, C):
    if links is None:
        return None
    return np.stack([np.stack([links.at(k * delta + i) for i in range(delta)]) for k in range(cycles)])


def _weights(doc, S, C, delta, cycles, seed, links, dim):
    sub = _req(doc, "weights")
    kind = _req(sub, "kind", "weights")
    M, Mbar = sub.get("M_window"), sub.get("Mbar_window")
    # per-step budgets (the usual way to quote a constant matrix) scale to the window
    if M is None and sub.get("M_step") is not None:
        M = delta * float(sub["M_step"])
    if Mbar is None and sub.get("Mbar_step") is not None:
        Mbar = delta * float(sub["Mbar_step"])
    if kind == "constant":
        W = _array(_req(sub, "matrix", "weights"), "weights.matrix")
        if W.shape[:2] != (S, C):
            raise ParseError(f"weights.matrix: expected shape ({S}, {C}), got {W.shape[:2]}")
        return WeightSchedule.constant(W, delta, M=M, Mbar=Mbar)
    if kind == "schedule":
        entries = _array(_req(sub, "entries", "weights"), "weights.entries")
        if entries.ndim not in (4, 5):
            raise ParseError("weights.entries: expected nested [cycle][step][server][client]([coordinate])")
        return WeightSchedule(entries, mode=sub.get("mode", "schedule"), M=M, Mbar=Mbar)
    if kind == "random_signed":
        if M is None or Mbar is None:
            raise ParseError("weights: random_signed needs M and Mbar (M_window/Mbar_window or M_step/Mbar_step)")
        n = cycles if sub.get("regenerate", "per_cycle") == "per_cycle" else 1
        mask = _link_mask(links, delta, n, S, C)
        d = dim if sub.get("coordinate_wise", False) else None
        return generate_random_signed(S, C, delta, float(M), float(Mbar), np.random.default_rng([seed, 0]),
                                      cycles=n, mask=mask, dim=d)
    if kind == "partition":
        return generate_partition(S, C, delta, sub.get("assignment") or [h % S for h in range(C)])
    raise ParseError(f"weights: unknown kind {kind!r}")


def _initial(doc, S, box, seed):
    sub = doc.get("initial")
    if sub is None:
        return np.zeros((S, box.dim))
    if isinstance(sub, dict):
        if sub.get("kind") != "random":
            raise ParseError("initial: object form must be {'kind': 'random'}")
        lo = np.broadcast_to(_array(sub.get("low", box.lower), "initial.low"), (box.dim,))
        hi = np.broadcast_to(_array(sub.get("high", box.upper), "initial.high"), (box.dim,))
        return np.random.default_rng([seed, 3]).uniform(lo, hi, size=(S, box.dim))
    x0 = _array(sub, "initial")
    try:
        return np.broadcast_to(x0, (S, box.dim)).copy()
    except ValueError:
        raise ParseError(f"initial: cannot broadcast shape {x0.shape} to ({S}, {box.dim})") from None


def build_config(doc, seed=None, mode=None, check=True):
    """Build an `ExperimentConfig` from a parsed document.

    `seed` and `mode` override the document. With `check` the full
    validator suite runs and `ValidationError` is raised on any failure.
    """
    if not isinstance(doc, dict):
        raise ParseError("config must be a JSON object")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ParseError(f"schema_version: expected {SCHEMA_VERSION}, got {version!r}")
    doc = copy.deepcopy(doc)
    if seed is not None:
        doc["seed"] = int(seed)
    if mode is not None:
        doc["mode"] = mode
    seed = _int(doc, "seed", 0)
    mode = doc.get("mode", "general")
    if mode not in GRAPH_MODES:
        raise ParseError(f"mode: expected one of {GRAPH_MODES}, got {mode!r}")
    S, delta, cycles = _int(doc, "servers"), _int(doc, "delta"), _int(doc, "cycles")
    if S < 1 or delta < 1 or cycles < 1:
        _fail("sizes", f"servers={S}, delta={delta}, cycles={cycles} (all must be >= 1)")
    box_spec = _req(doc, "box")
    try:
        box = BoxSet(_array(_req(box_spec, "lower", "box"), "box.lower", 1),
                     _array(_req(box_spec, "upper", "box"), "box.upper", 1))
        objectives = _objectives(doc)
    except (ParseError, ValidationError):
        raise
    except ConfigurationError as e:
        raise ParseError(str(e)) from None
    part = doc.get("partition")
    if part:
        # client h part J goes to server J
        rng = np.random.default_rng([seed, 4])
        objectives = [p for f in objectives
                      for p in split_quadratic(f, S, rng, float(part.get("spread", 1.0)))]
        doc["weights"] = {"kind": "partition", "assignment": [J for _ in range(len(objectives) // S)
                                                              for J in range(S)]}
    C = len(objectives)
    links = None
    if doc.get("links") is not None:
        links = topo.ClientLinkSchedule.from_pairs(S, C, _req(doc["links"], "steps", "links"))
    try:
        weights = _weights(doc, S, C, delta, cycles, seed, links, box.dim)
        consensus, selection = _consensus(doc, S)
    except (ValidationError, ParseError):
        raise
    except ConfigurationError as e:
        _fail(type(e).__name__, str(e))
    cfg = ExperimentConfig(
        objectives=objectives, box=box, servers=S, delta=delta, cycles=cycles, weights=weights,
        consensus=consensus, step_size=_step_size(doc), consensus_selection=selection, links=links,
        initial=_initial(doc, S, box, seed), seed=seed, mode=mode,
        zero_grad_masking=bool(doc.get("zero_grad_masking", False)),
        mask_bound=float(doc.get("mask_bound", 1.0)), name=str(doc.get("name", "experiment")),
        tolerance=float(doc.get("tolerance", 0.1)), source=doc,
    )
    if check:
        rep = validate(cfg)
        if not rep.ok:
            raise ValidationError(rep)
    return cfg


def load_document(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except FileNotFoundError:
        raise ParseError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: invalid JSON at line {e.lineno} column {e.colno}: {e.msg}") from None


def load_config(path, seed=None, mode=None, check=True):
    return build_config(load_document(path), seed=seed, mode=mode, check=check)


def preset_document(name):
    if name not in PRESETS:
        raise ParseError(f"unknown preset {name!r}; available: {', '.join(PRESETS)}")
    text = resources.files("icd_sim.presets").joinpath(f"{name}.json").read_text(encoding="utf-8")
    return json.loads(text)


def load_preset(name, seed=None, mode=None, check=True, **overrides):
    doc = preset_document(name)
    doc.update(overrides)
    return build_config(doc, seed=seed, mode=mode, check=check)


def dump_config(cfg):
    """Fully explicit document for `cfg`; building it reproduces the same arrays."""
    objs = []
    for f in cfg.objectives:
        if not isinstance(f, QuadraticObjective):
            raise ConfigurationError("only quadratic objectives can be written to JSON")
        objs.append({"type": "quadratic", "center": f.center.tolist(), "scale": f.scale})
    w = cfg.weights
    weights = {"kind": "schedule", "mode": w.mode, "entries": w.to_nested()}
    if w.M is not None:
        weights["M_window"] = w.M
    if w.Mbar is not None:
        weights["Mbar_window"] = w.Mbar
    step = ({"kind": "harmonic", "offset": cfg.step_size.offset} if cfg.step_size.kind == "harmonic"
            else {"kind": "sequence", "values": list(cfg.step_size.sequence)})
    doc = {
        "schema_version": SCHEMA_VERSION,
        "name": cfg.name,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "servers": cfg.servers,
        "delta": cfg.delta,
        "cycles": cfg.cycles,
        "box": {"lower": cfg.box.lower.tolist(), "upper": cfg.box.upper.tolist()},
        "objectives": objs,
        "weights": weights,
        "consensus": {"selection": cfg.consensus_selection, "matrices": [c.B.tolist() for c in cfg.consensus]},
        "step_size": step,
        "initial": cfg.initial_states().tolist(),
        "zero_grad_masking": cfg.zero_grad_masking,
        "mask_bound": cfg.mask_bound,
        "tolerance": cfg.tolerance,
    }
    if cfg.links is not None:
        doc["links"] = {"steps": cfg.links.to_pairs()}
    return doc


def write_config(cfg, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(dump_config(cfg), fh, indent=1)
        fh.write("\n")
