"""Command line entry point: ``icd-sim run|check|compare``.

Each run writes four files to its output directory:

``trace.csv``    k, i, server, coordinate, value for every state x_{i,k}
``metrics.csv``  k, err_norm, eta_sq, max_delta, max_pairwise, f_gap per boundary
``bounds.csv``   per-cycle bound values and residuals
``summary.json`` convergence summary, validator report and bound verdicts

Numbers use 17 significant digits so reruns are byte-identical.
"""

import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import convergence_summary, evaluate_bounds, metrics_table
from .config import PRESETS, ParseError, ValidationError, build_config, load_document, preset_document
from .domain import ConfigurationError
from .engine import NumericFault, StepSizeSchedule, run, validate
from .objectives import QuadraticObjective
from .oracle import solve_centralized_pgd, solve_closed_form

log = logging.getLogger("icd_sim")

EXIT_OK, EXIT_BOUNDS, EXIT_CONFIG = 0, 1, 2


class ProblemMismatch(ConfigurationError):
    pass


@dataclass
class RunManifest:
    config: str  # path, or "preset:<name>"
    out: Path | None = None
    seed: int | None = None
    mode: str | None = None
    check_only: bool = False
    version: str = __version__
    files: dict = field(default_factory=dict)

    def document(self):
        if self.config.startswith("preset:"):
            return preset_document(self.config[len("preset:"):])
        return load_document(self.config)


def fmt(x):
    return "%.17g" % x


def _write_csv(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def oracle_for(cfg):
    if all(isinstance(f, QuadraticObjective) for f in cfg.objectives):
        return solve_closed_form(cfg.objectives, cfg.box)
    return solve_centralized_pgd(cfg.objectives, cfg.box, 10_000, StepSizeSchedule())


def write_trace(trace, path):
    K, steps, S, D = trace.states.shape
    rows = []
    for k in range(K):
        for i in range(steps):
            for J in range(S):
                for p in range(D):
                    rows.append((k, i, J + 1, p + 1, fmt(trace.states[k, i, J, p])))
    for J in range(S):
        for p in range(D):
            rows.append((K, 0, J + 1, p + 1, fmt(trace.boundary[K, J, p])))
    _write_csv(path, ["k", "i", "server", "coordinate", "value"], rows)


def write_metrics(table, path):
    cols = ["k", "err_norm", "eta_sq", "max_delta", "max_pairwise", "f_gap"]
    rows = [[int(table["k"][n])] + [fmt(table[c][n]) for c in cols[1:]] for n in range(len(table["k"]))]
    _write_csv(path, cols, rows)


def write_bounds(report, path):
    cols = ["k", "alpha", "disagreement_bound", "observed_delta", "consensus_residual",
            "cycle_residual", "cycle_residual_step", "skipped"]
    rows = []
    for n in range(len(report.k)):
        rows.append([int(report.k[n]), fmt(report.alpha[n]), fmt(report.disagreement_bound[n]),
                     fmt(report.observed_delta[n]), fmt(report.consensus_residual[n]),
                     fmt(report.cycle_residual[n]), fmt(report.cycle_residual_step[n]),
                     int(report.skipped[n])])
    _write_csv(path, cols, rows)


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    raise TypeError(type(x))


def execute(cfg, out=None, write_trace_file=True):
    """Run `cfg`, evaluate the bounds and optionally emit the output files.

    Returns ``(summary_dict, exit_status)``.
    """
    trace = run(cfg)
    sol = oracle_for(cfg)
    table = metrics_table(trace, sol.xstar, sol.fstar)
    bounds = evaluate_bounds(trace, sol.xstar)
    conv = convergence_summary(trace, sol.xstar, cfg.tolerance)
    violations = bounds.violations()
    summary = {
        "name": cfg.name,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "version": __version__,
        "cycles": cfg.cycles,
        "xstar": sol.xstar,
        "fstar": sol.fstar,
        "tol": conv.tol,
        "cycles_to_tol": conv.cycles_to_tol,
        "final_gap": conv.final_gap,
        "final_max_pairwise": conv.final_max_pairwise,
        "final_eta_sq": conv.final_eta_sq,
        "final_states": trace.boundary[-1],
        "masked_uploads": int(trace.mask_events.sum()),
        "bound_violations": violations,
        "bounds_ok": bounds.ok,
        "validation": trace.report.as_dict(),
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        if write_trace_file:
            write_trace(trace, out / "trace.csv")
        write_metrics(table, out / "metrics.csv")
        write_bounds(bounds, out / "bounds.csv")
        with open(out / "summary.json", "w", encoding="utf-8") as fh:
            json.dump(summary, fh, indent=1, default=_jsonable, sort_keys=True)
            fh.write("\n")
    return summary, EXIT_OK if bounds.ok else EXIT_BOUNDS


def run_and_emit(manifest):
    cfg = build_config(manifest.document(), seed=manifest.seed, mode=manifest.mode)
    if manifest.check_only:
        return validate(cfg), EXIT_OK
    summary, status = execute(cfg, manifest.out)
    if manifest.out is not None:
        manifest.files = {n: str(Path(manifest.out) / n)
                          for n in ("trace.csv", "metrics.csv", "bounds.csv", "summary.json")}
    return summary, status


def _problem_key(cfg):
    # partitioned runs solve the same problem as the sum of their parts,
    # so runs are matched on optimum and decision set
    sol = oracle_for(cfg)
    return tuple(np.round(sol.xstar, 12)), tuple(cfg.box.lower), tuple(cfg.box.upper)


def compare_runs(manifests):
    """Run every manifest and return summary rows sorted fastest first.

    Runs that never reach the tolerance sort last, then by final gap.
    """
    if len(manifests) < 2:
        raise ConfigurationError("compare needs at least two runs")
    rows, keys = [], set()
    for m in manifests:
        cfg = build_config(m.document(), seed=m.seed, mode=m.mode)
        keys.add(_problem_key(cfg))
        s, _ = execute(cfg, m.out)
        rows.append({"name": cfg.name, "seed": cfg.seed, "cycles_to_tol": s["cycles_to_tol"],
                     "tol": s["tol"], "final_gap": s["final_gap"],
                     "final_max_pairwise": s["final_max_pairwise"]})
    if len(keys) > 1:
        raise ProblemMismatch("runs solve different problems (optimum or decision set differ)")
    rows.sort(key=lambda r: (r["cycles_to_tol"] is None, r["cycles_to_tol"] or 0, r["final_gap"]))
    return rows


def _config_ref(args):
    if getattr(args, "preset", None):
        return f"preset:{args.preset}"
    if getattr(args, "config", None):
        return args.config
    raise SystemExit("one of --config or --preset is required")


def _out_dir(args, name):
    if args.out:
        return Path(args.out)
    base = os.environ.get("ICD_SIM_OUT")
    return Path(base) / name if base else Path("icd_sim_out") / name


def _print_report(rep, stream):
    for c in rep.checks:
        stream.write(f"{'ok  ' if c.passed else 'FAIL'} {c.name}: {c.detail}\n")


def build_parser():
    p = argparse.ArgumentParser(prog="icd-sim", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp):
        sp.add_argument("--config", metavar="PATH", help="experiment config (JSON)")
        sp.add_argument("--preset", choices=PRESETS, help="use a bundled preset instead of --config")
        sp.add_argument("--seed", type=int, help="override the config seed")
        sp.add_argument("--mode", choices=("general", "complete_graph", "complete_graph_nonneg_W"))

    r = sub.add_parser("run", help="simulate and write trace/metrics/bounds/summary")
    common(r)
    r.add_argument("--out", metavar="DIR")
    r.add_argument("--check-only", action="store_true", help="run validators only")
    c = sub.add_parser("check", help="run validators only")
    common(c)
    m = sub.add_parser("compare", help="run several configs and print a sorted table")
    m.add_argument("--config", metavar="PATH", action="append", default=[])
    m.add_argument("--preset", choices=PRESETS, action="append", default=[])
    m.add_argument("--seed", type=int)
    m.add_argument("--mode", choices=("general", "complete_graph", "complete_graph_nonneg_W"))
    m.add_argument("--out", metavar="DIR", help="write each run under DIR/<name> plus comparison.csv")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb in ("run", "check"):
            ref = _config_ref(args)
            check_only = args.verb == "check" or args.check_only
            name = ref.split(":", 1)[1] if ref.startswith("preset:") else Path(ref).stem
            out = None if check_only else _out_dir(args, name)
            man = RunManifest(ref, out, args.seed, args.mode, check_only)
            result, status = run_and_emit(man)
            if check_only:
                _print_report(result, sys.stdout)
                return EXIT_OK if result.ok else EXIT_CONFIG
            print(f"{result['name']}: cycles_to_tol({result['tol']:g})={result['cycles_to_tol']} "
                  f"final_gap={result['final_gap']:.6g} final_max_pairwise={result['final_max_pairwise']:.6g}")
            for k, v in result["bound_violations"].items():
                if v:
                    print(f"FAIL {k} bound: {v} violating cycles", file=sys.stderr)
            print(f"wrote {out}")
            return status
        refs = [f"preset:{n}" for n in args.preset] + list(args.config)
        base = Path(args.out) if args.out else None
        mans = [RunManifest(r, base / _name(r) if base else None, args.seed, args.mode) for r in refs]
        rows = compare_runs(mans)
        cols = ["name", "seed", "cycles_to_tol", "tol", "final_gap", "final_max_pairwise"]
        w = csv.writer(sys.stdout, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if not isinstance(r[c], float) else fmt(r[c]) for c in cols])
        if base:
            _write_csv(base / "comparison.csv", cols,
                       [[r[c] if not isinstance(r[c], float) else fmt(r[c]) for c in cols] for r in rows])
        return EXIT_OK
    except ValidationError as e:
        print("configuration rejected:", file=sys.stderr)
        _print_report(e.report, sys.stderr)
        return EXIT_CONFIG
    except (ParseError, ConfigurationError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFault as e:
        print(f"numeric fault: {e}", file=sys.stderr)
        return EXIT_BOUNDS


def _name(ref):
    return ref.split(":", 1)[1] if ref.startswith("preset:") else Path(ref).stem


if __name__ == "__main__":
    sys.exit(main())
