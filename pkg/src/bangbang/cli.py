"""Command-line entry point: ``bangbang <subcommand> --config <path> [--out <dir>] [--seed <u64>]``.

Every run writes comma-separated tables, a ``result.json`` summary, gnuplot
scripts and ``run.log`` into the output directory.  Tables start with a comment
line carrying the configuration hash, followed by a header row naming units.
They contain no timings, so identical configurations produce byte-identical
tables.  The exit code is 0 when every attached check passes, 1 when a check
fails and 2 for configuration or usage errors.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, parse_config
from .dual import DualOptions, minimize_dual
from .selftest import run_selftest
from .spectral import ConfigurationError, build_basis, forward_solve, from_modes, semigroup_apply, to_modes
from .studies import (
    GeometryError,
    ProblemTemplate,
    amplitude_threshold,
    minimal_time,
    obstruction_experiment,
    sweep_amplitude,
)
from .synth import extract_control, verify

log = logging.getLogger("bangbang")

EXIT_OK, EXIT_CHECKS_FAILED, EXIT_CONFIG = 0, 1, 2


def _fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format(float(value), ".15g")
    if value is None:
        return ""
    return str(value)


def _json_value(value):
    if isinstance(value, dict):
        return {str(k): _json_value(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_value(v) for v in value]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        v = float(value)
        return v if math.isfinite(v) else str(v)
    return value


def index_ranges(mask: np.ndarray) -> str:
    """Contiguous runs of true entries as ``a-b`` (inclusive), separated by ``;``."""
    idx = np.flatnonzero(mask)
    if idx.size == 0:
        return ""
    breaks = np.flatnonzero(np.diff(idx) > 1)
    starts = np.concatenate([[idx[0]], idx[breaks + 1]])
    ends = np.concatenate([idx[breaks], [idx[-1]]])
    return ";".join(f"{a}-{b}" if a != b else f"{a}" for a, b in zip(starts, ends))


class Artifacts:
    """Writes every output file of a run and remembers their names."""

    def __init__(self, out: Path, config_hash: str):
        self.out = out
        self.hash = config_hash
        self.files: list[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def table(self, name: str, header: list[str], rows) -> None:
        buf = io.StringIO()
        buf.write(f"# config_hash: {self.hash}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
        (self.out / name).write_text(buf.getvalue())
        self.files.append(name)

    def plot(self, name: str, lines: list[str]) -> None:
        text = "\n".join([f"# config_hash: {self.hash}", "set datafile separator ','", *lines]) + "\n"
        (self.out / name).write_text(text)
        self.files.append(name)

    def result(self, subcommand: str, checks: dict, summary: dict) -> None:
        doc = {
            "config_hash": self.hash,
            "subcommand": subcommand,
            "passed": all(checks.values()),
            "checks": checks,
            "summary": summary,
            "files": sorted(self.files + ["result.json", "run.log"]),
        }
        (self.out / "result.json").write_text(json.dumps(_json_value(doc), indent=2, sort_keys=True) + "\n")


def _options(cfg: RunConfig) -> DualOptions:
    return DualOptions(**cfg.solver)


def _setup(cfg: RunConfig):
    basis = build_basis(cfg.domain(), cfg.K)
    base = Path(cfg.base_dir)
    y0 = cfg.y0.sample(basis, base)
    yf = cfg.yf.sample(basis, base)
    eps = cfg.eps * yf.norm() if cfg.eps_relative else cfg.eps
    if eps <= 0:
        raise ConfigError("eps resolves to 0 (relative eps with a zero target); give an absolute eps")
    return basis, y0, yf, eps


def _template(cfg: RunConfig) -> ProblemTemplate:
    basis, y0, yf, eps = _setup(cfg)
    return ProblemTemplate(basis, cfg.m, y0, yf, eps, cfg.L, cfg.rule, cfg.grading)


def run_synth(cfg: RunConfig, art: Artifacts) -> tuple[dict, dict]:
    if cfg.T is None:
        raise ConfigError("synth needs the key 'T'")
    tpl = _template(cfg)
    prob = tpl.at(cfg.T)
    t0 = time.perf_counter()
    rep = minimize_dual(prob, _options(cfg))
    log.info("dual solve: status=%s iterations=%d H=%.12g rel_gap=%.3e (%.2fs)",
             rep.status, rep.iterations, rep.H, rep.rel_gap, time.perf_counter() - t0)
    sc = extract_control(rep.p_f, prob, rep)
    vr = verify(sc, prob)
    log.info("verification: %s", vr.checks)
    tg, dom = prob.grid, prob.basis.domain
    art.table(
        "control_nodes.csv",
        ["node", "t_start [time]", "t_end [time]", "amplitude [control]", "shape_measure [length^d]",
         "plateau_cells [count]", "threshold [adjoint]", "mass [control*length^d]"],
        [
            (i, tg.edges[i], tg.edges[i + 1], float(sc.control.values[i].max(initial=0.0)),
             sc.shape_measures[i], int(sc.plateau_cells[i]), sc.thresholds[i], sc.masses()[i])
            for i in range(tg.m)
        ],
    )
    art.table(
        "shapes.csv",
        ["node", "shape_ranges [node index ranges]", "plateau_ranges [node index ranges]"],
        [(i, index_ranges(sc.shapes[i]), index_ranges(sc.plateau[i])) for i in range(tg.m)],
    )
    final = from_modes(forward_solve(prob.basis, prob.y0, sc.control, tg).final).values
    target = from_modes(prob.d + _free(prob)).values
    pts = dom.points()
    coord_names = ["x [length]"] if dom.dim == 1 else ["x [length]", "y [length]"]
    art.table(
        "terminal_state.csv",
        ["node", *coord_names, "y_T [state]", "y_target_projected [state]"],
        [(j, *pts[j], final[j], target[j]) for j in range(dom.size)],
    )
    art.plot("plot_amplitude.gp", [
        "set xlabel 't [time]'", "set ylabel 'control amplitude'",
        "plot 'control_nodes.csv' skip 2 using (($2+$3)/2):4 with steps title 'sup_x u(t)'",
    ])
    if dom.dim == 1:
        art.plot("plot_terminal.gp", [
            "set xlabel 'x [length]'", "set ylabel 'state'",
            "plot 'terminal_state.csv' skip 2 using 2:3 with lines title 'y(T)', "
            "'' skip 2 using 2:4 with lines title 'target'",
        ])
    checks = {"dual_converged": rep.converged, **{f"verify_{k}": bool(v) for k, v in vr.checks.items()}}
    summary = {
        "T": cfg.T, "eps": prob.eps, "status": rep.status, "iterations": rep.iterations,
        "amplitude": sc.amplitude, "J": rep.J, "rel_gap": rep.rel_gap, "residual": vr.residual,
        "residual_over_eps": vr.residual / prob.eps, "comparison_min": vr.comparison_min,
        "comparison_min_spectral": vr.comparison_min_spectral, "fenchel_defect": vr.fenchel_defect,
        "plateau_cells_max": vr.plateau_cells_max, "volume_violation": vr.volume_violation,
        "resolution_change": rep.resolution_change, "under_resolved": rep.under_resolved,
        "nontrivial": prob.nontrivial, "band": sc.band,
    }
    return checks, summary


def _free(prob):
    return semigroup_apply(prob.basis, prob.grid.T, to_modes(prob.y0, prob.basis))


def _sweep(cfg: RunConfig, art: Artifacts):
    if not cfg.T_values:
        raise ConfigError("this study needs the key 'T_values'")
    tpl = _template(cfg)
    t0 = time.perf_counter()
    table = sweep_amplitude(tpl, cfg.T_values, _options(cfg), _options(cfg).accept_gap)
    log.info("sweep of %d horizons (%.2fs)", len(cfg.T_values), time.perf_counter() - t0)
    art.table(
        "sweep.csv",
        ["T [time]", "M [amplitude]", "Pi [cost]", "J [cost]", "rel_gap [1]", "converged", "status",
         "lower_bound [amplitude]", "margin [amplitude]", "iterations [count]"],
        [(r.T, r.M, r.Pi, r.J, r.rel_gap, r.converged, r.status, r.bound, r.margin, r.iterations)
         for r in table.rows],
    )
    art.plot("plot_sweep.gp", [
        "set logscale x", "set xlabel 'T [time]'", "set ylabel 'amplitude'",
        "plot 'sweep.csv' skip 2 using 1:2 with linespoints title 'M(T)', "
        "'' skip 2 using 1:8 with lines title 'lower bound'",
    ])
    return tpl, table


def run_sweep(cfg: RunConfig, art: Artifacts) -> tuple[dict, dict]:
    _, table = _sweep(cfg, art)
    threshold, caveat = amplitude_threshold(table)
    checks = {
        "all_converged": all(r.converged for r in table.rows),
        "monotone": table.monotone,
        "lower_bound": all(r.margin >= -1e-6 * (1 + r.M) for r in table.converged_rows),
        "blowup_constant_positive": bool(table.blowup_constant > 0),
    }
    summary = {
        "rows": len(table.rows), "max_violation": table.max_violation, "T_ell": table.T_ell,
        "mu_minus": table.mu_minus, "max_jump": table.max_jump, "blowup_constant": table.blowup_constant,
        "blowup_exponent": table.blowup_exponent, "amplitude_threshold": threshold,
        "amplitude_threshold_is_upper_estimate": caveat,
    }
    return checks, summary


def run_mintime(cfg: RunConfig, art: Artifacts) -> tuple[dict, dict]:
    tpl, table = _sweep(cfg, art)
    rows = table.rows
    opts = _options(cfg)
    tol = cfg.mintime["tol"]
    out, checks = [], {}
    for i in cfg.mintime["points"]:
        if not (1 <= i <= len(rows) - 2):
            raise ConfigError(f"mintime.points entries must lie in [1, {len(rows) - 2}], got {i}")
        lam = rows[i].Pi
        res = minimal_time(lam, tpl, (rows[i - 1].T, rows[i + 1].T), opts, tol, table.mu_minus)
        err = abs(res.T_star - rows[i].T) / rows[i].T
        checks[f"round_trip_point_{i}"] = res.status == "found" and err <= 1e-2
        out.append((lam, res.T_star, res.Pi_at_T, res.status, f"sweep_{i}", rows[i].T, err, res.evaluations))
    for lam in cfg.mintime["lambdas"]:
        bracket = next(
            ((a.T, b.T) for a, b in zip(rows, rows[1:]) if a.converged and b.converged and a.Pi > lam >= b.Pi),
            None,
        )
        if lam <= table.mu_minus:
            res = minimal_time(lam, tpl, (rows[0].T, rows[-1].T), opts, tol, table.mu_minus)
            out.append((lam, res.T_star, res.Pi_at_T, res.status, "given", None, None, 0))
        elif bracket is None:
            log.warning("lambda=%g lies above Pi at the shortest horizon; no bracket in the sweep", lam)
            out.append((lam, None, None, "outside_sweep", "given", None, None, 0))
        else:
            res = minimal_time(lam, tpl, bracket, opts, tol, table.mu_minus)
            out.append((lam, res.T_star, res.Pi_at_T, res.status, "given", None, None, res.evaluations))
    art.table(
        "mintime.csv",
        ["lambda [cost]", "T_star [time]", "Pi_at_T_star [cost]", "status", "source", "T_reference [time]",
         "rel_error [1]", "evaluations [count]"],
        out,
    )
    summary = {"mu_minus": table.mu_minus, "points": len(out)}
    return checks, summary


def run_obstruct(cfg: RunConfig, art: Artifacts) -> tuple[dict, dict]:
    if not cfg.obstruct:
        raise ConfigError("obstruct needs the section 'obstruct' with center, radius and witness_radius")
    ob = cfg.obstruct
    tpl = _template(cfg)
    t0 = time.perf_counter()
    table = obstruction_experiment(
        tpl, ob["center"], ob["radius"], ob["T_values"], _options(cfg), ob["max_columns"],
        ob["witness_radius"], ob.get("witness_T"),
    )
    log.info("obstruction experiment (%.2fs)", time.perf_counter() - t0)
    art.table(
        "obstruction.csv",
        ["T [time]", "restricted_residual [state]", "restricted_certified", "unrestricted_residual [state]",
         "unrestricted_status", "unrestricted_M [amplitude]", "eps [state]"],
        [(r.T, r.restricted_residual, r.restricted_certified, r.unrestricted_residual, r.unrestricted_status,
          r.unrestricted_M, r.eps) for r in table.rows],
    )
    w = table.witness
    art.table(
        "witness.csv",
        ["T [time]", "sign_condition_holds", "min_off_ball [adjoint]"],
        list(zip(w.T_values, w.holds, w.min_off_ball)),
    )
    art.plot("plot_obstruction.gp", [
        "set logscale xy", "set xlabel 'T [time]'", "set ylabel 'residual'",
        "plot 'obstruction.csv' skip 2 using 1:2 with linespoints title 'restricted', "
        "'' skip 2 using 1:4 with linespoints title 'unrestricted', '' skip 2 using 1:7 with lines title 'eps'",
    ])
    last = table.rows[-1]
    checks = {
        "restricted_exceeds_eps": all(r.restricted_fails for r in table.rows),
        "restricted_not_below_unrestricted": all(
            r.restricted_residual >= r.unrestricted_residual - 1e-10 for r in table.rows
        ),
        "unrestricted_succeeds_at_last_T": last.unrestricted_status == "converged",
        "witness_negative_on_K": w.negative_on_K,
        "witness_window_positive": w.T_star is not None,
        "witness_pairing_negative": w.pairing is not None and w.pairing < 0,
    }
    summary = {
        "center": list(table.center), "radius": table.radius, "threshold": table.threshold,
        "witness_T_star": w.T_star, "witness_pairing": w.pairing,
        "witness_projection_error": w.projection_error,
    }
    return checks, summary


def run_selftest_command(cfg: RunConfig, art: Artifacts) -> tuple[dict, dict]:
    results = run_selftest(cfg.seed, cfg.selftest["fields"])
    art.table(
        "selftest.csv",
        ["suite", "check", "value [1]", "threshold [1]", "passed"],
        [(r.suite, r.name, r.value, r.threshold, r.passed) for r in results],
    )
    checks = {f"{r.suite}_{r.name}": r.passed for r in results}
    return checks, {"checks": len(results), "seed": cfg.seed}


COMMANDS = {
    "synth": run_synth,
    "sweep": run_sweep,
    "mintime": run_mintime,
    "obstruct": run_obstruct,
    "selftest": run_selftest_command,
}


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bangbang", description="On-off shape control synthesis for the heat equation.")
    parser.add_argument("subcommand", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="YAML configuration file")
    parser.add_argument("--out", help="output directory (overrides output.dir)")
    parser.add_argument("--seed", type=int, help="random seed, 0 <= seed < 2**64 (overrides seed)")
    return parser


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            if not (0 <= args.seed < 2**64):
                raise ConfigError(f"--seed must lie in [0, 2**64), got {args.seed}")
            cfg = replace(cfg, seed=args.seed)
        if cfg.study is not None and cfg.study != args.subcommand:
            raise ConfigError(f"config selects study {cfg.study!r} but the subcommand is {args.subcommand!r}")
    except (ConfigError, ConfigurationError) as exc:
        print(f"bangbang: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out = Path(args.out if args.out else Path(cfg.base_dir) / cfg.output_dir)
    art = Artifacts(out, cfg.hash())
    handler = logging.FileHandler(out / "run.log", mode="w")
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger()
    root.addHandler(handler)
    previous = root.level
    root.setLevel(logging.INFO)
    try:
        log.info("config_hash: %s", art.hash)
        log.info("subcommand: %s", args.subcommand)
        try:
            checks, summary = COMMANDS[args.subcommand](cfg, art)
        except (ConfigError, ConfigurationError) as exc:
            log.error("configuration error: %s", exc)
            print(f"bangbang {args.subcommand}: configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except (GeometryError, ValueError) as exc:
            log.error("%s failed: %s", args.subcommand, exc)
            print(f"bangbang {args.subcommand}: {exc}", file=sys.stderr)
            art.result(args.subcommand, {"completed": False}, {"error": str(exc)})
            return EXIT_CHECKS_FAILED
        checks = {k: bool(v) for k, v in checks.items()}
        art.result(args.subcommand, checks, summary)
        for name, ok in sorted(checks.items()):
            log.info("check %s: %s", name, "pass" if ok else "FAIL")
        passed = all(checks.values())
        print(f"bangbang {args.subcommand}: {'all checks passed' if passed else 'some checks FAILED'} ({out})")
        return EXIT_OK if passed else EXIT_CHECKS_FAILED
    finally:
        root.removeHandler(handler)
        root.setLevel(previous)
        handler.close()


if __name__ == "__main__":
    sys.exit(main())
