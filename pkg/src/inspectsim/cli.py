"""``inspect-sim`` command line.

Commands
--------
run        one scenario; writes trace.csv, metrics.json and SVG plots
sweep      one scenario per value of speed or feature count, plus sweep.csv
compare    seeded trials of the observer against the EKF, averaged curves
validate   schema check of scenario files

Exit codes: 0 success, 2 usage or schema error (the report names the field),
3 runtime failure inside the loop (the report names the tick).  Error reports
are JSON objects on stderr.  Every output file is written to a temporary name
and renamed into place.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .scenario import FIGURE_TAGS, Scenario, ScenarioError, load_scenario
from .simulator import (
    SimulationError,
    Trace,
    metrics,
    metrics_json,
    run,
    time_to_threshold,
    with_feature_count,
    with_overrides,
    with_speed,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_RUNTIME = 3

SWEEP_AXES = ("velocity", "features")


class UsageError(Exception):
    def __init__(self, message: str, field: str = "<args>"):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class RunManifest:
    scenario: str
    out: Path
    seed: int | None
    tag: str | None

    def to_json(self) -> str:
        doc = {"scenario": self.scenario, "out": str(self.out), "seed": self.seed, "tag": self.tag}
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


# -- output helpers --------------------------------------------------------------------------

def atomic_write(path: Path, data: str | bytes) -> None:
    """Write ``data`` to ``path`` via a temporary sibling and ``os.replace``."""
    path = Path(path)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    mode = "wb" if isinstance(data, bytes) else "w"
    with open(tmp, mode, **({} if isinstance(data, bytes) else {"encoding": "utf-8", "newline": ""})) as fh:
        fh.write(data)
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _short(v) -> str:
    return f"{v:.3g}" if isinstance(v, float) and np.isfinite(v) else _fmt(v)


def _fmt(v) -> str:
    if isinstance(v, float):
        return repr(v) if np.isfinite(v) else ("inf" if v > 0 else ("-inf" if v < 0 else "nan"))
    return str(v)


def _svg(series: list[tuple[str, np.ndarray, dict[str, np.ndarray]]], title: str) -> bytes:
    """Stack of line plots; one panel per ``(ylabel, t, {label: y})`` entry."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed salt and metadata keep the SVG bytes reproducible
    with plt.rc_context({"svg.hashsalt": "inspectsim"}):
        fig, axes = plt.subplots(len(series), 1, figsize=(7.0, 2.2 * len(series)), sharex=True,
                                 squeeze=False)
        for ax, (ylabel, t, lines) in zip(axes[:, 0], series):
            for label, y in lines.items():
                ax.plot(t, y, label=label, linewidth=1.0)
            ax.set_ylabel(ylabel)
            ax.grid(True, linewidth=0.3)
            if len(lines) > 1:
                ax.legend(fontsize="small", loc="upper right")
        axes[-1, 0].set_xlabel("t [s]")
        axes[0, 0].set_title(title)
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None})
        plt.close(fig)
    return buf.getvalue()


def _trace_plots(trace: Trace, name: str) -> dict[str, bytes]:
    d, t = trace.data, trace.t
    plots = {
        "estimate.svg": _svg([
            ("e_n [rad]", t, {"e_n": d["e_n"]}),
            ("e_d [m]", t, {"e_d": d["e_d"]}),
        ], f"{name}: plane estimate error"),
        "motion.svg": _svg([
            ("v [m/s]", t, {"vx": d["vx"], "vy": d["vy"], "vz": d["vz"]}),
            ("u [m/s^2]", t, {"ux": d["ux"], "uy": d["uy"], "uz": d["uz"]}),
        ], f"{name}: velocity and control"),
    }
    if np.any(np.isfinite(d["e_1"])):
        plots["tracking.svg"] = _svg([
            ("e [m, m, m/s]", t, {"separation": d["e_1"], "sweep": d["e_2"], "velocity": d["e_3"]}),
            ("gamma", t, {"gamma": d["gamma"]}),
        ], f"{name}: tracking error")
    return plots


def _write_run(out: Path, trace: Trace, name: str, plots: bool = True) -> dict:
    out.mkdir(parents=True, exist_ok=True)
    summary = metrics(trace) if len(trace) else {"ticks": 0}
    atomic_write(out / "trace.csv", trace.to_csv())
    atomic_write(out / "metrics.json", metrics_json(summary))
    if plots and len(trace):
        for fname, data in _trace_plots(trace, name).items():
            atomic_write(out / fname, data)
    return summary


# -- common plumbing -------------------------------------------------------------------------

def _load(arg: str, seed: int | None) -> Scenario:
    sc = load_scenario(arg)
    if seed is not None:
        if seed < 0:
            raise ScenarioError("seed", "must be >= 0")
        sc = with_overrides(sc, seed=seed)
    return sc


def _threads() -> int:
    raw = os.environ.get("INSPECT_SIM_THREADS", "")
    if not raw:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"INSPECT_SIM_THREADS must be an integer, got {raw!r}",
                         "INSPECT_SIM_THREADS") from None
    if n < 1:
        raise UsageError("INSPECT_SIM_THREADS must be >= 1", "INSPECT_SIM_THREADS")
    return n


def _error(kind: str, message: str, **extra) -> dict:
    return {"error": kind, "message": message, **extra}


def _report(err: dict, out: Path | None = None) -> None:
    text = json.dumps(err, sort_keys=True)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            atomic_write(out / "error.json", text + "\n")
        except OSError:
            pass


def _sim_error(exc: SimulationError) -> dict:
    kind = "infeasible" if exc.infeasible else "runtime"
    return _error(kind, str(exc.cause), tick=exc.tick, cause=type(exc.cause).__name__)


def _out_dir(path: str) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {out}: {exc.strerror or exc}", "--out")
    if not os.access(out, os.W_OK):
        raise UsageError(f"output directory {out} is not writable", "--out")
    return out


# -- commands --------------------------------------------------------------------------------

def cmd_run(args) -> int:
    sc = _load(args.scenario, args.seed)
    out = _out_dir(args.out)
    manifest = RunManifest(args.scenario, out, args.seed, sc.name if sc.name in FIGURE_TAGS else None)
    atomic_write(out / "manifest.json", manifest.to_json())
    try:
        trace = run(sc)
    except SimulationError as exc:
        _report(_sim_error(exc), out)
        return EXIT_RUNTIME
    summary = _write_run(out, trace, sc.name)
    ttt = summary.get("time_to_threshold")
    print(f"{sc.name}: {summary['ticks']} ticks, time to threshold {_short(ttt)} s -> {out}")
    return EXIT_OK


def _parse_values(raw: str, axis: str) -> list[float | int]:
    parts = [p for p in raw.replace(" ", ",").split(",") if p]
    try:
        values = [int(p) if axis == "features" else float(p) for p in parts]
    except ValueError:
        raise UsageError(f"cannot parse --values {raw!r} for axis {axis}", "--values") from None
    if len(values) < 2:
        raise UsageError("a sweep needs at least two values", "--values")
    if any(v <= 0 for v in values):
        raise UsageError("sweep values must be positive", "--values")
    return values


def _ordering(ttt: list[float], strict: bool) -> bool:
    pairs = zip(ttt, ttt[1:])
    if strict:
        return all(b < a for a, b in pairs)
    return all(b <= a for a, b in pairs)


def cmd_sweep(args) -> int:
    if args.axis is None:
        raise UsageError("sweep needs --axis", "--axis")
    if args.values is None:
        raise UsageError("sweep needs --values", "--values")
    values = _parse_values(args.values, args.axis)
    base = _load(args.scenario, args.seed)
    out = _out_dir(args.out)
    vary = with_speed if args.axis == "velocity" else with_feature_count
    scenarios = [vary(base, v) for v in values]

    def member(i):
        try:
            return run(scenarios[i]), None
        except SimulationError as exc:
            return None, exc

    with ThreadPoolExecutor(max_workers=_threads()) as pool:
        results = list(pool.map(member, range(len(values))))

    rows, ttt, failed = [], [], None
    for v, sc, (trace, exc) in zip(values, scenarios, results):
        sub = out / f"{args.axis}_{v}"
        if exc is not None:
            err = _sim_error(exc)
            _report({**err, "value": v}, sub)
            failed = failed or err
            rows.append([v, "", "error"])
            continue
        summary = _write_run(sub, trace, f"{sc.name} {args.axis}={v}")
        t = summary.get("time_to_threshold", float("inf"))
        ttt.append(t)
        rows.append([v, _fmt(t), "ok"])
        print(f"{args.axis}={v}: time to threshold {_short(t)} s")
    atomic_write(out / "sweep.csv", _csv_text([args.axis, "time_to_threshold", "status"], rows))

    if failed:
        return EXIT_RUNTIME
    strict = args.axis == "velocity"
    word = "strictly decreasing" if strict else "non-increasing"
    ok = _ordering(ttt, strict)
    print(f"ordering ({word} in {args.axis}): {'holds' if ok else 'violated'}")
    return EXIT_OK


def compare_trials(sc: Scenario, trials: int, base_seed: int | None = None, threads: int = 1):
    """Run seeded trials; returns ``(seeds, traces)`` sorted by seed."""
    if not sc.ekf:
        raise ScenarioError("ekf", "compare needs a scenario with ekf = true")
    seed0 = sc.seed if base_seed is None else base_seed
    seeds = [seed0 + i for i in range(trials)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        traces = list(pool.map(lambda s: run(with_overrides(sc, seed=s)), seeds))
    order = np.argsort(seeds, kind="stable")
    return [seeds[i] for i in order], [traces[i] for i in order]


def average_curves(traces: list[Trace]) -> dict[str, np.ndarray]:
    """Pointwise means over trials of the estimator error curves."""
    cols = ("e_n", "e_d", "ekf_e_n", "ekf_e_d")
    out = {"t": traces[0].t.copy()}
    for c in cols:
        out[c] = np.mean(np.stack([tr[c] for tr in traces]), axis=0)
    return out


def cmd_compare(args) -> int:
    if args.trials is None or args.trials < 1:
        raise UsageError("compare needs --trials >= 1", "--trials")
    sc = _load(args.scenario, None)
    out = _out_dir(args.out)
    try:
        seeds, traces = compare_trials(sc, args.trials, args.seed, _threads())
    except SimulationError as exc:
        _report(_sim_error(exc), out)
        return EXIT_RUNTIME
    if len(traces[0]) == 0:
        raise UsageError("compare needs a scenario with duration > 0", "duration")

    th = (sc.theta_n, sc.theta_d)
    per_trial = []
    for s, tr in zip(seeds, traces):
        per_trial.append([s, time_to_threshold(tr.t, tr["e_n"], tr["e_d"], *th),
                          time_to_threshold(tr.t, tr["ekf_e_n"], tr["ekf_e_d"], *th)])
    avg = average_curves(traces)
    atomic_write(out / "trials.csv", _csv_text(
        ["seed", "observer_time_to_threshold", "ekf_time_to_threshold"],
        [[s, _fmt(a), _fmt(b)] for s, a, b in per_trial]))
    cols = ["t", "e_n", "e_d", "ekf_e_n", "ekf_e_d"]
    atomic_write(out / "average.csv", _csv_text(
        cols, [[f"{v:.17g}" for v in row] for row in np.column_stack([avg[c] for c in cols])]))

    obs_mean = float(np.mean([r[1] for r in per_trial]))
    ekf_mean = float(np.mean([r[2] for r in per_trial]))
    obs_avg = time_to_threshold(avg["t"], avg["e_n"], avg["e_d"], *th)
    ekf_avg = time_to_threshold(avg["t"], avg["ekf_e_n"], avg["ekf_e_d"], *th)
    if obs_mean < ekf_mean:
        first = "observer"
    elif ekf_mean < obs_mean:
        first = "ekf"
    else:
        first = "neither" if not np.isfinite(obs_mean) else "tie"
    summary = {
        "trials": len(seeds),
        "seeds": [int(seeds[0]), int(seeds[-1])],
        "theta_n": th[0], "theta_d": th[1],
        "observer_mean_time_to_threshold": obs_mean,
        "ekf_mean_time_to_threshold": ekf_mean,
        "observer_average_curve_time_to_threshold": obs_avg,
        "ekf_average_curve_time_to_threshold": ekf_avg,
        "first_to_threshold": first,
    }
    atomic_write(out / "compare.json", metrics_json(summary))
    atomic_write(out / "compare.svg", _svg([
        ("mean e_n [rad]", avg["t"], {"observer": avg["e_n"], "EKF": avg["ekf_e_n"]}),
        ("mean e_d [m]", avg["t"], {"observer": avg["e_d"], "EKF": avg["ekf_e_d"]}),
    ], f"{sc.name}: {len(seeds)} trials"))
    print(f"{len(seeds)} trials: mean time to threshold observer {_short(obs_mean)} s, "
          f"EKF {_short(ekf_mean)} s; first: {first}")
    return EXIT_OK


def cmd_validate(args) -> int:
    status = EXIT_OK
    for src in args.scenario_files or [args.scenario]:
        try:
            sc = load_scenario(src)
        except ScenarioError as exc:
            print(json.dumps(_error("schema", exc.message, field=exc.path, scenario=src),
                             sort_keys=True), file=sys.stderr)
            status = EXIT_USAGE
            continue
        print(f"{src}: ok ({sc.name}, {sc.mode}, {sc.n_ticks} ticks)")
    return status


# -- entry point -----------------------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="inspect-sim", description="Plane observer and plane-following simulator.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, scenario_required=True):
        sp.add_argument("--scenario", required=scenario_required,
                        help="scenario file or bundled tag (" + ", ".join(FIGURE_TAGS) + ")")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--seed", type=int, default=None, help="noise seed override")

    sp = sub.add_parser("run", help="run one scenario")
    common(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("sweep", help="velocity or feature-count sweep")
    common(sp)
    sp.add_argument("--axis", choices=SWEEP_AXES)
    sp.add_argument("--values", help="comma-separated values, at least two")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("compare", help="observer vs EKF over seeded trials")
    common(sp)
    sp.add_argument("--trials", type=int, default=None)
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("validate", help="check scenario files against the schema")
    sp.add_argument("--scenario", default=None)
    sp.add_argument("scenario_files", nargs="*")
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "validate" and not args.scenario_files and args.scenario is None:
            raise UsageError("validate needs --scenario or file arguments", "--scenario")
        return args.func(args)
    except UsageError as exc:
        _report(_error("usage", str(exc), field=exc.field))
        return EXIT_USAGE
    except ScenarioError as exc:
        _report(_error("schema", exc.message, field=exc.path))
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
