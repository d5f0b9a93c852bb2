"""Command-line entry point.

Subcommands: simulate, rod-response, quality, preprocess, train, evaluate,
compare-models, compare-sensors.  Configuration comes from JSON files with
flag overrides; ``MAGCLIMB_SEED`` is the seed fallback when no ``--seed``
flag is given.  Every command writes its outputs plus a ``run_manifest.json``
into the requested output directory and nowhere else.

Exit codes: 0 success, 2 input/config error, 3 simulation error,
4 training error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__, dsp, report
from .dynamics import (BODY_ACC_AXES, RodModel, SimScenario, frame_from_csv,
                       frame_to_csv, rod_gain_phase, simulate_response)
from .errors import (ConfigurationError, DomainError, MagclimbError, TrainingError)
from .experiment import (ExperimentPlan, compare_models, compare_sensors,
                         generate_dataset, split_by_pool, windows_to_arrays)
from .models import (MODEL_KINDS, FittedClassifier, IcnnLstmConfig, evaluate,
                     train_classifier)
from .quality import METRIC_NAMES, quality_report, quality_table_csv

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_TRAINING = 4


class _CliError(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _fail(code, message):
    raise _CliError(code, message)


def _read_json(path, what):
    try:
        with open(path) as fh:
            return fh.read()
    except OSError as exc:
        _fail(EXIT_CONFIG, f"{what} {path}: {exc}")


def _parse_json(text, path):
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        _fail(EXIT_CONFIG, f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}")


def _resolve_seed(flag_seed, file_seed):
    if flag_seed is not None:
        return flag_seed
    env = os.environ.get("MAGCLIMB_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            _fail(EXIT_CONFIG, f"MAGCLIMB_SEED={env!r} is not an integer")
    return file_seed


def _out_dir(args):
    os.makedirs(args.out, exist_ok=True)
    return args.out


def _write_atomic(path, text):
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _write_manifest(out, command, config, seeds, artifacts, started):
    manifest = {
        "command": command,
        "tool_version": __version__,
        "config": config,
        "seeds": seeds,
        "artifacts": sorted(artifacts),
        "duration_s": time.time() - started,
    }
    _write_atomic(os.path.join(out, "run_manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _load_plan(args):
    plan = ExperimentPlan.from_json(_read_json(args.plan, "plan file"))
    overrides = {}
    seed = _resolve_seed(getattr(args, "seed", None), plan.master_seed)
    if seed != plan.master_seed:
        overrides["master_seed"] = seed
    if getattr(args, "epochs", None) is not None:
        overrides["epochs"] = args.epochs
    if getattr(args, "cutoff_hz", None) is not None:
        overrides["cutoff_hz"] = args.cutoff_hz
    if overrides:
        plan = dataclasses.replace(plan, **overrides)
    return plan


def _icnn_cfg(args):
    if getattr(args, "pool_window", None) is not None:
        return IcnnLstmConfig(pool_window=args.pool_window)
    return None


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    started = time.time()
    out = _out_dir(args)
    raw = _parse_json(_read_json(args.scenario, "scenario file"), args.scenario)
    try:
        scenario = SimScenario.from_json(json.dumps(raw))
    except (DomainError, ConfigurationError, TypeError, KeyError) as exc:
        _fail(EXIT_CONFIG, f"{args.scenario}: {exc}")
    seed = _resolve_seed(args.seed, scenario.seed)
    if seed != scenario.seed:
        scenario = dataclasses.replace(scenario, seed=seed)
    try:
        frame = simulate_response(scenario)
    except (ConfigurationError, DomainError) as exc:
        _fail(EXIT_SIMULATION, f"simulation error: {exc}")
    artifacts = ["signal.csv", "scenario.resolved.json"]
    frame_to_csv(frame, os.path.join(out, "signal.csv"))
    _write_atomic(os.path.join(out, "scenario.resolved.json"), scenario.to_json() + "\n")
    if not args.no_figures:
        report.signal_figure(frame, os.path.join(out, "signal.png"))
        artifacts.append("signal.png")
    _write_manifest(out, "simulate", json.loads(scenario.to_json()),
                    {"seed": scenario.seed}, artifacts, started)
    print(f"wrote {len(frame)} samples x {len(frame.channels)} channels to "
          f"{os.path.join(out, 'signal.csv')}")
    return EXIT_OK


def cmd_rod_response(args):
    started = time.time()
    out = _out_dir(args)
    raw = _parse_json(_read_json(args.rod, "rod file"), args.rod)
    try:
        rod = RodModel(**raw)
    except (DomainError, TypeError) as exc:
        _fail(EXIT_CONFIG, f"{args.rod}: {exc}")
    omega_max = args.omega_max
    if omega_max is None:
        omega_max = 10.0 * math.sqrt(rod.stiffness / rod.tip_mass)
    if args.omega_min <= 0 or omega_max <= args.omega_min or args.points < 2:
        _fail(EXIT_CONFIG, "need 0 < omega-min < omega-max and points >= 2")
    omegas = np.logspace(math.log10(args.omega_min), math.log10(omega_max),
                         args.points)
    gains = np.empty_like(omegas)
    phases = np.empty_like(omegas)
    for i, w in enumerate(omegas):
        gains[i], phases[i] = rod_gain_phase(float(w), rod)
    csv_path = os.path.join(out, "rod_response.csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write("omega_rad_s,gain,phase_rad\n")
        for w, g, p in zip(omegas, gains, phases):
            fh.write(f"{float(w)!r},{float(g)!r},{float(p)!r}\n")
    artifacts = ["rod_response.csv"]
    if not args.no_figures:
        report.rod_response_figure(omegas, gains, phases, os.path.join(out, "bode.png"))
        artifacts.append("bode.png")
    _write_manifest(out, "rod-response", {"rod": raw, "omega_min": args.omega_min,
                                          "omega_max": omega_max, "points": args.points},
                    {}, artifacts, started)
    print(f"wrote {len(omegas)} frequency points to {csv_path}")
    return EXIT_OK


def cmd_quality(args):
    started = time.time()
    out = _out_dir(args)
    try:
        frame = frame_from_csv(args.signal)
    except (OSError, ValueError, ConfigurationError) as exc:
        _fail(EXIT_CONFIG, f"{args.signal}: {exc}")
    rep = quality_report(frame)
    _write_atomic(os.path.join(out, "quality.json"), rep.to_json() + "\n")
    csv_path = os.path.join(out, "quality.csv")
    with open(csv_path, "w", newline="") as fh:
        fh.write("channel," + ",".join(METRIC_NAMES) + ",degenerate\n")
        for name, cq in rep.channels.items():
            cells = [("" if cq.metric(m) is None else repr(float(cq.metric(m))))
                     for m in METRIC_NAMES]
            fh.write(f"{name}," + ",".join(cells) + f",{int(cq.degenerate)}\n")
    artifacts = ["quality.json", "quality.csv"]
    if not args.no_figures:
        channels = [c for c in ("body_mag", "rod_mag") if c in rep.channels] \
            or list(rep.channels)[:2]
        report.quality_psd_figure(rep, os.path.join(out, "psd.png"), channels=channels)
        artifacts.append("psd.png")
    _write_manifest(out, "quality", {"signal": args.signal}, {}, artifacts, started)
    print(f"wrote quality metrics for {len(rep.channels)} channels to {csv_path}")
    return EXIT_OK


def cmd_preprocess(args):
    started = time.time()
    out = _out_dir(args)
    try:
        frame = frame_from_csv(args.signal)
    except (OSError, ValueError, ConfigurationError) as exc:
        _fail(EXIT_CONFIG, f"{args.signal}: {exc}")
    if args.axes:
        axes = tuple(args.axes.split(","))
    elif all(a in frame.channels for a in BODY_ACC_AXES):
        axes = BODY_ACC_AXES
    else:
        _fail(EXIT_CONFIG, "no acceleration axis triplet found; pass --axes")
    spec = dsp.PreprocessSpec(filter_order=args.order, cutoff_hz=args.cutoff_hz,
                              window_len=args.window, stride=args.stride,
                              normalization=args.normalization, axes=axes)
    try:
        windows, params = dsp.preprocess_frame(frame, spec)
    except (ConfigurationError, KeyError) as exc:
        _fail(EXIT_CONFIG, f"preprocess: {exc}")
    if not windows:
        _fail(EXIT_CONFIG, "signal shorter than one window")
    dsp.windows_to_csv(windows, os.path.join(out, "windows.csv"))
    sidecar = {"window_len": spec.window_len, "stride": spec.stride,
               "normalization": params.to_dict(), "filter": {
                   "order": spec.filter_order, "cutoff_hz": spec.cutoff_hz,
                   "sample_rate_hz": frame.sample_rate_hz},
               "axes": list(axes), "count": len(windows)}
    _write_atomic(os.path.join(out, "windows.manifest.json"),
                  json.dumps(sidecar, indent=2) + "\n")
    _write_manifest(out, "preprocess", sidecar, {},
                    ["windows.csv", "windows.manifest.json"], started)
    print(f"wrote {len(windows)} windows to {os.path.join(out, 'windows.csv')}")
    return EXIT_OK


def _comparison_pools(plan):
    level = max(plan.excitation_levels)
    dataset = generate_dataset(plan, levels=(level,), sensors=("rod",))
    train_w, test_w = split_by_pool(dataset)
    return windows_to_arrays(train_w), windows_to_arrays(test_w), level


def cmd_train(args):
    started = time.time()
    out = _out_dir(args)
    plan = _load_plan(args)
    (x_tr, y_tr), (x_te, y_te), level = _comparison_pools(plan)
    cfg = plan.train_config(plan.master_seed)
    fitted = train_classifier(args.model, x_tr, y_tr, cfg, icnn_cfg=_icnn_cfg(args))
    artifacts = [os.path.basename(p) for p in fitted.save(os.path.join(out, "model"))]
    rep = evaluate(fitted, x_te, y_te)
    _write_atomic(os.path.join(out, "eval.json"), rep.to_json() + "\n")
    artifacts.append("eval.json")
    if fitted.history is not None:
        _write_atomic(os.path.join(out, "history.json"),
                      json.dumps(fitted.history.to_dict(), indent=2) + "\n")
        artifacts.append("history.json")
        if not args.no_figures:
            report.history_figure(fitted.history, os.path.join(out, "history.png"))
            artifacts.append("history.png")
    if not args.no_figures:
        report.confusion_figure(rep, os.path.join(out, "confusion.png"),
                                title=args.model)
        artifacts.append("confusion.png")
    _write_manifest(out, "train", {"plan": json.loads(plan.to_json()),
                                   "model": args.model, "level": level},
                    {"master_seed": plan.master_seed}, artifacts, started)
    print(f"{args.model}: test accuracy {rep.accuracy:.4f} "
          f"({len(x_tr)} train / {len(x_te)} test windows, level {level})")
    return EXIT_OK


def cmd_evaluate(args):
    started = time.time()
    out = _out_dir(args)
    plan = _load_plan(args)
    try:
        fitted = FittedClassifier.load(args.model_path)
    except (OSError, ValueError, ConfigurationError) as exc:
        _fail(EXIT_CONFIG, f"model {args.model_path}: {exc}")
    _, (x_te, y_te), level = _comparison_pools(plan)
    rep = evaluate(fitted, x_te, y_te)
    _write_atomic(os.path.join(out, "eval.json"), rep.to_json() + "\n")
    artifacts = ["eval.json"]
    if not args.no_figures:
        report.confusion_figure(rep, os.path.join(out, "confusion.png"),
                                title=fitted.kind)
        artifacts.append("confusion.png")
    _write_manifest(out, "evaluate", {"plan": json.loads(plan.to_json()),
                                      "model_path": args.model_path, "level": level},
                    {"master_seed": plan.master_seed}, artifacts, started)
    print(rep.confusion_text())
    print(f"accuracy: {rep.accuracy:.4f}")
    return EXIT_OK


def cmd_compare_models(args):
    started = time.time()
    out = _out_dir(args)
    plan = _load_plan(args)
    models = tuple(args.models.split(",")) if args.models else MODEL_KINDS
    rep = compare_models(plan, models=models)
    _write_atomic(os.path.join(out, "model_comparison.json"), rep.to_json() + "\n")
    rep.grid_csv(os.path.join(out, "model_accuracy.csv"))
    artifacts = ["model_comparison.json", "model_accuracy.csv"]
    if not args.no_figures:
        report.model_comparison_figure(rep, os.path.join(out, "accuracy_runs.png"))
        artifacts.append("accuracy_runs.png")
        for model, best in rep.best_reports.items():
            name = f"confusion_{model}.png"
            report.confusion_figure(best, os.path.join(out, name), title=model)
            artifacts.append(name)
    _write_manifest(out, "compare-models", {"plan": json.loads(plan.to_json()),
                                            "models": list(models)},
                    {"master_seed": plan.master_seed}, artifacts, started)
    for model in rep.models():
        print(f"{model}: mean accuracy {rep.mean_accuracy(model):.4f} "
              f"(std {rep.std_accuracy(model):.4f} over {plan.runs} runs)")
    return EXIT_OK


def cmd_compare_sensors(args):
    started = time.time()
    out = _out_dir(args)
    plan = _load_plan(args)
    rep = compare_sensors(plan, include_training=not args.no_train)
    _write_atomic(os.path.join(out, "sensor_comparison.json"), rep.to_json() + "\n")
    artifacts = ["sensor_comparison.json", "quality_table.csv"]
    quality_table_csv(rep.quality, {"body": "body_mag", "rod": "rod_mag"},
                      os.path.join(out, "quality_table.csv"))
    if not args.no_train:
        grid_path = os.path.join(out, "sensor_accuracy.csv")
        with open(grid_path, "w", newline="") as fh:
            fh.write("level,body,rod\n")
            for row in rep.accuracy_grid():
                fh.write(f"{row['level']},{row['body']!r},{row['rod']!r}\n")
        artifacts.append("sensor_accuracy.csv")
    if not args.no_figures:
        report.quality_trend_figure(rep.quality, os.path.join(out, "quality_trends.png"))
        artifacts.append("quality_trends.png")
        if not args.no_train:
            report.sensor_accuracy_figure(rep, os.path.join(out, "sensor_accuracy.png"))
            artifacts.append("sensor_accuracy.png")
    _write_manifest(out, "compare-sensors", {"plan": json.loads(plan.to_json())},
                    {"master_seed": plan.master_seed}, artifacts, started)
    print(f"quality levels: {sorted(rep.quality)}; "
          f"accuracy cells: {len(rep.accuracy)}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _add_common(sub, seed=True):
    sub.add_argument("--out", required=True, help="output directory")
    sub.add_argument("--no-figures", action="store_true",
                     help="skip rendering figures next to the data outputs")
    if seed:
        sub.add_argument("--seed", type=int, default=None,
                         help="override the configured seed (MAGCLIMB_SEED fallback)")


def _add_plan_overrides(sub):
    sub.add_argument("--epochs", type=int, default=None)
    sub.add_argument("--cutoff-hz", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="magclimb",
        description="Hazard-state monitoring toolkit for magnetic-adhesion "
                    "climbing robots (synthetic data, preprocessing, "
                    "classifiers, and comparison reports).")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("simulate", help="synthesize a sensor recording")
    p.add_argument("scenario", help="scenario JSON file")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = subs.add_parser("rod-response", help="rod gain/phase over a frequency grid")
    p.add_argument("rod", help="rod JSON file (stiffness, damping, tip_mass)")
    p.add_argument("--omega-min", type=float, default=0.1)
    p.add_argument("--omega-max", type=float, default=None)
    p.add_argument("--points", type=int, default=500)
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_rod_response)

    p = subs.add_parser("quality", help="signal quality metrics for a recording")
    p.add_argument("signal", help="signal CSV file")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_quality)

    p = subs.add_parser("preprocess", help="filter, normalize, and window a recording")
    p.add_argument("signal", help="signal CSV file")
    p.add_argument("--axes", default=None, help="comma-separated channel names")
    p.add_argument("--order", type=int, default=dsp.DEFAULT_FILTER_ORDER)
    p.add_argument("--cutoff-hz", type=float, default=dsp.DEFAULT_CUTOFF_HZ)
    p.add_argument("--window", type=int, default=dsp.DEFAULT_WINDOW_LEN)
    p.add_argument("--stride", type=int, default=dsp.DEFAULT_WINDOW_STRIDE)
    p.add_argument("--normalization", choices=("minmax", "zscore"), default="minmax")
    _add_common(p, seed=False)
    p.set_defaults(func=cmd_preprocess)

    p = subs.add_parser("train", help="train one classifier on a plan's data")
    p.add_argument("plan", help="experiment plan JSON file")
    p.add_argument("--model", choices=MODEL_KINDS, default="icnn_lstm")
    p.add_argument("--pool-window", type=int, default=None)
    _add_plan_overrides(p)
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = subs.add_parser("evaluate", help="evaluate a saved model on a plan's test pool")
    p.add_argument("plan", help="experiment plan JSON file")
    p.add_argument("--model-path", required=True,
                   help="model file prefix written by train")
    _add_plan_overrides(p)
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("compare-models", help="repeated-run model comparison")
    p.add_argument("plan", help="experiment plan JSON file")
    p.add_argument("--models", default=None,
                   help=f"comma-separated subset of {','.join(MODEL_KINDS)}")
    _add_plan_overrides(p)
    _add_common(p)
    p.set_defaults(func=cmd_compare_models)

    p = subs.add_parser("compare-sensors", help="quality and accuracy per sensor/level")
    p.add_argument("plan", help="experiment plan JSON file")
    p.add_argument("--no-train", action="store_true",
                   help="only compute quality metrics, skip classifier training")
    _add_plan_overrides(p)
    _add_common(p)
    p.set_defaults(func=cmd_compare_sensors)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except _CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TrainingError as exc:
        print(f"training error: {exc}", file=sys.stderr)
        return EXIT_TRAINING
    except (ConfigurationError, DomainError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MagclimbError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
