"""Experimental protocol on synthetic data: scenario generation over wall
angles, excitation levels and plate counts; leakage-safe train/test pools;
sensor quality comparison; and the repeated-run model comparison.

Train and test windows always come from simulations with disjoint seeds so
overlapping windows can never straddle the split.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import zlib
from dataclasses import dataclass, asdict

import numpy as np

from . import dsp
from .dynamics import (BODY_ACC_AXES, ROD_ACC_AXES, DEFAULT_ADHESION, DEFAULT_ROD,
                       AdhesionConfig, ClimbState, ExcitationModel, SimScenario,
                       simulate_response)
from .errors import ConfigurationError, DomainError
from .models import (MODEL_KINDS, HazardLabel, TrainConfig, evaluate, one_hot,
                     train_classifier)
from .quality import quality_report

SENSOR_KINDS = ("body", "rod")
SENSOR_AXES = {"body": BODY_ACC_AXES, "rod": ROD_ACC_AXES}

PLATE_LABELS = {6: HazardLabel.SAFE, 5: HazardLabel.POTENTIAL_HAZARD,
                4: HazardLabel.HAZARD_OCCURRED}


def label_from_plate_count(plate_count: int) -> HazardLabel:
    """6 plates = safe, 5 = potential hazard, 4 = hazard occurred."""
    try:
        return PLATE_LABELS[plate_count]
    except KeyError:
        raise DomainError(
            f"plate count {plate_count} outside the monitored protocol (4..6)") from None


@dataclass(frozen=True)
class ExperimentPlan:
    """Full description of one synthetic data campaign."""

    wall_angles_deg: tuple = (55.0, 65.0)
    excitation_levels: tuple = (0, 1, 2, 3)
    plate_counts: tuple = (6, 5, 4)
    windows_per_class: int = 200
    split_ratio: float = 0.7
    runs: int = 5
    master_seed: int = 0
    repeats: int = 2              # simulation seeds per scenario and pool
    # simulation
    sample_rate_hz: float = 100.0
    sensor_noise_std: float = 0.02
    lead_in_s: float = 2.0        # settled before any window is cut
    # preprocessing: cutoff sits just above the plate-count resonance band
    cutoff_hz: float = 45.0
    filter_order: int = 4
    window_len: int = 128
    stride: int = 64
    normalization: str = "minmax"
    # training
    epochs: int = 30
    batch: int = 32
    patience: int = 5

    def __post_init__(self):
        if not 0.0 < self.split_ratio < 1.0:
            raise ConfigurationError("split_ratio must lie in (0, 1)")
        if not set(self.plate_counts) <= set(PLATE_LABELS):
            raise ConfigurationError(f"plate_counts must be within {sorted(PLATE_LABELS)}")
        if self.windows_per_class < 1 or self.runs < 1 or self.repeats < 1:
            raise ConfigurationError("counts must be >= 1")

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "ExperimentPlan":
        raw = json.loads(text)
        for key in ("wall_angles_deg", "excitation_levels", "plate_counts"):
            if key in raw:
                raw[key] = tuple(raw[key])
        return ExperimentPlan(**raw)

    def train_config(self, seed: int, checkpoint_path=None) -> TrainConfig:
        return TrainConfig(batch=self.batch, epochs=self.epochs,
                           patience=self.patience, seed=seed,
                           checkpoint_path=checkpoint_path)

    def preprocess_spec(self) -> dsp.PreprocessSpec:
        return dsp.PreprocessSpec(filter_order=self.filter_order,
                                  cutoff_hz=self.cutoff_hz,
                                  window_len=self.window_len, stride=self.stride,
                                  normalization=self.normalization)


@dataclass(frozen=True)
class WindowProvenance:
    scenario_id: str
    sensor: str
    level: int
    plate_count: int
    angle_deg: float
    pool: str                    # "train" | "test"
    sim_seed: int


@dataclass
class LabeledWindow:
    values: np.ndarray
    label: HazardLabel
    provenance: WindowProvenance

    def __post_init__(self):
        if self.label != label_from_plate_count(self.provenance.plate_count):
            raise ConfigurationError("label inconsistent with provenance plate count")


def _derive_seed(master: int, tag: str) -> int:
    return (master * 2654435761 + zlib.crc32(tag.encode())) & 0x7FFFFFFF


def _scenario(plan: ExperimentPlan, angle_deg: float, level: int, plates: int,
              seed: int, duration_s: float) -> SimScenario:
    return SimScenario(
        adhesion=AdhesionConfig(plate_count=plates,
                                per_plate_stiffness=DEFAULT_ADHESION.per_plate_stiffness,
                                mass=DEFAULT_ADHESION.mass,
                                damping=DEFAULT_ADHESION.damping),
        rod=DEFAULT_ROD,
        climb=ClimbState(robot_weight=68.6, load_weight=49.0,
                         wall_angle=math.radians(angle_deg)),
        excitation_level=level,
        sensor_noise_std=plan.sensor_noise_std,
        duration_s=duration_s,
        sample_rate_hz=plan.sample_rate_hz,
        seed=seed,
    )


def _pool_counts(plan: ExperimentPlan) -> dict:
    train = int(math.floor(plan.split_ratio * plan.windows_per_class))
    return {"train": train, "test": plan.windows_per_class - train}


def generate_dataset(plan: ExperimentPlan, levels=None, sensors=SENSOR_KINDS) -> list:
    """Simulate, preprocess, and window every scenario combination.

    For each (angle, level, plate count) the body and rod channels come from
    shared physical runs; the train and test pools use disjoint simulation
    seeds.  Normalization parameters are fitted on the train pool per sensor
    and reused on the test pool.  Deterministic per master seed.
    """
    levels = tuple(levels if levels is not None else plan.excitation_levels)
    spec = plan.preprocess_spec()
    counts = _pool_counts(plan)
    lead = int(round(plan.lead_in_s * plan.sample_rate_hz))

    # first pass: simulate and reduce to per-sensor magnitude signals
    signals = []  # (angle, level, plates, pool, sim_seed, sensor, magnitude, n_windows)
    for angle in plan.wall_angles_deg:
        for level in levels:
            for plates in plan.plate_counts:
                for pool, needed in counts.items():
                    per_rep = _spread(needed, plan.repeats)
                    for rep, n_windows in enumerate(per_rep):
                        if n_windows == 0:
                            continue
                        tag = f"sim:a{angle:g}:l{level}:n{plates}:{pool}:r{rep}"
                        seed = _derive_seed(plan.master_seed, tag)
                        n_samples = (n_windows - 1) * plan.stride + plan.window_len
                        duration = (n_samples + lead) / plan.sample_rate_hz
                        frame = simulate_response(
                            _scenario(plan, angle, level, plates, seed, duration))
                        for sensor in sensors:
                            filtered = _filtered_magnitude(frame, spec,
                                                           SENSOR_AXES[sensor])
                            signals.append((angle, level, plates, pool, seed,
                                            sensor, filtered[lead:], n_windows))

    # second pass: fit normalization on the train pool per sensor, then window
    params = {}
    for sensor in sensors:
        train_mags = [s[6] for s in signals if s[3] == "train" and s[5] == sensor]
        concat = np.concatenate(train_mags) if train_mags else np.zeros(1)
        if spec.normalization == "minmax":
            _, params[sensor] = dsp.minmax_normalize(concat)
        else:
            _, params[sensor] = dsp.zscore_normalize(concat)

    dataset = []
    for angle, level, plates, pool, seed, sensor, mag, n_windows in signals:
        if spec.normalization == "minmax":
            normed, _ = dsp.minmax_normalize(mag, params[sensor])
            normed = np.clip(normed, 0.0, 1.0)
        else:
            normed, _ = dsp.zscore_normalize(mag, params[sensor])
        windows = dsp.window_segments(normed, plan.window_len, plan.stride)[:n_windows]
        if len(windows) < n_windows:
            raise ConfigurationError("simulation shorter than the requested windows")
        prov_base = WindowProvenance(
            scenario_id=f"a{angle:g}-l{level}-n{plates}-{pool}-s{seed}",
            sensor=sensor, level=level, plate_count=plates, angle_deg=angle,
            pool=pool, sim_seed=seed)
        label = label_from_plate_count(plates)
        dataset.extend(LabeledWindow(values=w, label=label, provenance=prov_base)
                       for w in windows)
    return dataset


def _spread(total: int, parts: int) -> list:
    base = total // parts
    out = [base] * parts
    for i in range(total - base * parts):
        out[i] += 1
    return out


def _filtered_magnitude(frame, spec: dsp.PreprocessSpec, axes) -> np.ndarray:
    coeffs = dsp.design_butterworth(
        dsp.FilterSpec(spec.filter_order, spec.cutoff_hz, frame.sample_rate_hz))
    stacked = np.stack([dsp.filter_signal(coeffs, frame.channel(a)) for a in axes])
    return np.sqrt(np.sum(stacked * stacked, axis=0))


def select_windows(dataset, sensor=None, level=None, pool=None) -> list:
    out = dataset
    if sensor is not None:
        out = [w for w in out if w.provenance.sensor == sensor]
    if level is not None:
        out = [w for w in out if w.provenance.level == level]
    if pool is not None:
        out = [w for w in out if w.provenance.pool == pool]
    return out


def windows_to_arrays(windows) -> tuple:
    x = np.stack([w.values for w in windows])
    y = np.array([int(w.label) for w in windows], dtype=int)
    return x, y


def split_by_pool(dataset) -> tuple:
    """(train, test) according to the generation-time pool tags."""
    return (select_windows(dataset, pool="train"), select_windows(dataset, pool="test"))


def save_dataset(dataset, directory) -> None:
    """Persist labeled windows as windows.csv plus a JSON manifest carrying
    the label and provenance of every row."""
    os.makedirs(directory, exist_ok=True)
    dsp.windows_to_csv([w.values for w in dataset],
                       os.path.join(directory, "windows.csv"))
    manifest = {
        "count": len(dataset),
        "window_len": len(dataset[0].values) if dataset else 0,
        "rows": [{"label": int(w.label), **asdict(w.provenance)} for w in dataset],
    }
    with open(os.path.join(directory, "windows.manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2)


def load_dataset(directory) -> list:
    with open(os.path.join(directory, "windows.manifest.json")) as fh:
        manifest = json.load(fh)
    values = []
    with open(os.path.join(directory, "windows.csv")) as fh:
        next(fh)
        for line in fh:
            cells = line.strip().split(",")
            values.append(np.array([float(v) for v in cells[1:]]))
    if len(values) != manifest["count"]:
        raise ConfigurationError("dataset manifest does not match the CSV rows")
    out = []
    for vals, row in zip(values, manifest["rows"]):
        label = HazardLabel(row.pop("label"))
        out.append(LabeledWindow(values=vals, label=label,
                                 provenance=WindowProvenance(**row)))
    return out


def split_dataset(dataset, ratio: float, seed: int) -> tuple:
    """Seeded stratified shuffle split at window level.

    The train side gets exactly floor(ratio * len(dataset)) windows with
    per-class counts within one window of the exact ratio.
    """
    if not 0.0 < ratio < 1.0:
        raise ConfigurationError("split ratio must lie in (0, 1)")
    labels = np.array([int(w.label) for w in dataset])
    total_train = int(math.floor(ratio * len(dataset)))
    rng = np.random.default_rng(seed)

    by_class = {}
    for cls in sorted(set(labels.tolist())):
        idx = np.nonzero(labels == cls)[0]
        by_class[cls] = rng.permutation(idx)

    take = {cls: int(math.floor(ratio * len(idx))) for cls, idx in by_class.items()}
    remainder = total_train - sum(take.values())
    fractions = sorted(by_class,
                       key=lambda cls: (-(ratio * len(by_class[cls]) - take[cls]), cls))
    for cls in fractions[:remainder]:
        take[cls] += 1

    train_idx = np.concatenate([by_class[cls][:take[cls]] for cls in sorted(by_class)])
    train_set = set(train_idx.tolist())
    train = [dataset[i] for i in sorted(train_set)]
    test = [dataset[i] for i in range(len(dataset)) if i not in train_set]
    if not train or not test:
        raise ConfigurationError("split leaves one side empty")
    return train, test


# ---------------------------------------------------------------------------
# sensor comparison (quality + per-sensor training)
# ---------------------------------------------------------------------------

QUALITY_DURATION_S = 20.0


def quality_by_level(plan: ExperimentPlan) -> dict:
    """Quality metrics per excitation level with the robot state held fixed
    (all plates attached, first wall angle), mirroring a bench exciter sweep
    with exactly repeatable amplitude (no run-to-run drift).
    Returns level -> QualityReport (with body_mag/rod_mag channels).
    """
    reports = {}
    bench = ExcitationModel(amp_drift_sigma=0.0)
    for level in plan.excitation_levels:
        seed = _derive_seed(plan.master_seed, f"quality:l{level}")
        scenario = dataclasses.replace(
            _scenario(plan, plan.wall_angles_deg[0], level, 6, seed,
                      QUALITY_DURATION_S),
            excitation=bench)
        reports[level] = quality_report(simulate_response(scenario))
    return reports


@dataclass
class SensorComparisonReport:
    quality: dict                 # level -> QualityReport
    accuracy: dict                # (level, sensor) -> float or None
    plan: ExperimentPlan

    def accuracy_grid(self) -> list:
        rows = []
        for level in self.plan.excitation_levels:
            row = {"level": level}
            for sensor in SENSOR_KINDS:
                row[sensor] = self.accuracy.get((level, sensor))
            rows.append(row)
        return rows

    def to_json(self) -> str:
        return json.dumps({
            "accuracy_grid": self.accuracy_grid(),
            "quality": {str(lv): {name: cq.to_dict() for name, cq in rep.channels.items()
                                  if name in ("body_mag", "rod_mag")}
                        for lv, rep in self.quality.items()},
        }, indent=2)


def compare_sensors(plan: ExperimentPlan, include_training: bool = True,
                    model_kind: str = "icnn_lstm") -> SensorComparisonReport:
    """Quality metrics and per-(level, sensor) classification accuracy."""
    quality = quality_by_level(plan)
    accuracy = {}
    if include_training:
        for level in plan.excitation_levels:
            dataset = generate_dataset(plan, levels=(level,))
            for sensor in SENSOR_KINDS:
                train_w = select_windows(dataset, sensor=sensor, pool="train")
                test_w = select_windows(dataset, sensor=sensor, pool="test")
                x_tr, y_tr = windows_to_arrays(train_w)
                x_te, y_te = windows_to_arrays(test_w)
                seed = _derive_seed(plan.master_seed, f"sensors:l{level}:{sensor}")
                fitted = train_classifier(model_kind, x_tr, y_tr,
                                          plan.train_config(seed))
                accuracy[(level, sensor)] = evaluate(fitted, x_te, y_te).accuracy
    return SensorComparisonReport(quality=quality, accuracy=accuracy, plan=plan)


# ---------------------------------------------------------------------------
# model comparison (repeated runs)
# ---------------------------------------------------------------------------

@dataclass
class ModelRun:
    model: str
    run: int
    seed: int
    accuracy: float


@dataclass
class ModelComparisonReport:
    runs: list                    # ModelRun, ordered by (model, run)
    best_reports: dict            # model -> EvalReport of its best run
    comparison_level: int
    comparison_sensor: str

    def accuracies(self, model: str) -> list:
        return [r.accuracy for r in self.runs if r.model == model]

    def mean_accuracy(self, model: str) -> float:
        return float(np.mean(self.accuracies(model)))

    def std_accuracy(self, model: str) -> float:
        return float(np.std(self.accuracies(model)))

    def models(self) -> list:
        seen = []
        for r in self.runs:
            if r.model not in seen:
                seen.append(r.model)
        return seen

    def to_json(self) -> str:
        return json.dumps({
            "comparison_level": self.comparison_level,
            "comparison_sensor": self.comparison_sensor,
            "runs": [asdict(r) for r in self.runs],
            "summary": {m: {"mean": self.mean_accuracy(m), "std": self.std_accuracy(m)}
                        for m in self.models()},
            "best_confusions": {m: rep.to_dict() for m, rep in self.best_reports.items()},
        }, indent=2)

    def grid_csv(self, path) -> None:
        models = self.models()
        n_runs = max(r.run for r in self.runs) + 1
        with open(path, "w", newline="") as fh:
            fh.write("model," + ",".join(f"run_{i}" for i in range(n_runs))
                     + ",mean,std\n")
            for m in models:
                accs = self.accuracies(m)
                fh.write(m + "," + ",".join(repr(a) for a in accs)
                         + f",{self.mean_accuracy(m)!r},{self.std_accuracy(m)!r}\n")


def compare_models(plan: ExperimentPlan, models=MODEL_KINDS) -> ModelComparisonReport:
    """Train every model ``plan.runs`` times on identical train/test pools.

    Comparison data: rod-sensor windows at the highest configured excitation
    level (the bench conditions closest to live operation).  Per-run seeds are
    master_seed + run index; the shared dataset/pool split is fixed by the
    master seed alone.
    """
    for m in models:
        if m not in MODEL_KINDS:
            raise ConfigurationError(f"unknown model kind {m!r}")
    level = max(plan.excitation_levels)
    sensor = "rod"
    dataset = generate_dataset(plan, levels=(level,), sensors=(sensor,))
    train_w, test_w = split_by_pool(dataset)
    x_tr, y_tr = windows_to_arrays(train_w)
    x_te, y_te = windows_to_arrays(test_w)

    runs = []
    best_reports = {}
    best_acc = {}
    for model in models:
        for run in range(plan.runs):
            seed = plan.master_seed + run
            fitted = train_classifier(model, x_tr, y_tr, plan.train_config(seed))
            report = evaluate(fitted, x_te, y_te)
            runs.append(ModelRun(model=model, run=run, seed=seed,
                                 accuracy=report.accuracy))
            if model not in best_acc or report.accuracy > best_acc[model]:
                best_acc[model] = report.accuracy
                best_reports[model] = report
    return ModelComparisonReport(runs=runs, best_reports=best_reports,
                                 comparison_level=level, comparison_sensor=sensor)
