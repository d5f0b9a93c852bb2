import math

import numpy as np
import pytest

from magclimb.errors import ConfigurationError, DomainError
from magclimb.experiment import (
    ExperimentPlan,
    LabeledWindow,
    WindowProvenance,
    compare_models,
    generate_dataset,
    label_from_plate_count,
    quality_by_level,
    select_windows,
    split_by_pool,
    split_dataset,
)
from magclimb.models import HazardLabel

def _small_plan(**kw):
    defaults = dict(windows_per_class=10, epochs=3, runs=2, master_seed=5)
    defaults.update(kw)
    return ExperimentPlan(**defaults)


# ---------------------------------------------------------------------------
# label protocol
# ---------------------------------------------------------------------------

def test_plate_count_labels():
    assert label_from_plate_count(6) == HazardLabel.SAFE
    assert label_from_plate_count(5) == HazardLabel.POTENTIAL_HAZARD
    assert label_from_plate_count(4) == HazardLabel.HAZARD_OCCURRED


@pytest.mark.parametrize("n", [0, 3, 7, -1])
def test_plate_count_out_of_protocol(n):
    with pytest.raises(DomainError):
        label_from_plate_count(n)


def test_labeled_window_consistency_enforced():
    prov = WindowProvenance(scenario_id="x", sensor="rod", level=1, plate_count=6,
                            angle_deg=55.0, pool="train", sim_seed=1)
    with pytest.raises(ConfigurationError):
        LabeledWindow(values=np.zeros(4), label=HazardLabel.HAZARD_OCCURRED,
                      provenance=prov)


# ---------------------------------------------------------------------------
# plan serialization
# ---------------------------------------------------------------------------

def test_plan_json_round_trip():
    plan = _small_plan(cutoff_hz=30.0, wall_angles_deg=(50.0,))
    back = ExperimentPlan.from_json(plan.to_json())
    assert back == plan


def test_plan_validation():
    with pytest.raises(ConfigurationError):
        ExperimentPlan(split_ratio=1.0)
    with pytest.raises(ConfigurationError):
        ExperimentPlan(plate_counts=(6, 3))


# ---------------------------------------------------------------------------
# dataset generation
# ---------------------------------------------------------------------------

def test_dataset_counts_per_combination():
    plan = _small_plan()
    dataset = generate_dataset(plan, levels=(2,))
    # per (angle, level, sensor): 3 classes x windows_per_class
    for angle in plan.wall_angles_deg:
        for sensor in ("body", "rod"):
            subset = [w for w in dataset
                      if w.provenance.angle_deg == angle
                      and w.provenance.sensor == sensor]
            assert len(subset) == 3 * plan.windows_per_class
            labels = [int(w.label) for w in subset]
            assert all(labels.count(cls) == plan.windows_per_class
                       for cls in range(3))


def test_dataset_dimensions_and_range():
    plan = _small_plan()
    dataset = generate_dataset(plan, levels=(3,), sensors=("rod",))
    for w in dataset:
        assert len(w.values) == plan.window_len
        assert np.all((w.values >= 0.0) & (w.values <= 1.0))


def test_dataset_regeneration_is_bit_identical():
    plan = _small_plan()
    a = generate_dataset(plan, levels=(1,), sensors=("rod",))
    b = generate_dataset(plan, levels=(1,), sensors=("rod",))
    assert len(a) == len(b)
    for wa, wb in zip(a, b):
        assert wa.label == wb.label
        assert wa.provenance == wb.provenance
        assert np.array_equal(wa.values, wb.values)


def test_dataset_pools_use_disjoint_seeds():
    dataset = generate_dataset(_small_plan(), levels=(0,), sensors=("body",))
    train_seeds = {w.provenance.sim_seed for w in dataset
                   if w.provenance.pool == "train"}
    test_seeds = {w.provenance.sim_seed for w in dataset
                  if w.provenance.pool == "test"}
    assert train_seeds and test_seeds
    assert train_seeds.isdisjoint(test_seeds)


def test_dataset_pool_sizes_follow_split_ratio():
    plan = _small_plan()
    dataset = generate_dataset(plan, levels=(0,), sensors=("rod",))
    train, test = split_by_pool(dataset)
    per_class_train = math.floor(plan.split_ratio * plan.windows_per_class)
    expected_train = per_class_train * 3 * len(plan.wall_angles_deg)
    assert len(train) == expected_train
    assert len(train) + len(test) == len(dataset)


def test_dataset_labels_match_provenance():
    dataset = generate_dataset(_small_plan(), levels=(1,), sensors=("rod",))
    for w in dataset:
        assert w.label == label_from_plate_count(w.provenance.plate_count)


def test_select_windows_filters():
    dataset = generate_dataset(_small_plan(), levels=(0, 1))
    lv1_rod = select_windows(dataset, sensor="rod", level=1)
    assert lv1_rod
    assert all(w.provenance.level == 1 and w.provenance.sensor == "rod"
               for w in lv1_rod)


# ---------------------------------------------------------------------------
# window-level split
# ---------------------------------------------------------------------------

def _synthetic_windows(counts, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for cls, n in counts.items():
        plate = {0: 6, 1: 5, 2: 4}[cls]
        for i in range(n):
            prov = WindowProvenance(scenario_id=f"s{cls}-{i}", sensor="rod",
                                    level=0, plate_count=plate, angle_deg=55.0,
                                    pool="train", sim_seed=i)
            out.append(LabeledWindow(values=rng.uniform(size=8),
                                     label=HazardLabel(cls), provenance=prov))
    return out


def test_split_sizes_exact():
    data = _synthetic_windows({0: 40, 1: 30, 2: 30})
    train, test = split_dataset(data, 0.7, seed=1)
    assert len(train) == 70
    assert len(test) == 30


def test_split_is_exact_partition():
    data = _synthetic_windows({0: 21, 1: 17, 2: 13})
    train, test = split_dataset(data, 0.7, seed=2)
    ids = lambda ws: sorted(id(w) for w in ws)
    assert len(train) + len(test) == len(data)
    assert set(ids(train)).isdisjoint(ids(test))
    assert sorted(ids(train) + ids(test)) == ids(data)


def test_split_stratified_within_one():
    data = _synthetic_windows({0: 33, 1: 41, 2: 26})
    train, _ = split_dataset(data, 0.7, seed=3)
    for cls, total in ((0, 33), (1, 41), (2, 26)):
        got = sum(1 for w in train if int(w.label) == cls)
        assert abs(got - 0.7 * total) <= 1.0


def test_split_deterministic_and_seed_sensitive():
    data = _synthetic_windows({0: 30, 1: 30, 2: 30})
    t1, _ = split_dataset(data, 0.7, seed=4)
    t2, _ = split_dataset(data, 0.7, seed=4)
    t3, _ = split_dataset(data, 0.7, seed=5)
    key = lambda ws: [w.provenance.scenario_id for w in ws]
    assert key(t1) == key(t2)
    assert key(t1) != key(t3)
    assert len(t3) == len(t1)


def test_split_rejects_bad_ratio():
    data = _synthetic_windows({0: 10, 1: 10, 2: 10})
    with pytest.raises(ConfigurationError):
        split_dataset(data, 0.0, seed=0)


# ---------------------------------------------------------------------------
# quality sweep and model comparison
# ---------------------------------------------------------------------------

def test_quality_by_level_covers_levels():
    plan = _small_plan(excitation_levels=(0, 1))
    reports = quality_by_level(plan)
    assert sorted(reports) == [0, 1]
    for rep in reports.values():
        assert {"body_mag", "rod_mag"} <= set(rep.channels)


def test_compare_models_shape_of_report():
    plan = _small_plan(windows_per_class=8, epochs=2, runs=2)
    report = compare_models(plan, models=("knn", "rf"))
    assert len(report.runs) == 4  # 2 models x 2 runs
    assert report.comparison_sensor == "rod"
    assert report.comparison_level == max(plan.excitation_levels)
    for model in ("knn", "rf"):
        accs = report.accuracies(model)
        assert len(accs) == plan.runs
        assert all(0.0 <= a <= 1.0 for a in accs)
        assert report.std_accuracy(model) == pytest.approx(float(np.std(accs)))
    assert set(report.best_reports) == {"knn", "rf"}
    trace = np.trace(report.best_reports["knn"].confusion)
    total = report.best_reports["knn"].confusion.sum()
    assert trace / total == pytest.approx(report.best_reports["knn"].accuracy)


def test_compare_models_deterministic_for_knn():
    plan = _small_plan(windows_per_class=8, runs=1)
    a = compare_models(plan, models=("knn",))
    b = compare_models(plan, models=("knn",))
    assert a.runs[0].accuracy == b.runs[0].accuracy
    assert a.to_json() == b.to_json()


def test_compare_models_rejects_unknown():
    with pytest.raises(ConfigurationError):
        compare_models(_small_plan(), models=("nope",))


# ---------------------------------------------------------------------------
# dataset persistence
# ---------------------------------------------------------------------------

def test_dataset_save_load_round_trip(tmp_path):
    from magclimb.experiment import load_dataset, save_dataset

    dataset = generate_dataset(_small_plan(windows_per_class=4), levels=(1,),
                               sensors=("rod",))
    save_dataset(dataset, tmp_path / "ds")
    back = load_dataset(tmp_path / "ds")
    assert len(back) == len(dataset)
    for wa, wb in zip(dataset, back):
        assert wa.label == wb.label
        assert wa.provenance == wb.provenance
        assert np.array_equal(wa.values, wb.values)
