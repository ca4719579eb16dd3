import csv
import json

import numpy as np
import pytest

from driftbench.bench import (METHODS, BenchConfig, ConfigError, build_detector, build_sequence,
                              derive_seed, dump_config, emit_report, load_config,
                              majority_confusion, run_ablation, run_benchmark,
                              summary_from_records, summary_rows, write_ablation)
from driftbench.core import BatchSequence
from driftbench.datasets import SyntheticDriftScenario

SMALL_SOURCE = {"kind": "fingerprinting", "rows_per_class": 60}
SMALL_FOREST = {"tree_count": 10, "max_depth": None}


def small_config(**kw):
    base = dict(source=dict(SMALL_SOURCE), repetitions=3, forest=dict(SMALL_FOREST), seed=3)
    base.update(kw)
    return BenchConfig(**base)


@pytest.fixture(scope="module")
def full_report():
    return run_benchmark(small_config(repetitions=10))


def test_all_methods_report_structure(full_report):
    assert [s.method for s in full_report.summaries] == list(METHODS)
    for s in full_report.summaries:
        c = s.confusion
        assert c.tp + c.tn + c.fp + c.fn == 30
        assert len(s.rep_rewards) == 10
        assert s.time_mean > 0.0
    assert len(full_report.records) == len(METHODS) * 10 * 30
    assert sum(full_report.ground_truth) == 10


def test_records_consistent_with_rewards(full_report):
    for s in full_report.summaries:
        for rep in range(10):
            total = sum(r["reward"] for r in full_report.records
                        if r["method"] == s.method and r["rep"] == rep)
            assert total == pytest.approx(s.rep_rewards[rep])
    for r in full_report.records:
        if r["decision"] == "TN":
            assert r["reward"] == pytest.approx(0.1)


def test_gain_shared_across_methods(full_report):
    gains = {}
    for r in full_report.records:
        if r["decision"] != "TN":
            gains.setdefault((r["rep"], r["batch"]), set()).add(r["f1_gain"])
    assert all(len(v) == 1 for v in gains.values())


def test_config_validation():
    for bad in (dict(repetitions=2), dict(methods=[]), dict(methods=["adwin", "kswin"]),
                dict(methods=["adwin", "adwin"]), dict(t_s=0.0), dict(seed=-1),
                dict(source={"kind": "rss"}), dict(source={"kind": "links", "length": 5, "x": 1}),
                dict(source={"kind": "manifest"}),
                dict(method_params={"cfpt": {"epochs": 5}}),
                dict(method_params={"adwin": {"params": {"window": 3}}})):
        with pytest.raises(ConfigError):
            small_config(**bad).validate()
    with pytest.raises(FileNotFoundError):
        small_config(source={"kind": "manifest", "path": "/nonexistent/m.json"}).validate()


def test_config_round_trip(tmp_path):
    cfg = small_config(methods=["cfpt", "ddm"], method_params={"ddm": {"signal": "low_confidence"}})
    p = tmp_path / "c.json"
    p.write_text(dump_config(cfg))
    back = load_config(p)
    assert dump_config(back) == dump_config(cfg)
    p.write_text(json.dumps({"methods": ["adwin"], "colour": "red"}))
    with pytest.raises(ConfigError):
        load_config(p)


def test_adwin_on_no_drift_sequence():
    seq = build_sequence(small_config().resolved_source(), 3)
    quiet = [b for b, d in zip(seq.incoming, seq.ground_truth_drift) if not d]
    no_drift = BatchSequence(seq.reference, quiet, [False] * len(quiet))
    report = run_benchmark(small_config(methods=["adwin"]), sequence=no_drift)
    c = report.summary("adwin").confusion
    assert c.fp + c.tn == len(quiet) and c.tp == c.fn == 0


def test_emit_report_files(tmp_path, full_report):
    paths = emit_report(full_report, tmp_path / "out")
    with open(paths["summary"]) as fh:
        rows = list(csv.DictReader(fh))
    assert [r["method"] for r in rows] == list(METHODS)
    with open(paths["rewards"]) as fh:
        rewards = list(csv.DictReader(fh))
    assert len(rewards) == len(full_report.records)
    last = [r for r in rewards if r["method"] == "cfpt" and r["rep"] == "0"][-1]
    assert float(last["cumulative_reward"]) == pytest.approx(
        full_report.summary("cfpt").rep_rewards[0])
    assert summary_from_records(paths["records"])[0]["tp"] == summary_rows(full_report)[0]["tp"]


def test_emit_report_unwritable(tmp_path, full_report):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        emit_report(full_report, blocker / "sub")


def test_rerun_records_identical(tmp_path):
    cfg = small_config(methods=["cfpt", "tabautodrift", "ddm"])
    a = run_benchmark(cfg)
    b = run_benchmark(small_config(methods=["cfpt", "tabautodrift", "ddm"], out_dir="elsewhere"))
    pa = emit_report(a, tmp_path / "a")["records"]
    pb = emit_report(b, tmp_path / "b")["records"]
    assert pa.read_bytes() == pb.read_bytes()


def test_majority_vote_ties_are_no_alarm():
    alarms = np.array([[True, True, False, True], [False, True, False, True]])
    c = majority_confusion(alarms, [True, True, False, False])
    assert (c.tp, c.fn, c.tn, c.fp) == (1, 1, 1, 1)


def test_build_detector_errors():
    with pytest.raises(ConfigError):
        build_detector("kswin", {}, 0)
    with pytest.raises(ConfigError):
        build_detector("adwin", {"signal": "confidence", "window": 4}, 0)
    det = build_detector("cfpt", {"utility_threshold": 0.2, "boost": {"max_depth": 3}}, 5)
    assert det.threshold == 0.2 and det.cfg.rng_seed == 5


def test_derive_seed_stable():
    assert derive_seed(1, 2) == derive_seed(1, 2)
    assert derive_seed(1, 2) != derive_seed(2, 1)
    assert 0 <= derive_seed(7) < 2 ** 31


def test_scenario_source_single_pair():
    seq = build_sequence({"kind": "scenario", "drift_kind": "covariate", "magnitude": 1.0,
                          "samples_per_batch": 50}, 0)
    assert len(seq.incoming) == 1 and list(seq.ground_truth_drift) == [True]


# ablation

SCENARIO = SyntheticDriftScenario("new_class", samples_per_batch=200)


def test_ablation_single_point(tmp_path):
    rows = run_ablation("cfpt", [3], SCENARIO, seeds=[0, 1], forest=SMALL_FOREST)
    assert len(rows) == 1 and rows[0][:2] == (3, 5)
    assert 0.0 <= rows[0][2] <= 1.0
    path = write_ablation(rows, tmp_path / "a" / "abl.csv")
    assert path.read_text().splitlines()[0] == "train_epochs,retrain_epochs,median_utility"


def test_ablation_retrain_sweep_rows():
    rows = run_ablation("cfpt", [1, 2], SCENARIO, seeds=[0], vary="retrain", fixed_epochs=4,
                        forest=SMALL_FOREST)
    assert [r[:2] for r in rows] == [(4, 1), (4, 2)]


def test_ablation_errors():
    for kw in (dict(epoch_grid=[]), dict(epoch_grid=[0]), dict(method="adwin"),
               dict(vary="both"), dict(method="tabautodrift", vary="retrain"), dict(seeds=[]),
               dict(premise=SyntheticDriftScenario("none")), dict(premise="links")):
        args = dict(method="cfpt", epoch_grid=[1], premise=SCENARIO, seeds=[0])
        args.update(kw)
        with pytest.raises(ValueError):
            run_ablation(**args)
