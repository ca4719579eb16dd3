import pytest

from driftbench.core import DetectorConfig
from driftbench.datasets import SyntheticDriftScenario, generate_synthetic
from driftbench.tabautodrift import (TabAutoDriftDetector, tabautodrift_detect,
                                     tabautodrift_utility)
from driftbench.trees import fit_random_forest


def _verdicts(kind, magnitude=0.0):
    out = []
    for seed in range(8):
        d0, d1 = generate_synthetic(SyntheticDriftScenario(kind, magnitude, rng_seed=seed))
        det = TabAutoDriftDetector(DetectorConfig(rng_seed=seed))
        det.calibrate(None, d0)
        out.append(det.detect(None, d0, d1))
    return out


def test_no_drift_no_alarm():
    assert sum(v.retrain for v in _verdicts("none")) <= 1


def test_dataset_shift_alarms():
    verdicts = _verdicts("dataset", 3.0)
    assert sum(v.retrain for v in verdicts) >= 7
    assert all(0.0 <= v.utility <= 1.0 for v in verdicts)


def test_traces_equal_length():
    d0, d1 = generate_synthetic(SyntheticDriftScenario("covariate", 1.0, samples_per_batch=200))
    trace = tabautodrift_utility(None, d0, d1, DetectorConfig(train_epochs=3))
    assert len(trace.f1_train) == len(trace.f1_retrain) == 3


def test_deployed_model_never_used():
    d0, d1 = generate_synthetic(SyntheticDriftScenario("new_class", samples_per_batch=200,
                                                       rng_seed=2))
    cfg = DetectorConfig(rng_seed=2)
    a = TabAutoDriftDetector(cfg)
    b = TabAutoDriftDetector(cfg)
    m_a = fit_random_forest(d0, tree_count=5, rng_seed=0)
    m_b = fit_random_forest(d0, tree_count=7, rng_seed=1)
    assert a.calibrate(m_a, d0) == b.calibrate(m_b, d0)
    assert a.detect(m_a, d0, d1) == b.detect(m_b, d0, d1)


def test_fixed_threshold_and_determinism():
    d0, d1 = generate_synthetic(SyntheticDriftScenario("none", samples_per_batch=200))
    cfg = DetectorConfig(utility_threshold=0.5)
    v1, t1 = tabautodrift_detect(d0, d1, cfg)
    v2, t2 = tabautodrift_detect(d0, d1, cfg)
    assert v1 == v2 and t1 == t2
    assert v1.threshold_used == 0.5 and v1.detector_name == "tabautodrift"


def test_unknown_setting_rejected():
    d0, d1 = generate_synthetic(SyntheticDriftScenario("none", samples_per_batch=60))
    cfg = DetectorConfig(utility_threshold=0.1, extra={"tabautodrift": {"bogus": 1}})
    with pytest.raises(ValueError):
        tabautodrift_detect(d0, d1, cfg)
