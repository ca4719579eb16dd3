import json

import numpy as np
import pytest
from scipy.stats import ks_2samp

from driftbench.core import LabeledBatch, validate_batch
from driftbench.datasets import (DRIFT_KINDS, DatasetError, EmptyDatasetError,
                                 MalformedRowError, SchemaError, SyntheticDriftScenario,
                                 build_fingerprinting_protocol, build_links_protocol,
                                 gaussian_mixture_source, generate_synthetic,
                                 link_series_source, load_csv, load_manifest, read_manifest,
                                 write_sequence)
from driftbench.trees import fit_random_forest, predict_with_confidence


# CSV loading

def test_load_well_formed(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,y,label\n1,2,b\n3,4,a\n5,6,b\n")
    b = load_csv(p)
    assert b.features.shape == (3, 2)
    assert b.features[:, 0].tolist() == [1.0, 3.0, 5.0]
    assert b.labels.tolist() == [1, 0, 1]


def test_load_non_numeric_names_row_and_column(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,y,label\n1,2,a\n3,oops,a\n")
    with pytest.raises(MalformedRowError, match=r"row 3.*'y'"):
        load_csv(p)


def test_load_header_only(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,y,label\n")
    with pytest.raises(EmptyDatasetError, match="empty dataset"):
        load_csv(p)


def test_load_distinct_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_csv(tmp_path / "missing.csv")
    p = tmp_path / "a.csv"
    p.write_text("x,y\n1,2\n")
    with pytest.raises(SchemaError):
        load_csv(p, label_column="label")
    p.write_text("x,label\n1,a\n2\n")
    with pytest.raises(MalformedRowError):
        load_csv(p)
    p.write_text("x,label\nnan,a\n")
    with pytest.raises(MalformedRowError):
        load_csv(p)


def test_load_unlabeled_and_shared_label_map(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("x,label\n1,cat\n2,dog\n")
    q = tmp_path / "b.csv"
    q.write_text("x,label\n1,emu\n2,cat\n")
    mapping = {}
    load_csv(p, label_map=mapping)
    assert load_csv(q, label_map=mapping).labels.tolist() == [2, 0]
    r = tmp_path / "c.csv"
    r.write_text("x,z\n1,2\n")
    assert load_csv(r, label_column=None).labels is None


def test_sequence_round_trip(tmp_path):
    seq = build_fingerprinting_protocol(gaussian_mixture_source(13, 100), rng_seed=1)
    manifest = write_sequence(seq, tmp_path)
    back = load_manifest(manifest)
    assert list(back.ground_truth_drift) == list(seq.ground_truth_drift)
    assert np.array_equal(back.reference.features, seq.reference.features)
    assert np.array_equal(back.reference.labels, seq.reference.labels)
    for a, b in zip(back.incoming, seq.incoming):
        assert np.array_equal(a.features, b.features) and np.array_equal(a.labels, b.labels)


def test_manifest_errors(tmp_path):
    p = tmp_path / "m.json"
    p.write_text(json.dumps({"version": 1, "reference": "d0.csv", "batches": []}))
    with pytest.raises(FileNotFoundError):
        read_manifest(p)
    p.write_text(json.dumps({"version": 2, "reference": "d0.csv", "batches": []}))
    with pytest.raises(SchemaError):
        read_manifest(p)
    p.write_text("{not json")
    with pytest.raises(DatasetError):
        read_manifest(p)


# fingerprinting protocol

def test_fingerprinting_paper_scale():
    source = gaussian_mixture_source(23, 21957).take(np.arange(505_000))
    seq = build_fingerprinting_protocol(source)
    assert len(seq.incoming) == 30
    assert {b.n_rows for b in [seq.reference, *seq.incoming]} == {16_290}
    assert sum(seq.ground_truth_drift) == 10 and list(seq.ground_truth_drift).count(False) == 20


def test_fingerprinting_reduced_structure():
    seq = build_fingerprinting_protocol(gaussian_mixture_source(13, 100), rng_seed=3)
    sizes = {b.n_rows for b in [seq.reference, *seq.incoming]}
    assert sizes == {1300 // 31}
    assert set(seq.reference.labels) == {0, 1, 2}
    assert [i for i, d in enumerate(seq.ground_truth_drift, start=1) if d] == list(range(2, 31, 3))
    seen = set(seq.reference.labels.tolist())
    for b, drift in zip(seq.incoming, seq.ground_truth_drift):
        assert validate_batch(b) == []
        labels = set(b.labels.tolist())
        assert bool(labels - seen) == drift
        seen |= labels


def test_fingerprinting_deterministic_and_errors():
    src = gaussian_mixture_source(13, 100)
    a = build_fingerprinting_protocol(src, rng_seed=4)
    b = build_fingerprinting_protocol(src, rng_seed=4)
    assert all(np.array_equal(x.features, y.features) for x, y in zip(a.incoming, b.incoming))
    with pytest.raises(DatasetError):
        build_fingerprinting_protocol(gaussian_mixture_source(12, 100))
    with pytest.raises(DatasetError):
        build_fingerprinting_protocol(gaussian_mixture_source(13, 5))


# links protocol

def test_links_paper_scale():
    seq = build_links_protocol(link_series_source((3772, 1179, 1179, 1179, 1179)))
    assert len(seq.incoming) == 8
    assert {b.n_rows for b in [seq.reference, *seq.incoming]} == {943}
    assert seq.reference.n_features == 300
    assert list(seq.ground_truth_drift) == [False] * 3 + [True] * 5


def test_links_reduced_structure():
    seq = build_links_protocol(link_series_source((260, 60, 60, 60, 60), length=300), rng_seed=2)
    assert list(seq.ground_truth_drift) == [False, False, False, True, True, True, True, True]
    assert set(seq.reference.labels.tolist()) == {0}
    for b, drift in zip(seq.incoming, seq.ground_truth_drift):
        assert b.n_rows == 500 // 9
        assert (set(b.labels.tolist()) != {0}) == drift


def test_links_needs_anomaly_classes():
    with pytest.raises(DatasetError):
        build_links_protocol(link_series_source((200, 50, 50), length=50))


# synthetic generator

def test_every_kind_is_valid():
    for kind in DRIFT_KINDS:
        d0, d1 = generate_synthetic(SyntheticDriftScenario(kind, 1.0, samples_per_batch=120))
        assert validate_batch(d0) == [] and validate_batch(d1) == []
        assert d0.n_rows == d1.n_rows == 120


def test_negative_magnitude_rejected():
    with pytest.raises(ValueError):
        SyntheticDriftScenario("covariate", -0.5)
    with pytest.raises(ValueError):
        SyntheticDriftScenario("seasonal")


def test_none_is_iid():
    d0, d1 = generate_synthetic(SyntheticDriftScenario("none", rng_seed=5))
    gap = np.abs(d0.features.mean(axis=0) - d1.features.mean(axis=0))
    assert np.all(gap < 0.2)


def test_covariate_gap_matches_magnitude():
    d0, d1 = generate_synthetic(SyntheticDriftScenario("covariate", 3.0, rng_seed=6))
    gap = d1.features.mean(axis=0) - d0.features.mean(axis=0)
    assert np.all(np.abs(gap - 3.0) < 0.3)


def test_concept_keeps_features_changes_labels():
    d0, d1 = generate_synthetic(SyntheticDriftScenario("concept", 1.0, rng_seed=7))
    p_values = [ks_2samp(d0.features[:, j], d1.features[:, j]).pvalue
                for j in range(d0.n_features)]
    assert min(p_values) > 0.01 / d0.n_features
    m0 = fit_random_forest(d0, tree_count=30)
    pred, _ = predict_with_confidence(m0, d1)
    assert np.mean(pred == d1.labels) < 0.2
    assert np.mean(pred == (d1.labels - 1) % 3) > 0.8


def test_prior_probability_reweights():
    _, d1 = generate_synthetic(SyntheticDriftScenario("prior_probability", 2.0, rng_seed=8))
    counts = np.bincount(d1.labels, minlength=3)
    assert counts[0] > counts[1] > counts[2]


def test_new_class_adds_component():
    d0, d1 = generate_synthetic(SyntheticDriftScenario("new_class", rng_seed=9))
    assert set(d0.labels.tolist()) == {0, 1, 2}
    assert np.sum(d1.labels == 3) == 250


def test_generator_deterministic():
    s = SyntheticDriftScenario("dataset", 2.0, rng_seed=11)
    a, b = generate_synthetic(s), generate_synthetic(s)
    assert all(np.array_equal(x.features, y.features) for x, y in zip(a, b))


def test_sources_shape():
    g = gaussian_mixture_source(5, 10, feature_count=3)
    assert g.features.shape == (50, 3) and isinstance(g, LabeledBatch)
    s = link_series_source((4, 2, 2, 2, 2), length=40)
    assert s.features.shape == (12, 40) and np.bincount(s.labels).tolist() == [4, 2, 2, 2, 2]
