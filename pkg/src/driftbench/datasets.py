"""Batch sequences: CSV/manifest loading, the two batching protocols and synthetic drift.

Manifest format (JSON, ``"version": 1``)::

    {
      "version": 1,
      "label_column": "label",
      "feature_columns": ["f0", "f1"],      # optional, default: every other column
      "reference": "d0.csv",
      "batches": [{"path": "d1.csv", "drift": false}, ...],
      "class_names": ["pos_3", ...]          # optional, index = class id
    }

Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .core import BatchSequence, LabeledBatch

MANIFEST_VERSION = 1
DRIFT_KINDS = ("none", "covariate", "prior_probability", "concept", "dataset", "new_class")


class DatasetError(ValueError):
    pass


class MalformedRowError(DatasetError):
    pass


class SchemaError(DatasetError):
    pass


class EmptyDatasetError(DatasetError):
    pass


# --------------------------------------------------------------------------
# CSV and manifest I/O


@dataclass
class BatchManifest:
    reference: str
    batches: list                       # [(path, has_drift)]
    label_column: str = "label"
    feature_columns: Optional[list] = None
    class_names: list = field(default_factory=list)
    base_dir: str = "."

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def to_json(self) -> dict:
        return {
            "version": MANIFEST_VERSION,
            "label_column": self.label_column,
            "feature_columns": self.feature_columns,
            "reference": self.reference,
            "batches": [{"path": p, "drift": bool(d)} for p, d in self.batches],
            "class_names": list(self.class_names),
        }


def read_manifest(path) -> BatchManifest:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise DatasetError(f"manifest {path} is not valid JSON: {e}") from None
    if raw.get("version") != MANIFEST_VERSION:
        raise SchemaError(f"unsupported manifest version {raw.get('version')!r}")
    for key in ("reference", "batches"):
        if key not in raw:
            raise SchemaError(f"manifest missing key {key!r}")
    m = BatchManifest(
        reference=raw["reference"],
        batches=[(b["path"], bool(b["drift"])) for b in raw["batches"]],
        label_column=raw.get("label_column", "label"),
        feature_columns=raw.get("feature_columns"),
        class_names=list(raw.get("class_names") or []),
        base_dir=str(path.parent),
    )
    for p in [m.reference] + [b for b, _ in m.batches]:
        if not m.resolve(p).exists():
            raise FileNotFoundError(f"manifest references missing file: {p}")
    return m


def write_manifest(manifest: BatchManifest, path) -> None:
    Path(path).write_text(json.dumps(manifest.to_json(), indent=2) + "\n")


def _read_raw_csv(path, label_column: Optional[str], feature_columns: Optional[Sequence[str]]):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"data file not found: {path}")
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyDatasetError(f"{path}: empty dataset") from None
        if label_column is not None and label_column not in header:
            raise SchemaError(f"{path}: unknown label column {label_column!r}")
        if feature_columns is None:
            feature_columns = [h for h in header if h != label_column]
        missing = [c for c in feature_columns if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing feature columns {missing}")
        fidx = [header.index(c) for c in feature_columns]
        lidx = header.index(label_column) if label_column is not None else None
        rows, labels = [], []
        for lineno, rec in enumerate(reader, start=2):
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise MalformedRowError(
                    f"{path}: row {lineno} has {len(rec)} cells, header has {len(header)}")
            vals = []
            for j in fidx:
                try:
                    v = float(rec[j])
                except ValueError:
                    raise MalformedRowError(
                        f"{path}: row {lineno}, column {header[j]!r}: "
                        f"non-numeric value {rec[j]!r}") from None
                if not math.isfinite(v):
                    raise MalformedRowError(
                        f"{path}: row {lineno}, column {header[j]!r}: non-finite value")
                vals.append(v)
            rows.append(vals)
            if lidx is not None:
                labels.append(rec[lidx].strip())
    if not rows:
        raise EmptyDatasetError(f"{path}: empty dataset")
    return np.asarray(rows, dtype=float), labels, list(feature_columns)


def _label_sort_key(v: str):
    try:
        return (0, float(v), v)
    except ValueError:
        return (1, 0.0, v)


def load_csv(path, label_column: Optional[str] = "label",
             feature_columns: Optional[Sequence[str]] = None,
             label_map: Optional[dict] = None, batch_id: int = 0) -> LabeledBatch:
    """Read one CSV file into a batch.

    Raw label values are mapped to contiguous ids through ``label_map`` (which
    is extended in place with unseen values) or, when absent, in sorted order.
    """
    X, raw_labels, _ = _read_raw_csv(path, label_column, feature_columns)
    if label_column is None:
        return LabeledBatch(X, None, batch_id)
    if label_map is None:
        label_map = {v: i for i, v in enumerate(sorted(set(raw_labels), key=_label_sort_key))}
    else:
        for v in sorted(set(raw_labels) - set(label_map), key=_label_sort_key):
            label_map[v] = len(label_map)
    y = np.array([label_map[v] for v in raw_labels], dtype=np.int64)
    return LabeledBatch(X, y, batch_id)


def load_manifest(path) -> BatchSequence:
    """Load every batch named by a manifest with one shared label mapping.

    Reference classes get the lowest ids; classes first seen later are
    numbered in order of appearance.
    """
    m = read_manifest(path)
    label_map: dict = {}
    if m.class_names:
        label_map = {name: i for i, name in enumerate(m.class_names)}
    ref = load_csv(m.resolve(m.reference), m.label_column, m.feature_columns, label_map, 0)
    incoming = []
    for i, (p, _) in enumerate(m.batches, start=1):
        b = load_csv(m.resolve(p), m.label_column, m.feature_columns, label_map, i)
        if b.n_features != ref.n_features:
            raise SchemaError(f"{p}: column count differs from reference")
        incoming.append(b)
    names = [None] * len(label_map)
    for k, v in label_map.items():
        names[v] = k
    return BatchSequence(ref, incoming, [d for _, d in m.batches], class_names=tuple(names))


def write_csv(batch: LabeledBatch, path, feature_names: Optional[Sequence[str]] = None,
              label_column: str = "label", class_names: Optional[Sequence[str]] = None) -> None:
    names = list(feature_names) if feature_names else [f"f{j}" for j in range(batch.n_features)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ([label_column] if batch.labels is not None else []))
        for i in range(batch.n_rows):
            row = [repr(float(v)) for v in batch.features[i]]
            if batch.labels is not None:
                lab = int(batch.labels[i])
                row.append(class_names[lab] if class_names else str(lab))
            w.writerow(row)


def write_sequence(seq: BatchSequence, out_dir, prefix: str = "d") -> Path:
    """Write a sequence as CSV files plus ``manifest.json``; returns the manifest path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = [f"class_{i}" for i in range(_class_total(seq))]
    write_csv(seq.reference, out / f"{prefix}0.csv", class_names=names)
    batches = []
    for i, (b, d) in enumerate(zip(seq.incoming, seq.ground_truth_drift), start=1):
        write_csv(b, out / f"{prefix}{i}.csv", class_names=names)
        batches.append((f"{prefix}{i}.csv", d))
    manifest = BatchManifest(f"{prefix}0.csv", batches, class_names=names, base_dir=str(out))
    write_manifest(manifest, out / "manifest.json")
    return out / "manifest.json"


def _class_total(seq: BatchSequence) -> int:
    top = int(seq.reference.labels.max())
    for b in seq.incoming:
        if b.labels is not None and b.n_rows:
            top = max(top, int(b.labels.max()))
    return top + 1


# --------------------------------------------------------------------------
# synthetic sources


@dataclass(frozen=True)
class SyntheticDriftScenario:
    kind: str = "none"
    magnitude: float = 0.0
    class_count: int = 3
    feature_count: int = 8
    samples_per_batch: int = 500
    rng_seed: int = 0
    class_separation: float = 2.0   # std of the component means, in within-class std units

    def __post_init__(self):
        if self.kind not in DRIFT_KINDS:
            raise ValueError(f"unknown drift kind {self.kind!r}; expected one of {DRIFT_KINDS}")
        if self.magnitude < 0:
            raise ValueError("magnitude must be non-negative")
        if self.class_count < 1 or self.feature_count < 1 or self.samples_per_batch < 1:
            raise ValueError("class_count, feature_count and samples_per_batch must be positive")

    def as_dict(self) -> dict:
        return asdict(self)


def _balanced_labels(n: int, weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Class ids with counts as close to ``n * weights`` as integers allow, shuffled."""
    weights = np.asarray(weights, dtype=float)
    weights = weights / weights.sum()
    base = np.floor(n * weights).astype(int)
    rest = n - base.sum()
    if rest:
        frac = n * weights - base
        extra = rng.choice(len(weights), size=rest, replace=False, p=frac / frac.sum())
        base[extra] += 1
    y = np.repeat(np.arange(len(weights)), base)
    return rng.permutation(y)


def generate_synthetic(scenario: SyntheticDriftScenario):
    """Draw a labeled reference batch and an incoming batch with the requested drift.

    Classes are unit-variance Gaussian components. Drift kinds:

    * ``covariate``: every component mean moves by ``magnitude`` on every feature
    * ``prior_probability``: class ``k`` is reweighted by ``(1 + magnitude) ** -k``
    * ``concept``: a ``magnitude`` fraction of labels is rotated ``k -> k+1``
    * ``dataset``: covariate and concept together
    * ``new_class``: half of the incoming batch comes from an unseen component
    """
    s = scenario
    rng = np.random.default_rng(s.rng_seed)
    K, F, n = s.class_count, s.feature_count, s.samples_per_batch
    means = rng.normal(0.0, s.class_separation, size=(K + 1, F))
    uniform = np.ones(K)

    def draw(labels, shift=0.0):
        return means[labels] + shift + rng.normal(size=(len(labels), F))

    y0 = _balanced_labels(n, uniform, rng)
    d0 = LabeledBatch(draw(y0), y0, 0)

    kind = s.kind
    if kind == "none":
        y1 = _balanced_labels(n, uniform, rng)
        X1 = draw(y1)
    elif kind == "covariate":
        y1 = _balanced_labels(n, uniform, rng)
        X1 = draw(y1, s.magnitude)
    elif kind == "prior_probability":
        w = (1.0 + s.magnitude) ** -np.arange(K, dtype=float)
        y1 = rng.choice(K, size=n, p=w / w.sum())
        X1 = draw(y1)
    elif kind in ("concept", "dataset"):
        y1 = _balanced_labels(n, uniform, rng)
        X1 = draw(y1, s.magnitude if kind == "dataset" else 0.0)
        frac = min(s.magnitude, 1.0) if kind == "concept" else 1.0
        flip = rng.random(n) < frac
        y1 = np.where(flip, (y1 + 1) % K, y1)
    else:  # new_class
        n_new = n // 2
        y_old = _balanced_labels(n - n_new, uniform, rng)
        y1 = rng.permutation(np.concatenate([y_old, np.full(n_new, K)]))
        X1 = draw(y1)
    d1 = LabeledBatch(X1, y1, 1)
    return d0, d1


def gaussian_mixture_source(class_count: int = 23, rows_per_class: int = 675,
                            feature_count: int = 8, class_separation: float = 2.0,
                            rng_seed: int = 0) -> LabeledBatch:
    """Unit-variance Gaussian components, one per class; the default shape gives
    31 batches of 500 rows under the fingerprinting protocol."""
    rng = np.random.default_rng(rng_seed)
    means = rng.normal(0.0, class_separation, size=(class_count, feature_count))
    y = np.repeat(np.arange(class_count), rows_per_class)
    X = means[y] + rng.normal(size=(len(y), feature_count))
    return LabeledBatch(X, y)


LINK_CLASSES = ("normal", "step_drop", "transient_dips", "gradual_decay", "recurring_fades")


def link_series_source(rows_per_class: Sequence[int] = (2600, 600, 600, 600, 600),
                       length: int = 300, rng_seed: int = 0) -> LabeledBatch:
    """RSSI traces of wireless links: class 0 is normal, 1-4 are anomaly patterns.

    Every trace has a link-specific baseline in [-85, -55] dBm, a slow ripple
    and 1.5 dB measurement noise. Anomalies are an abrupt persistent drop, a
    few short dips, a linear decay and periodic fades.
    """
    rng = np.random.default_rng(rng_seed)
    t = np.arange(length, dtype=float)
    series, labels = [], []
    for cls, count in enumerate(rows_per_class):
        for _ in range(count):
            base = rng.uniform(-85.0, -55.0)
            ripple = rng.uniform(0.5, 2.0) * np.sin(2 * np.pi * t / rng.uniform(80, 200)
                                                      + rng.uniform(0, 2 * np.pi))
            x = base + ripple + rng.normal(0.0, 1.5, size=length)
            if cls == 1:
                at = rng.integers(length // 5, 4 * length // 5)
                x[at:] -= rng.uniform(6.0, 15.0)
            elif cls == 2:
                for _ in range(rng.integers(1, 4)):
                    at = rng.integers(0, length - 15)
                    x[at:at + rng.integers(4, 15)] -= rng.uniform(8.0, 20.0)
            elif cls == 3:
                start = rng.integers(0, length // 2)
                depth = rng.uniform(6.0, 15.0)
                x[start:] -= depth * (t[start:] - start) / (length - start)
            elif cls == 4:
                period = rng.integers(30, 80)
                width = rng.integers(3, 10)
                phase = rng.integers(0, period)
                fades = ((t.astype(int) + phase) % period) < width
                x[fades] -= rng.uniform(5.0, 12.0)
            series.append(x)
            labels.append(cls)
    order = rng.permutation(len(labels))
    return LabeledBatch(np.asarray(series)[order], np.asarray(labels)[order])


# --------------------------------------------------------------------------
# batching protocols


def _draw_rows(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """``k`` rows from ``pool``: without replacement when the pool is large enough."""
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if len(pool) == 0:
        raise DatasetError("cannot draw rows from an empty class pool")
    replace = k > len(pool)
    return rng.choice(pool, size=k, replace=replace)


def _stratified(pools: dict, classes: Sequence[int], k: int, rng) -> np.ndarray:
    quotas = np.full(len(classes), k // len(classes))
    quotas[rng.permutation(len(classes))[: k - quotas.sum()]] += 1
    return np.concatenate([_draw_rows(pools[c], q, rng) for c, q in zip(classes, quotas)])


def _relabel(batch: LabeledBatch, rows: np.ndarray, mapping: dict, batch_id: int,
             rng: np.random.Generator) -> LabeledBatch:
    rows = rng.permutation(rows)
    y = np.array([mapping[int(c)] for c in batch.labels[rows]], dtype=np.int64)
    return LabeledBatch(batch.features[rows], y, batch_id)


def build_fingerprinting_protocol(source: LabeledBatch, rng_seed: int = 0,
                                  n_batches: int = 31, reference_classes: int = 3,
                                  new_class_share: float = 1.0) -> BatchSequence:
    """Reference batch of 3 classes, then 30 batches where every third brings a new class.

    Batch positions 2, 5, ..., 29 hold rows of one never-seen class (mixed
    with reference-class rows when ``new_class_share < 1``) and are flagged as
    drift; all other batches are stratified resamples of the reference classes. Class ids are
    renumbered so that the reference classes are 0..2 and new classes follow in
    order of appearance. Every batch has ``len(source) // n_batches`` rows.
    """
    if source.labels is None:
        raise DatasetError("source needs labels")
    rng = np.random.default_rng(rng_seed)
    classes = np.unique(source.labels)
    drift_positions = list(range(2, n_batches, 3))
    needed = reference_classes + len(drift_positions)
    if not 0.0 < new_class_share <= 1.0:
        raise ValueError("new_class_share must lie in (0, 1]")
    if len(classes) < needed:
        raise DatasetError(f"need at least {needed} classes, source has {len(classes)}")
    size = source.n_rows // n_batches
    if size < 2 * reference_classes:
        raise DatasetError("too few samples for the requested number of batches")
    order = rng.permutation(classes)[:needed]
    ref_cls, new_cls = list(order[:reference_classes]), list(order[reference_classes:])
    mapping = {int(c): i for i, c in enumerate(order)}
    pools = {int(c): rng.permutation(np.nonzero(source.labels == c)[0]) for c in order}
    ref_cls = [int(c) for c in ref_cls]
    quotas = np.full(reference_classes, size // reference_classes)
    quotas[rng.permutation(reference_classes)[: size - quotas.sum()]] += 1

    # reference rows are drawn without replacement and never reused later
    ref_rows, held = [], {}
    for c, q in zip(ref_cls, quotas):
        if len(pools[c]) <= q:
            raise DatasetError(f"class {c} has too few samples for the reference batch")
        ref_rows.append(pools[c][:q])
        held[c] = pools[c][q:]
    reference = _relabel(source, np.concatenate(ref_rows), mapping, 0, rng)

    incoming, flags = [], []
    k_new = 0
    for pos in range(1, n_batches):
        if pos in drift_positions:
            c_new = int(new_cls[k_new])
            k_new += 1
            n_new = int(round(new_class_share * size))
            rows = _draw_rows(pools[c_new], n_new, rng)
            if n_new < size:
                rows = np.concatenate([rows, _stratified(held, ref_cls, size - n_new, rng)])
            flags.append(True)
        else:
            rows = _stratified(held, ref_cls, size, rng)
            flags.append(False)
        incoming.append(_relabel(source, rows, mapping, pos, rng))
    return BatchSequence(reference, incoming, flags)


def build_links_protocol(source: LabeledBatch, rng_seed: int = 0, normal_class: int = 0,
                         n_batches: int = 9, no_drift_batches: int = 3) -> BatchSequence:
    """Normal-only reference, three normal batches, then five anomaly batches.

    Drift batches 4-7 each hold one anomaly class; any further drift batch
    mixes all anomaly classes. Every batch has ``len(source) // n_batches`` rows.
    """
    if source.labels is None:
        raise DatasetError("source needs labels")
    rng = np.random.default_rng(rng_seed)
    classes = [int(c) for c in np.unique(source.labels)]
    if normal_class not in classes:
        raise DatasetError("source has no normal class")
    anomalies = [c for c in classes if c != normal_class]
    if len(anomalies) < 4:
        raise DatasetError(f"need at least 4 anomaly classes, source has {len(anomalies)}")
    size = source.n_rows // n_batches
    mapping = {normal_class: 0}
    for c in anomalies:
        mapping[c] = len(mapping)
    pools = {c: rng.permutation(np.nonzero(source.labels == c)[0]) for c in classes}
    normal = pools[normal_class]
    n_normal_batches = 1 + no_drift_batches
    if len(normal) >= n_normal_batches * size:
        normal_chunks = [normal[i * size:(i + 1) * size] for i in range(n_normal_batches)]
    else:
        normal_chunks = [_draw_rows(normal, size, rng) for _ in range(n_normal_batches)]
    reference = _relabel(source, normal_chunks[0], mapping, 0, rng)
    incoming, flags = [], []
    for pos in range(1, n_batches):
        if pos <= no_drift_batches:
            rows = normal_chunks[pos]
            flags.append(False)
        else:
            k = pos - no_drift_batches - 1
            if k < len(anomalies):
                rows = _draw_rows(pools[anomalies[k]], size, rng)
            else:
                rows = _stratified(pools, anomalies, size, rng)
            flags.append(True)
        incoming.append(_relabel(source, rows, mapping, pos, rng))
    return BatchSequence(reference, incoming, flags)
