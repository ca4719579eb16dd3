"""Benchmark harness: every method over every batch of a sequence, repeated and scored."""

from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .baselines import DETECTORS, BaselineDetector
from .cfpt import CFPTDetector, cfpt_utility
from .core import BatchSequence, DetectorConfig
from .datasets import (SyntheticDriftScenario, build_fingerprinting_protocol,
                       build_links_protocol, gaussian_mixture_source, generate_synthetic,
                       link_series_source, load_manifest, read_manifest)
from .evaluation import (AlarmConfusion, Decision, RewardParams, aggregate_trimmed, f1_gain,
                         reward)
from .tabautodrift import TabAutoDriftDetector, tabautodrift_utility
from .trees import fit_random_forest

PROPOSED = ("cfpt", "tabautodrift")
METHODS = PROPOSED + tuple(DETECTORS)
SOURCE_KINDS = ("fingerprinting", "links", "manifest", "scenario")

SOURCE_DEFAULTS = {
    "fingerprinting": {"class_count": 23, "rows_per_class": 675, "feature_count": 8,
                       "class_separation": 2.0},
    "links": {"rows_per_class": [2600, 600, 600, 600, 600], "length": 300},
    "manifest": {"path": None},
    "scenario": {"drift_kind": "new_class", "magnitude": 0.0, "class_count": 3, "feature_count": 8,
                 "samples_per_batch": 500, "class_separation": 2.0},
}


class ConfigError(ValueError):
    pass


def derive_seed(*parts: int) -> int:
    """Stable 31-bit seed from integer parts."""
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0] >> 1)


@dataclass
class BenchConfig:
    methods: list = field(default_factory=lambda: list(METHODS))
    source: dict = field(default_factory=lambda: {"kind": "fingerprinting"})
    repetitions: int = 10
    t_s: float = 0.1
    method_params: dict = field(default_factory=dict)
    forest: dict = field(default_factory=lambda: {"tree_count": 100, "max_depth": None})
    out_dir: str = "bench_out"
    seed: int = 0

    def validate(self) -> "BenchConfig":
        if not self.methods:
            raise ConfigError("no methods selected")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigError(f"unknown method(s) {unknown}; expected a subset of {list(METHODS)}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("duplicate method names")
        if self.repetitions < 3:
            raise ConfigError("repetitions must be at least 3 for trimmed aggregation")
        if self.t_s <= 0:
            raise ConfigError("t_s must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")
        kind = self.source.get("kind")
        if kind not in SOURCE_KINDS:
            raise ConfigError(f"unknown source kind {kind!r}; expected one of {SOURCE_KINDS}")
        extra = set(self.source) - set(SOURCE_DEFAULTS[kind]) - {"kind"}
        if extra:
            raise ConfigError(f"unknown keys for source {kind!r}: {sorted(extra)}")
        if kind == "manifest":
            if not self.source.get("path"):
                raise ConfigError("manifest source needs a path")
            read_manifest(self.source["path"])
        bad = set(self.method_params) - set(METHODS)
        if bad:
            raise ConfigError(f"parameters given for unknown method(s) {sorted(bad)}")
        for m in self.methods:
            build_detector(m, self.method_params.get(m, {}), 0)
        return self

    def resolved_source(self) -> dict:
        out = {"kind": self.source.get("kind")}
        out.update(SOURCE_DEFAULTS.get(out["kind"], {}))
        out.update(self.source)
        return out

    def to_dict(self) -> dict:
        d = asdict(self)
        d["source"] = self.resolved_source()
        return d

    @classmethod
    def from_dict(cls, raw: dict) -> "BenchConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown config keys {sorted(unknown)}")
        return cls(**raw)


def load_config(path) -> BenchConfig:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config not found: {path}")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError(f"config {path} is not valid JSON: {e}") from None
    return BenchConfig.from_dict(raw)


def dump_config(cfg: BenchConfig) -> str:
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"


# --------------------------------------------------------------------------
# sequences and detectors


def build_sequence(source: dict, seed: int) -> BatchSequence:
    kind = source["kind"]
    params = {**SOURCE_DEFAULTS[kind], **source}
    params.pop("kind")
    if kind == "fingerprinting":
        src = gaussian_mixture_source(rng_seed=seed, **params)
        return build_fingerprinting_protocol(src, rng_seed=seed)
    if kind == "links":
        src = link_series_source(params["rows_per_class"], params["length"], rng_seed=seed)
        return build_links_protocol(src, rng_seed=seed)
    if kind == "manifest":
        return load_manifest(params["path"])
    scenario = SyntheticDriftScenario(kind=params.pop("drift_kind"), rng_seed=seed, **params)
    d0, d1 = generate_synthetic(scenario)
    return BatchSequence(d0, [d1], [scenario.kind != "none"])


def detector_config(params: dict, seed: int) -> DetectorConfig:
    params = dict(params)
    known = {f.name for f in fields(DetectorConfig)} - {"extra", "rng_seed"}
    cfg_kw = {k: params.pop(k) for k in list(params) if k in known}
    extra = {k: params.pop(k) for k in list(params) if k in ("boost", "tabautodrift")}
    if params:
        raise ConfigError(f"unknown detector parameters {sorted(params)}")
    return DetectorConfig(rng_seed=seed, extra=extra, **cfg_kw)


def build_detector(method: str, params: dict, seed: int):
    if method == "cfpt":
        return CFPTDetector(detector_config(params, seed))
    if method == "tabautodrift":
        return TabAutoDriftDetector(detector_config(params, seed))
    if method in DETECTORS:
        params = dict(params)
        signal = params.pop("signal", None)
        det_params = params.pop("params", {})
        if params:
            raise ConfigError(f"unknown keys for {method}: {sorted(params)}")
        try:
            return BaselineDetector(method, det_params, signal)
        except TypeError as e:
            raise ConfigError(f"bad parameters for {method}: {e}") from None
    raise ConfigError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# benchmark


@dataclass
class MethodSummary:
    method: str
    total_reward: float
    rep_rewards: list
    confusion: AlarmConfusion
    time_mean: float
    time_std: float


@dataclass
class BenchReport:
    config: dict
    summaries: list
    records: list           # one dict per (method, repetition, batch)
    ground_truth: list

    def summary(self, method: str) -> MethodSummary:
        for s in self.summaries:
            if s.method == method:
                return s
        raise KeyError(method)

    def records_json(self) -> str:
        """Machine-readable results; wall-clock timings are left out so reruns match byte for byte."""
        doc = {
            "config": self.config,
            "ground_truth": [bool(x) for x in self.ground_truth],
            "methods": [{
                "method": s.method,
                "total_reward": s.total_reward,
                "rep_rewards": s.rep_rewards,
                "confusion": s.confusion.as_dict(),
            } for s in self.summaries],
            "records": self.records,
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def majority_confusion(alarms: np.ndarray, truth) -> AlarmConfusion:
    """Confusion of the per-batch majority verdict over repetitions (ties count as no alarm)."""
    conf = AlarmConfusion()
    votes = alarms.mean(axis=0)
    for v, t in zip(votes, truth):
        conf.add(Decision.classify(bool(v > 0.5), bool(t)))
    return conf


def run_benchmark(cfg: BenchConfig, sequence: Optional[BatchSequence] = None,
                  progress=None) -> BenchReport:
    cfg.validate()
    seq = sequence if sequence is not None else build_sequence(cfg.resolved_source(), cfg.seed)
    truth = list(seq.ground_truth_drift)
    params = RewardParams(cfg.t_s)
    n_batches = len(seq.incoming)
    rewards = {m: np.zeros((cfg.repetitions, n_batches)) for m in cfg.methods}
    alarms = {m: np.zeros((cfg.repetitions, n_batches), dtype=bool) for m in cfg.methods}
    seconds = {m: [] for m in cfg.methods}
    records = []
    for rep in range(cfg.repetitions):
        rep_seed = derive_seed(cfg.seed, rep)
        m0 = fit_random_forest(seq.reference, rng_seed=rep_seed, **cfg.forest)
        gains = {}

        def gain_of(i):
            if i not in gains:
                gains[i] = f1_gain(m0, seq.reference, seq.incoming[i],
                                   rng_seed=derive_seed(rep_seed, i))
            return gains[i]

        for method in cfg.methods:
            det = build_detector(method, cfg.method_params.get(method, {}), rep_seed)
            det.calibrate(m0, seq.reference)
            for i, batch in enumerate(seq.incoming):
                t0 = time.perf_counter()
                verdict = det.detect(m0, seq.reference, batch)
                seconds[method].append(time.perf_counter() - t0)
                decision = Decision.classify(verdict.retrain, truth[i])
                g = 0.0 if decision is Decision.TN else gain_of(i)
                r = reward(decision, g, params)
                rewards[method][rep, i] = r
                alarms[method][rep, i] = verdict.retrain
                records.append({
                    "method": method, "rep": rep, "batch": i + 1,
                    "drift": bool(truth[i]), "retrain": bool(verdict.retrain),
                    "utility": _finite(verdict.utility),
                    "threshold": _finite(verdict.threshold_used),
                    "decision": decision.value, "f1_gain": g, "reward": r,
                })
            if progress:
                progress(f"rep {rep + 1}/{cfg.repetitions} {method} done")
    summaries = []
    for m in cfg.methods:
        per_rep = rewards[m].sum(axis=1)
        t = np.asarray(seconds[m])
        summaries.append(MethodSummary(
            m, aggregate_trimmed(per_rep), [float(x) for x in per_rep],
            majority_confusion(alarms[m], truth),
            float(t.mean()) if t.size else 0.0,
            float(t.std(ddof=1)) if t.size > 1 else 0.0))
    # where the files go is not part of the experiment
    experiment = {k: v for k, v in cfg.to_dict().items() if k != "out_dir"}
    return BenchReport(experiment, summaries, records, truth)


def _finite(x) -> Optional[float]:
    x = float(x)
    return x if math.isfinite(x) else None


SUMMARY_COLUMNS = ("method", "total_reward", "tp", "tn", "fp", "fn", "precision", "recall",
                   "f1", "time_mean_s", "time_std_s")


def summary_rows(report: BenchReport) -> list:
    rows = []
    for s in report.summaries:
        c = s.confusion.as_dict()
        rows.append({"method": s.method, "total_reward": s.total_reward,
                     **{k: c[k] for k in ("tp", "tn", "fp", "fn", "precision", "recall", "f1")},
                     "time_mean_s": s.time_mean, "time_std_s": s.time_std})
    return rows


def format_summary(rows: list) -> str:
    def fmt(v):
        if v is None:
            return "-"
        if isinstance(v, float):
            return f"{v:.4f}"
        return str(v)
    table = [list(SUMMARY_COLUMNS)] + [[fmt(r[c]) for c in SUMMARY_COLUMNS] for r in rows]
    widths = [max(len(row[j]) for row in table) for j in range(len(SUMMARY_COLUMNS))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip() for row in table)


def emit_report(report: BenchReport, out_dir) -> dict:
    """Write summary.csv, records.json and rewards.csv; returns their paths."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise OSError(f"cannot create output directory {out}: {e}") from None
    paths = {"summary": out / "summary.csv", "records": out / "records.json",
             "rewards": out / "rewards.csv"}
    with open(paths["summary"], "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS)
        w.writeheader()
        for row in summary_rows(report):
            w.writerow({k: ("" if v is None else v) for k, v in row.items()})
    paths["records"].write_text(report.records_json())
    with open(paths["rewards"], "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "rep", "batch", "reward", "cumulative_reward"])
        running = {}
        for r in report.records:
            key = (r["method"], r["rep"])
            running[key] = running.get(key, 0.0) + r["reward"]
            w.writerow([r["method"], r["rep"], r["batch"], r["reward"], running[key]])
    return paths


def summary_from_records(path) -> list:
    """Rebuild summary rows from a records.json file (timings are not stored there)."""
    doc = json.loads(Path(path).read_text())
    rows = []
    for m in doc["methods"]:
        c = m["confusion"]
        rows.append({"method": m["method"], "total_reward": m["total_reward"],
                     **{k: c[k] for k in ("tp", "tn", "fp", "fn", "precision", "recall", "f1")},
                     "time_mean_s": None, "time_std_s": None})
    return rows


# --------------------------------------------------------------------------
# ablation


def drift_pair(premise, seed: int):
    """A drifted (reference, incoming) pair for the ablation.

    ``premise`` is a SyntheticDriftScenario (reseeded) or ``"fingerprinting"``,
    which pairs the reference batch of a fingerprinting sequence with its first
    new-class batch.
    """
    if isinstance(premise, SyntheticDriftScenario):
        if premise.kind == "none":
            raise ValueError("ablation needs a drifted scenario")
        return generate_synthetic(_replace_seed(premise, seed))
    if premise == "fingerprinting":
        seq = build_sequence({"kind": "fingerprinting"}, seed)
        return seq.reference, seq.incoming[seq.ground_truth_drift.index(True)]
    raise ValueError(f"unknown ablation premise {premise!r}")


def run_ablation(method: str, epoch_grid, premise, seeds, vary: str = "train",
                 fixed_epochs: int = 5, params: Optional[dict] = None,
                 forest: Optional[dict] = None) -> list:
    """Median utility over ``seeds`` for each epoch count in ``epoch_grid``.

    ``vary="train"`` sweeps the reference-training epochs with retraining fixed,
    ``vary="retrain"`` the opposite (CFPT only). Returns rows of
    ``(train_epochs, retrain_epochs, median_utility)``.
    """
    grid = [int(e) for e in epoch_grid]
    if not grid:
        raise ValueError("empty epoch grid")
    if any(e < 1 for e in grid):
        raise ValueError("epoch counts must be positive")
    if method not in PROPOSED:
        raise ValueError(f"ablation supports {PROPOSED}, got {method!r}")
    if vary not in ("train", "retrain"):
        raise ValueError("vary must be 'train' or 'retrain'")
    if vary == "retrain" and method != "cfpt":
        raise ValueError("only CFPT has a retraining phase")
    seeds = list(seeds)
    if not seeds:
        raise ValueError("no seeds given")
    pairs = []
    for s in seeds:
        d0, d1 = drift_pair(premise, s)
        m0 = fit_random_forest(d0, rng_seed=s, **(forest or {})) if method == "cfpt" else None
        pairs.append((s, m0, d0, d1))
    utility_fn = cfpt_utility if method == "cfpt" else tabautodrift_utility
    rows = []
    for e in grid:
        train, retrain = (e, fixed_epochs) if vary == "train" else (fixed_epochs, e)
        us = []
        for s, m0, d0, d1 in pairs:
            cfg = detector_config({**(params or {}), "train_epochs": train,
                                   "retrain_epochs": retrain}, s)
            us.append(utility_fn(m0, d0, d1, cfg).utility)
        rows.append((train, retrain, float(np.median(us))))
    return rows


def write_ablation(rows, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["train_epochs", "retrain_epochs", "median_utility"])
        w.writerows(rows)
    return path


def _replace_seed(scenario: SyntheticDriftScenario, seed: int) -> SyntheticDriftScenario:
    d = scenario.as_dict()
    d["rng_seed"] = seed
    return SyntheticDriftScenario(**d)
