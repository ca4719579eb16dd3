"""Batch drift detectors that decide whether a deployed classifier needs retraining."""

from .baselines import BaselineDetector, baseline_detect_batch
from .bench import BenchConfig, BenchReport, emit_report, run_ablation, run_benchmark
from .cfpt import CFPTDetector, calibrate_threshold, cfpt_detect, compute_utility
from .core import BatchSequence, DetectorConfig, DriftVerdict, LabeledBatch
from .evaluation import (AlarmConfusion, Decision, RewardParams, aggregate_trimmed, f1_gain,
                         macro_f1, reward, score_sequence)
from .tabautodrift import TabAutoDriftDetector, tabautodrift_detect
from .trees import fit_random_forest

__all__ = [
    "AlarmConfusion", "BaselineDetector", "BatchSequence", "BenchConfig", "BenchReport",
    "CFPTDetector", "Decision", "DetectorConfig", "DriftVerdict", "LabeledBatch",
    "RewardParams", "TabAutoDriftDetector", "aggregate_trimmed", "baseline_detect_batch",
    "calibrate_threshold", "cfpt_detect", "compute_utility", "emit_report", "f1_gain",
    "fit_random_forest", "macro_f1", "reward", "run_ablation", "run_benchmark",
    "score_sequence", "tabautodrift_detect",
]
