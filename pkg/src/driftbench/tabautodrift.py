"""Transfer-gap drift detector built on masked-reconstruction pretraining.

An encoder pretrained on the incoming batch and a fresh one are both trained
to classify the reference batch; the mean absolute gap between their
per-epoch macro-F1 traces is the retraining utility. The deployed model is
never consulted.
"""

from __future__ import annotations

from .cfpt import UtilityTrace, calibrate_threshold, compute_utility
from .core import DetectorConfig, DriftVerdict, LabeledBatch
from .tab_repr import pretrain_masked, train_classifier

DEFAULTS = {
    "mask_ratio": 0.25,
    "pretrain_epochs": 5,
    "hidden_width": 64,
    "step_count": 2,
    "learning_rate": 0.02,
    "batch_size": 256,
    "optimizer": "adam",
}


def _settings(cfg: DetectorConfig) -> dict:
    out = dict(DEFAULTS)
    out.update(cfg.extra.get("tabautodrift", {}))
    unknown = set(out) - set(DEFAULTS)
    if unknown:
        raise ValueError(f"unknown TabAutoDrift settings: {sorted(unknown)}")
    return out


def tabautodrift_utility(m0, d0: LabeledBatch, d1: LabeledBatch,
                         cfg: DetectorConfig = DetectorConfig()) -> UtilityTrace:
    """Utility for one pair; ``m0`` is accepted for interface parity and ignored.

    In the returned trace ``f1_train`` is the fresh run and ``f1_retrain`` the
    transferred one.
    """
    if d0.labels is None:
        raise ValueError("reference batch needs labels")
    s = _settings(cfg)
    net = dict(hidden_width=s["hidden_width"], step_count=s["step_count"],
               learning_rate=s["learning_rate"], batch_size=s["batch_size"],
               optimizer=s["optimizer"])
    encoder, _ = pretrain_masked(d1.without_labels(), s["mask_ratio"], s["pretrain_epochs"],
                                 rng_seed=cfg.rng_seed, **net)
    class_count = int(d0.labels.max()) + 1
    # both runs shuffle identically so the gap reflects only the initialization
    _, transferred = train_classifier(d0, cfg.train_epochs, cfg.rng_seed + 1, init=encoder,
                                      class_count=class_count, shuffle_seed=cfg.rng_seed, **net)
    _, fresh = train_classifier(d0, cfg.train_epochs, cfg.rng_seed + 1,
                                class_count=class_count, shuffle_seed=cfg.rng_seed, **net)
    return UtilityTrace(fresh.macro_f1, transferred.macro_f1,
                        compute_utility(fresh.macro_f1, transferred.macro_f1))


def tabautodrift_detect(d0: LabeledBatch, d1: LabeledBatch,
                        cfg: DetectorConfig = DetectorConfig()):
    threshold = cfg.utility_threshold
    if threshold is None:
        threshold = calibrate_threshold(None, d0, cfg, utility_fn=tabautodrift_utility,
                                        margin=cfg.threshold_margin)
    trace = tabautodrift_utility(None, d0, d1, cfg)
    verdict = DriftVerdict(trace.utility >= threshold, trace.utility, float(threshold),
                           "tabautodrift")
    return verdict, trace


class TabAutoDriftDetector:
    name = "tabautodrift"

    def __init__(self, cfg: DetectorConfig = DetectorConfig()):
        self.cfg = cfg
        self.threshold = cfg.utility_threshold

    def calibrate(self, m0, d0: LabeledBatch) -> float:
        if self.cfg.utility_threshold is None:
            self.threshold = calibrate_threshold(None, d0, self.cfg,
                                                 utility_fn=tabautodrift_utility,
                                                 margin=self.cfg.threshold_margin)
        return self.threshold

    def detect(self, m0, d0: LabeledBatch, d1: LabeledBatch) -> DriftVerdict:
        if self.threshold is None:
            self.calibrate(m0, d0)
        verdict, _ = tabautodrift_detect(d0, d1, self.cfg.with_threshold(self.threshold))
        return verdict
