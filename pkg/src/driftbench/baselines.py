"""Sequential drift detectors (Page-Hinkley, CUSUM, DDM, STEPD, ADWIN) and a batch adapter.

The batch adapter turns the deployed forest's per-row votes into a scalar
stream, feeds the reference rows and then the incoming rows, and reports
whether any alarm fired on the incoming part.
"""

from __future__ import annotations

import enum
import math
from typing import Optional

import numpy as np
from numba import njit

from .core import DriftVerdict, LabeledBatch
from .trees import RandomForest, predict_with_confidence


def _normal_sf(z: float) -> float:
    return 0.5 * math.erfc(z / math.sqrt(2.0))


class PageHinkley:
    """Alarm when ``m_t - min m`` exceeds ``threshold`` with ``m_t = sum(x - mean - delta)``."""

    name = "page_hinkley"

    def __init__(self, delta: float = 0.005, threshold: float = 50.0):
        self.delta, self.threshold = delta, threshold
        self.reset()

    def reset(self):
        self.samples_seen = 0
        self.mean = 0.0
        self.cum = 0.0
        self.cum_min = 0.0

    def update(self, x: float) -> bool:
        self.samples_seen += 1
        self.mean += (x - self.mean) / self.samples_seen
        self.cum += x - self.mean - self.delta
        self.cum_min = min(self.cum_min, self.cum)
        if self.cum - self.cum_min > self.threshold:
            self.reset()
            return True
        return False


class Cusum:
    """One-sided CUSUM: ``g = max(0, g + x - (mean + delta))``, alarm when ``g > threshold``."""

    name = "cusum"

    def __init__(self, delta: float = 0.005, threshold: float = 50.0):
        self.delta, self.threshold = delta, threshold
        self.reset()

    def reset(self):
        self.samples_seen = 0
        self.mean = 0.0
        self.g = 0.0

    def update(self, x: float) -> bool:
        self.samples_seen += 1
        self.mean += (x - self.mean) / self.samples_seen
        self.g = max(0.0, self.g + x - (self.mean + self.delta))
        if self.g > self.threshold:
            self.reset()
            return True
        return False


class Level(enum.Enum):
    STABLE = "stable"
    WARNING = "warning"
    DRIFT = "drift"


class DDM:
    """Error-rate monitor against its running minimum plus 2 (warning) / 3 (drift) std."""

    name = "ddm"

    def __init__(self, warm_up: int = 30, warning_level: float = 2.0, drift_level: float = 3.0):
        self.warm_up, self.warning_level, self.drift_level = warm_up, warning_level, drift_level
        self.reset()

    def reset(self):
        self.samples_seen = 0
        self.errors = 0
        self.p_min = math.inf
        self.s_min = math.inf
        self.level = Level.STABLE

    def update_level(self, error: bool) -> Level:
        self.samples_seen += 1
        self.errors += bool(error)
        n = self.samples_seen
        p = self.errors / n
        s = math.sqrt(p * (1 - p) / n)
        if n < self.warm_up:
            self.level = Level.STABLE
            return self.level
        if p + s < self.p_min + self.s_min:
            self.p_min, self.s_min = p, s
        # strict comparisons so a zero-variance minimum does not fire on equality
        if p + s > self.p_min + self.drift_level * self.s_min:
            self.reset()
            self.level = Level.DRIFT
        elif p + s > self.p_min + self.warning_level * self.s_min:
            self.level = Level.WARNING
        else:
            self.level = Level.STABLE
        return self.level

    def update(self, error: bool) -> bool:
        return self.update_level(error) is Level.DRIFT


class STEPD:
    """Equal-proportion test between the last ``window`` errors and all older ones."""

    name = "stepd"

    def __init__(self, window: int = 30, alpha_drift: float = 0.003):
        self.window, self.alpha_drift = window, alpha_drift
        self.reset()

    def reset(self):
        self.samples_seen = 0
        self.recent = []
        self.older_n = 0
        self.older_errors = 0
        self.recent_errors = 0
        self.last_p_value = 1.0

    def p_value(self) -> float:
        n_o, n_r = self.older_n, len(self.recent)
        r_o, r_r = self.older_errors, self.recent_errors
        p_hat = (r_o + r_r) / (n_o + n_r)
        if p_hat in (0.0, 1.0):
            return 1.0
        diff = r_r / n_r - r_o / n_o
        if diff <= 0:
            return 1.0
        corr = 0.5 * (1.0 / n_o + 1.0 / n_r)
        z = (abs(diff) - corr) / math.sqrt(p_hat * (1 - p_hat) * (1.0 / n_o + 1.0 / n_r))
        return _normal_sf(z)

    def update(self, error: bool) -> bool:
        self.samples_seen += 1
        e = int(bool(error))
        self.recent.append(e)
        self.recent_errors += e
        if len(self.recent) > self.window:
            old = self.recent.pop(0)
            self.recent_errors -= old
            self.older_n += 1
            self.older_errors += old
        if self.samples_seen < 2 * self.window:
            return False
        self.last_p_value = self.p_value()
        if self.last_p_value < self.alpha_drift:
            self.reset()
            return True
        return False


# --------------------------------------------------------------------------
# ADWIN

MAX_LEVELS = 48


@njit(cache=True)
def _adwin_insert(tot, var, cnt, state, x, max_buckets):
    # state = [width, total, variance_sum]
    w = state[0] + 1.0
    if w > 1.0:
        mean_old = state[1] / state[0]
        state[2] += (w - 1.0) / w * (x - mean_old) ** 2
    state[0] = w
    state[1] += x
    k = cnt[0]
    tot[0, k] = x
    var[0, k] = 0.0
    cnt[0] = k + 1
    level = 0
    while level < tot.shape[0] - 1 and cnt[level] > max_buckets:
        n = 2.0 ** level
        t1, t2 = tot[level, 0], tot[level, 1]
        v = var[level, 0] + var[level, 1] + n * n * (t1 / n - t2 / n) ** 2 / (2.0 * n)
        for j in range(cnt[level] - 2):
            tot[level, j] = tot[level, j + 2]
            var[level, j] = var[level, j + 2]
        cnt[level] -= 2
        k = cnt[level + 1]
        tot[level + 1, k] = t1 + t2
        var[level + 1, k] = v
        cnt[level + 1] = k + 1
        level += 1


@njit(cache=True)
def _adwin_drop_oldest(tot, var, cnt, state):
    top = tot.shape[0] - 1
    while top > 0 and cnt[top] == 0:
        top -= 1
    n_b = 2.0 ** top
    t_b = tot[top, 0]
    v_b = var[top, 0]
    for j in range(cnt[top] - 1):
        tot[top, j] = tot[top, j + 1]
        var[top, j] = var[top, j + 1]
    cnt[top] -= 1
    w = state[0]
    w_new = w - n_b
    if w_new <= 0:
        state[0] = 0.0
        state[1] = 0.0
        state[2] = 0.0
        return
    mean_new = (state[1] - t_b) / w_new
    state[2] -= v_b + n_b * w_new * (t_b / n_b - mean_new) ** 2 / w
    if state[2] < 0.0:
        state[2] = 0.0
    state[0] = w_new
    state[1] -= t_b


@njit(cache=True)
def _adwin_find_cut(tot, cnt, state, delta, min_window):
    """True if some split of the window into old/new parts differs beyond the bound."""
    w = state[0]
    if w < 2 * min_window:
        return False
    total = state[1]
    variance = state[2] / w
    log_term = math.log(2.0 * w / delta)
    n0 = 0.0
    s0 = 0.0
    for level in range(tot.shape[0] - 1, -1, -1):
        size = 2.0 ** level
        for j in range(cnt[level]):
            n0 += size
            s0 += tot[level, j]
            n1 = w - n0
            if n1 < min_window:
                return False
            if n0 < min_window:
                continue
            m = 1.0 / (1.0 / n0 + 1.0 / n1)
            eps = math.sqrt(2.0 / m * variance * log_term) + 2.0 / (3.0 * m) * log_term
            if abs(s0 / n0 - (total - s0) / n1) > eps:
                return True
    return False


@njit(cache=True)
def _adwin_run(xs, tot, var, cnt, state, delta, max_buckets, min_window, alarms):
    for i in range(xs.shape[0]):
        _adwin_insert(tot, var, cnt, state, xs[i], max_buckets)
        cut = False
        while _adwin_find_cut(tot, cnt, state, delta, min_window):
            _adwin_drop_oldest(tot, var, cnt, state)
            cut = True
        alarms[i] = cut


class ADWIN:
    """Adaptive window over an exponential bucket histogram.

    After each insertion every bucket boundary is tested as a split point; while
    the two sides' means differ by more than the variance-aware bound with
    confidence ``delta / width``, the oldest bucket is dropped.
    """

    name = "adwin"

    def __init__(self, delta: float = 0.002, max_buckets: int = 5, min_window: int = 5):
        if not 0.0 < delta <= 1.0:
            raise ValueError("delta must lie in (0, 1]")
        self.delta, self.max_buckets, self.min_window = delta, max_buckets, min_window
        self.reset()

    def reset(self):
        self.samples_seen = 0
        self._tot = np.zeros((MAX_LEVELS, self.max_buckets + 1))
        self._var = np.zeros((MAX_LEVELS, self.max_buckets + 1))
        self._cnt = np.zeros(MAX_LEVELS, dtype=np.int64)
        self._state = np.zeros(3)

    @property
    def width(self) -> int:
        return int(self._state[0])

    @property
    def mean(self) -> float:
        return float(self._state[1] / self._state[0]) if self._state[0] else 0.0

    @property
    def variance(self) -> float:
        return float(self._state[2] / self._state[0]) if self._state[0] else 0.0

    def bucket_sizes(self) -> list:
        """Bucket sizes from oldest to newest."""
        return [2 ** lv for lv in range(MAX_LEVELS - 1, -1, -1) for _ in range(self._cnt[lv])]

    def update_many(self, xs) -> np.ndarray:
        xs = np.ascontiguousarray(xs, dtype=float)
        if xs.size and (xs.min() < 0.0 or xs.max() > 1.0):
            raise ValueError("ADWIN inputs must lie in [0, 1]")
        alarms = np.zeros(xs.size, dtype=np.bool_)
        _adwin_run(xs, self._tot, self._var, self._cnt, self._state, self.delta,
                   self.max_buckets, self.min_window, alarms)
        self.samples_seen += xs.size
        return alarms

    def update(self, x: float) -> bool:
        return bool(self.update_many(np.array([x]))[0])


def _update_many_generic(det, xs) -> np.ndarray:
    return np.array([det.update(x) for x in xs], dtype=bool)


# --------------------------------------------------------------------------
# registry and batch adapter

DETECTORS = {
    "page_hinkley": PageHinkley,
    "cusum": Cusum,
    "ddm": DDM,
    "stepd": STEPD,
    "adwin": ADWIN,
}

SIGNALS = ("confidence", "uncertainty", "low_confidence")

# PH and CUSUM test for an upward mean shift, so they watch 1 - confidence;
# DDM and STEPD need error-like booleans.
DEFAULT_SIGNAL = {
    "page_hinkley": "uncertainty",
    "cusum": "uncertainty",
    "ddm": "low_confidence",
    "stepd": "low_confidence",
    "adwin": "confidence",
}


def make_detector(kind: str, **params):
    if kind not in DETECTORS:
        raise ValueError(f"unknown detector {kind!r}; expected one of {sorted(DETECTORS)}")
    return DETECTORS[kind](**params)


def feed(det, xs) -> np.ndarray:
    """Push a stream through a detector, returning the per-sample alarm flags."""
    if hasattr(det, "update_many"):
        return det.update_many(xs)
    return _update_many_generic(det, xs)


class BatchAdapter:
    """Maps a batch to one scalar per row from the deployed forest's votes."""

    def __init__(self, m0: RandomForest, signal: str = "confidence"):
        if signal not in SIGNALS:
            raise ValueError(f"unknown signal {signal!r}; expected one of {SIGNALS}")
        self.m0, self.signal = m0, signal

    def stream(self, batch: LabeledBatch) -> np.ndarray:
        if batch.n_rows == 0:
            return np.empty(0)
        _, conf = predict_with_confidence(self.m0, batch)
        if self.signal == "confidence":
            return conf
        if self.signal == "uncertainty":
            return 1.0 - conf
        return (conf < 0.5).astype(float)


def baseline_detect_batch(kind: str, m0: RandomForest, d0: LabeledBatch, d1: LabeledBatch,
                          params: Optional[dict] = None, signal: Optional[str] = None,
                          d0_stream: Optional[np.ndarray] = None) -> DriftVerdict:
    """Stream ``d0`` then ``d1``; retrain iff an alarm fires while ``d1`` is streamed.

    ``utility`` is the number of alarms during ``d1``. ``d0_stream`` may carry a
    precomputed signal for ``d0``.
    """
    det = make_detector(kind, **(params or {}))
    if d1.n_rows == 0:
        return DriftVerdict(False, 0.0, float("nan"), kind)
    adapter = BatchAdapter(m0, signal or DEFAULT_SIGNAL[kind])
    feed(det, adapter.stream(d0) if d0_stream is None else d0_stream)
    alarms = feed(det, adapter.stream(d1))
    return DriftVerdict(bool(alarms.any()), float(alarms.sum()), _threshold_of(det), kind)


def _threshold_of(det) -> float:
    for attr in ("threshold", "drift_level", "alpha_drift", "delta"):
        if hasattr(det, attr):
            return float(getattr(det, attr))
    return float("nan")


class BaselineDetector:
    """Batch-detector wrapper with the same calibrate/detect surface as the proposed methods."""

    def __init__(self, kind: str, params: Optional[dict] = None, signal: Optional[str] = None):
        make_detector(kind, **(params or {}))   # validate early
        self.name = kind
        self.params = dict(params or {})
        self.signal = signal

    def calibrate(self, m0, d0: LabeledBatch):
        # the reference segment of the stream is the same for every incoming batch
        adapter = BatchAdapter(m0, self.signal or DEFAULT_SIGNAL[self.name])
        self._reference = (m0, d0, adapter.stream(d0))
        return None

    def detect(self, m0, d0: LabeledBatch, d1: LabeledBatch) -> DriftVerdict:
        ref = getattr(self, "_reference", None)
        cached = ref[2] if ref is not None and ref[0] is m0 and ref[1] is d0 else None
        return baseline_detect_batch(self.name, m0, d0, d1, self.params, self.signal, cached)
