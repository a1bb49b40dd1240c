"""Parasite-chain detection from approver-count samples.

A sample of approver counts (collected along a walk, or over a future cone) is
compared with a reference distribution by half-L1 distance, either on the
probabilities themselves (``dp``) or on their survival functions (``dq``).
A sample is flagged when the distance exceeds ``eta``.
"""

from __future__ import annotations

import math
import random
from collections import deque
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

import numpy as np

from .analytic import ProbabilityVector
from .tangle import GENESIS, Tangle
from .tipselect import WalkConfig, _draw, transition


class Metric(str, Enum):
    DP = "dp"
    DQ = "dq"


class InsufficientSample(ValueError):
    pass


def empirical_distribution(sample: Iterable[int]) -> ProbabilityVector:
    sample = list(sample)
    if not sample:
        raise InsufficientSample("empty sample")
    return ProbabilityVector.from_counts(sample, "empirical")


def distance_dp(p: ProbabilityVector, ref: ProbabilityVector) -> float:
    k = max(len(p), len(ref))
    return 0.5 * float(np.abs(p.padded(k) - ref.padded(k)).sum())


def distance_dq(p: ProbabilityVector, ref: ProbabilityVector) -> float:
    """Half-L1 distance between ``Q(n) = P(N >= n)`` curves.

    Unlike ``dp`` this is not capped at 1: it equals half the mean absolute
    shift between the two distributions.
    """
    k = max(len(p), len(ref))
    return 0.5 * float(np.abs(p.survival(k) - ref.survival(k)).sum())


def distance(metric: Metric | str, p: ProbabilityVector, ref: ProbabilityVector) -> float:
    return distance_dp(p, ref) if Metric(metric) is Metric.DP else distance_dq(p, ref)


def window_distances(windows: np.ndarray, ref: ProbabilityVector, metric: Metric | str) -> np.ndarray:
    """Distances of many equally sized samples at once (one sample per row)."""
    windows = np.asarray(windows, dtype=np.int64)
    if windows.ndim != 2 or windows.shape[1] == 0:
        raise ValueError("expected a (num_windows, S) array")
    w, s = windows.shape
    if w == 0:
        return np.empty(0)
    k = max(len(ref), int(windows.max()) + 1)
    hist = np.zeros((w, k))
    np.add.at(hist, (np.repeat(np.arange(w), s), windows.ravel()), 1.0)
    hist /= s
    r = ref.padded(k)
    if Metric(metric) is Metric.DP:
        return 0.5 * np.abs(hist - r).sum(axis=1)
    q = hist[:, ::-1].cumsum(axis=1)[:, ::-1]
    qr = r[::-1].cumsum()[::-1]
    return 0.5 * np.abs(q - qr).sum(axis=1)


@dataclass
class DetectorConfig:
    S: int
    reference: ProbabilityVector
    metric: Metric = Metric.DP
    eta: float = 1.0
    safe_alpha: float = 0.0
    # transactions issued less than this long ago are not sampled
    maturity: float = 2.0
    detect_in_safe_mode: bool = False

    def __post_init__(self):
        self.metric = Metric(self.metric)
        if self.S < 1:
            raise ValueError("S must be at least 1")
        if not 0.0 <= self.eta <= 1.0:
            raise ValueError("eta must lie in [0, 1]")


class SampleWindow:
    """FIFO of the last ``capacity`` approver counts."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.buffer: deque[int] = deque(maxlen=capacity)
        self.last_distance: float | None = None

    def push(self, n: int) -> None:
        self.buffer.append(n)

    @property
    def warm(self) -> bool:
        return len(self.buffer) == self.capacity

    def __len__(self) -> int:
        return len(self.buffer)


def walk_detect_step(window: SampleWindow, count: int, config: DetectorConfig) -> bool:
    window.push(count)
    if not window.warm:
        window.last_distance = None
        return False
    d = distance(config.metric, empirical_distribution(window.buffer), config.reference)
    window.last_distance = d
    return d > config.eta


@dataclass
class DetectionLog:
    rows: list[tuple] = field(default_factory=list)

    COLUMNS = ("step", "tx_id", "n", "d", "flagged", "mode")

    @property
    def flagged(self) -> bool:
        return any(r[4] for r in self.rows)


def guarded_tip_selection(
    tangle: Tangle,
    walk_config: WalkConfig,
    config: DetectorConfig,
    at_time: float,
    rng: random.Random,
    weights: Sequence[int] | None = None,
) -> tuple[int, DetectionLog]:
    """Walk to a tip while sampling approver counts; on the first flag go back
    to the start and finish the walk in safe mode (``safe_alpha``)."""
    safe = WalkConfig(alpha=config.safe_alpha, start=walk_config.start,
                      duplicate_edges=walk_config.duplicate_edges)
    if weights is None and (walk_config.alpha > 0 or config.safe_alpha > 0):
        weights = tangle.cumulative_weights(at_time)
    window = SampleWindow(config.S)
    log = DetectionLog()
    mode = "standard"
    x = walk_config.start
    step = 0
    while True:
        cfg = safe if mode == "safe" else walk_config
        candidates, probs = transition(tangle, x, cfg, at_time, weights)
        if not candidates:
            return x, log
        x = _draw(candidates, probs, rng)
        step += 1
        n = tangle.visible_edge_count(x, at_time)
        if mode == "safe" and not config.detect_in_safe_mode:
            log.rows.append((step, x, n, math.nan, False, mode))
            continue
        if n == 0 or at_time - tangle.issue_time(x) < config.maturity:
            log.rows.append((step, x, n, math.nan, False, mode))
            continue
        flagged = walk_detect_step(window, n, config)
        d = math.nan if window.last_distance is None else window.last_distance
        log.rows.append((step, x, n, d, flagged, mode))
        if flagged and mode == "standard":
            mode = "safe"
            x = walk_config.start


def cone_detect(
    tangle: Tangle,
    root: int,
    config: DetectorConfig,
    at_time: float,
    max_size: int | None = None,
    maturity: float | None = None,
    min_size: int | None = None,
) -> tuple[float, bool]:
    """Distance of the approver counts in the future cone of ``root`` (young
    transactions excluded) to the whole-Tangle reference."""
    maturity = config.maturity if maturity is None else maturity
    min_size = config.S if min_size is None else min_size
    cone = tangle.future_cone(root, at_time, max_size).members
    sample = [tangle.visible_edge_count(y, at_time) for y in cone
              if at_time - tangle.issue_time(y) >= maturity]
    if len(sample) < min_size:
        raise InsufficientSample(f"cone sample of {len(sample)} is below {min_size}")
    d = distance(config.metric, empirical_distribution(sample), config.reference)
    return d, d > config.eta


# -- calibration ------------------------------------------------------------


def walk_count_sequences(
    tangle: Tangle,
    num_walks: int,
    rng: random.Random,
    at_time: float | None = None,
    warmup: float = 0.0,
    maturity: float = 2.0,
    start: int = GENESIS,
) -> Iterable[list[int]]:
    """Visible edge counts along independent unbiased walks, keeping only
    transactions issued after ``warmup`` and at least ``maturity`` before
    ``at_time``; the final tip is never included."""
    t = tangle.clock if at_time is None else at_time
    approvers, reveal, issue = tangle._approvers, tangle._reveal, tangle._issue
    approvees = tangle._approvees
    rand = rng.random
    for _ in range(num_walks):
        counts = []
        x = start
        while True:
            cand = [y for y in approvers[x] if reveal[y] <= t]
            k = len(cand)
            if k == 0:
                break
            if x != start and issue[x] >= warmup and t - issue[x] >= maturity:
                counts.append(sum(approvees[y].count(x) for y in cand))
            x = cand[0] if k == 1 else cand[int(rand() * k)]
        yield counts


def sliding_windows(counts: Sequence[int], S: int) -> np.ndarray:
    counts = np.asarray(counts, dtype=np.int64)
    if len(counts) < S:
        return np.empty((0, S), dtype=np.int64)
    return np.lib.stride_tricks.sliding_window_view(counts, S)


@dataclass
class Calibration:
    distances: np.ndarray
    eta: float
    fpr_target: float
    S: int
    metric: Metric

    def cdf(self, d: float | np.ndarray) -> np.ndarray:
        return np.searchsorted(self.distances, d, side="right") / len(self.distances)

    def steps(self) -> np.ndarray:
        """Distinct distance values, i.e. the jump points of the CDF."""
        return np.unique(self.distances)

    def flag_rate(self, distances: np.ndarray) -> float:
        return float(np.mean(np.asarray(distances) > self.eta))

    def csv_rows(self) -> list[tuple[float, float]]:
        values = self.steps()
        return list(zip(values.tolist(), self.cdf(values).tolist()))


def eta_for_fpr(distances: np.ndarray, fpr: float) -> float:
    """Smallest observed distance ``v`` with ``P(d <= v) >= 1 - fpr``, so the
    honest flag rate ``P(d > v)`` is at most ``fpr``."""
    return float(np.quantile(distances, 1.0 - fpr, method="inverted_cdf"))


def honest_windows(
    tangle: Tangle,
    S: int,
    num_windows: int,
    rng: random.Random,
    at_time: float | None = None,
    warmup: float = 0.0,
    maturity: float = 2.0,
    max_walks: int = 1_000_000,
) -> np.ndarray:
    """Every-step sliding windows of size ``S`` along independent walks, until
    ``num_windows`` are collected."""
    chunks, total = [], 0
    for walks, counts in enumerate(walk_count_sequences(tangle, max_walks, rng, at_time, warmup, maturity)):
        w = sliding_windows(counts, S)
        chunks.append(w)
        total += len(w)
        if total >= num_windows:
            break
        if walks > 1000 and total == 0:
            raise InsufficientSample(f"walks are shorter than S={S}")
    if total == 0:
        raise InsufficientSample(f"walks are shorter than S={S}")
    return np.concatenate(chunks)[:num_windows]


def calibrate_from_windows(windows: np.ndarray, config: DetectorConfig, fpr: float = 0.01,
                           min_windows: int = 100) -> Calibration:
    """Empirical distance distribution of honest windows and the threshold
    meeting the target false-positive rate."""
    windows = np.asarray(windows)
    if len(windows) < min_windows:
        raise InsufficientSample(f"{len(windows)} windows, need at least {min_windows}")
    d = np.sort(window_distances(windows, config.reference, config.metric))
    return Calibration(d, eta_for_fpr(d, fpr), fpr, windows.shape[1], config.metric)


def calibrate_eta(
    tangle: Tangle,
    config: DetectorConfig,
    num_windows: int,
    rng: random.Random,
    fpr: float = 0.01,
    at_time: float | None = None,
    warmup: float = 0.0,
) -> Calibration:
    windows = honest_windows(tangle, config.S, num_windows, rng, at_time, warmup, config.maturity)
    return calibrate_from_windows(windows, config, fpr)
