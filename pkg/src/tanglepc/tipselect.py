"""Tip selection: uniform random tips (URTS) and the weighted random walk.

The walk moves from a transaction to one of its visible direct approvers ``y``
with probability proportional to ``exp(alpha * w_y)``, ``w_y`` being the
cumulative weight, and never steps back.  ``alpha = 0`` is the unbiased walk.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Sequence

from .tangle import GENESIS, Tangle, TangleError


class NotATip(TangleError):
    pass


@dataclass(frozen=True)
class WalkConfig:
    alpha: float = 0.0
    start: int = GENESIS
    # "once": an approver that picked x twice is one candidate; "twice": two.
    duplicate_edges: str = "once"

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if self.duplicate_edges not in ("once", "twice"):
            raise ValueError("duplicate_edges is 'once' or 'twice'")


@dataclass
class WalkTrace:
    path: list[int] = field(default_factory=list)
    approver_counts: list[int] = field(default_factory=list)

    @property
    def tip(self) -> int:
        return self.path[-1]


def urts_select(tangle: Tangle, at_time: float, rng: random.Random, tips: Sequence[int] | None = None) -> tuple[int, int]:
    """Two independent uniform draws from the tip set (they may coincide)."""
    if tips is None:
        tips = sorted(tangle.tips(at_time))
    if not tips:
        raise TangleError("no revealed tip")
    return tips[int(rng.random() * len(tips))], tips[int(rng.random() * len(tips))]


def transition(
    tangle: Tangle,
    x: int,
    config: WalkConfig,
    at_time: float,
    weights: Sequence[int] | None = None,
) -> tuple[list[int], list[float]]:
    """Candidate next hops from ``x`` and their probabilities."""
    candidates = tangle.visible_approvers(x, at_time)
    if config.duplicate_edges == "twice":
        mult = [tangle.multiplicity(y, x) for y in candidates]
    else:
        mult = [1] * len(candidates)
    if not candidates:
        return [], []
    if config.alpha == 0.0 or len(candidates) == 1:
        total = sum(mult)
        return candidates, [m / total for m in mult]
    if weights is None:
        w = [tangle.cumulative_weight(y, at_time) for y in candidates]
    else:
        w = [weights[y] for y in candidates]
    top = max(w)
    # Shift by the largest weight; exp(alpha * w) overflows for deep txs.
    raw = [m * math.exp(config.alpha * (wy - top)) for m, wy in zip(mult, w)]
    total = sum(raw)
    return candidates, [r / total for r in raw]


def _draw(candidates: list[int], probs: list[float], rng: random.Random) -> int:
    if len(candidates) == 1:
        return candidates[0]
    u = rng.random()
    acc = 0.0
    for y, p in zip(candidates, probs):
        acc += p
        if u < acc:
            return y
    return candidates[-1]


def walk_step(
    tangle: Tangle,
    x: int,
    config: WalkConfig,
    at_time: float,
    rng: random.Random,
    weights: Sequence[int] | None = None,
) -> int:
    candidates, probs = transition(tangle, x, config, at_time, weights)
    if not candidates:
        raise NotATip(f"transaction {x} has no visible approver at {at_time}")
    return _draw(candidates, probs, rng)


def walk_select(
    tangle: Tangle,
    config: WalkConfig,
    at_time: float,
    rng: random.Random,
    weights: Sequence[int] | None = None,
) -> WalkTrace:
    """Walk from ``config.start`` to a tip, recording visible edge counts."""
    if not tangle.is_revealed(config.start, at_time):
        raise TangleError(f"start {config.start} is not revealed at {at_time}")
    if config.alpha > 0 and weights is None:
        weights = tangle.cumulative_weights(at_time)
    x = config.start
    trace = WalkTrace([x], [tangle.visible_edge_count(x, at_time)])
    while True:
        candidates, probs = transition(tangle, x, config, at_time, weights)
        if not candidates:
            return trace
        x = _draw(candidates, probs, rng)
        trace.path.append(x)
        trace.approver_counts.append(tangle.visible_edge_count(x, at_time))


def urw_tip(tangle: Tangle, at_time: float, rng: random.Random, start: int = GENESIS) -> int:
    """Unbiased walk without bookkeeping; the simulator's hot loop."""
    approvers = tangle._approvers
    reveal = tangle._reveal
    rand = rng.random
    x = start
    while True:
        cand = [y for y in approvers[x] if reveal[y] <= at_time]
        k = len(cand)
        if k == 0:
            return x
        x = cand[0] if k == 1 else cand[int(rand() * k)]


def exit_distribution(
    tangle: Tangle,
    config: WalkConfig,
    at_time: float,
    weights: Sequence[int] | None = None,
) -> dict[int, float]:
    """Exact probability of each tip being where a walk from ``config.start``
    ends, by pushing probability mass forward in id (topological) order."""
    if config.alpha > 0 and weights is None:
        weights = tangle.cumulative_weights(at_time)
    mass = {config.start: 1.0}
    out: dict[int, float] = {}
    for x in range(config.start, len(tangle)):
        m = mass.pop(x, 0.0)
        if m == 0.0:
            continue
        candidates, probs = transition(tangle, x, config, at_time, weights)
        if not candidates:
            out[x] = m
            continue
        for y, p in zip(candidates, probs):
            mass[y] = mass.get(y, 0.0) + m * p
    return out


def passage_probabilities(
    tangle: Tangle,
    config: WalkConfig,
    at_time: float,
    weights: Sequence[int] | None = None,
) -> list[float]:
    """Probability that a walk from ``config.start`` visits each transaction."""
    if config.alpha > 0 and weights is None:
        weights = tangle.cumulative_weights(at_time)
    visit = [0.0] * len(tangle)
    visit[config.start] = 1.0
    for x in range(config.start, len(tangle)):
        m = visit[x]
        if m == 0.0:
            continue
        candidates, probs = transition(tangle, x, config, at_time, weights)
        for y, p in zip(candidates, probs):
            visit[y] += m * p
    return visit
