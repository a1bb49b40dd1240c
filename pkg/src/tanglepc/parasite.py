"""Secretly built, 1-pinned parasite chains.

Every construction starts with a double-spend transaction that approves the
root (and the root's first approvee).  The *main PC* is then extended by transactions that approve the root
and the previous main-PC transaction; how the remaining malicious transactions
attach is what distinguishes the kinds:

``spc``    every malicious transaction extends the main PC;
``pc1``    with probability ``1 - p_root`` a transaction instead approves two
           main-PC transactions whose in-PC approver count is below a cap;
``mimic``  the main-PC approver counts are made to track a target distribution,
           either by giving every main-PC tx a quota (drawn from the target
           or replayed from an honest count sequence) or by a greedy rule on
           the count histogram.

All malicious transactions stay hidden until ``reveal_time`` and are revealed
together.
"""

from __future__ import annotations

import heapq
import random
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

from .analytic import ProbabilityVector
from .detection import distance_dp, walk_count_sequences
from .tangle import Provenance, Tangle, TangleError

MALICIOUS = Provenance.MALICIOUS


class AttackKind(str, Enum):
    SPC = "spc"
    PC1 = "pc1"
    MIMIC = "mimic"


@dataclass
class AttackSpec:
    kind: AttackKind
    mu: float
    build_duration: float
    root: int | None = None  # None: pick an honest tip when the attack starts
    start: float = 0.0
    reveal_time: float | None = None
    p_root: float = 1.0
    count_cap: int = 2
    target_distribution: ProbabilityVector | None = None
    # mimic: "quota" or "greedy"; a template is replayed as quotas in order
    mimic_strategy: str = "quota"
    template: Sequence[int] | None = None

    def __post_init__(self):
        self.kind = AttackKind(self.kind)
        if self.mimic_strategy not in ("quota", "greedy"):
            raise ValueError("mimic_strategy is 'quota' or 'greedy'")
        if self.template is not None and any(n < 1 for n in self.template):
            raise ValueError("template counts must be at least 1")
        if self.mu <= 0:
            raise ValueError("mu must be positive")
        if self.build_duration < 0:
            raise ValueError("negative build duration")
        if not 0 < self.p_root <= 1:
            raise ValueError("p_root must lie in (0, 1]")
        if self.kind is AttackKind.SPC and self.p_root != 1.0:
            raise ValueError("a simple parasite chain has p_root = 1")
        if self.kind is AttackKind.MIMIC:
            target = self.target_distribution
            if target is None:
                raise ValueError("mimic attack needs a target distribution")
            if target[0] > 0:
                raise ValueError("main-PC transactions always have an approver; target must vanish at n = 0")

    @property
    def reveal(self) -> float:
        return self.start + self.build_duration if self.reveal_time is None else self.reveal_time

    def as_dict(self) -> dict:
        return {
            "kind": self.kind.value, "mu": self.mu, "build_duration": self.build_duration,
            "root": self.root, "start": self.start, "reveal_time": self.reveal,
            "p_root": self.p_root, "count_cap": self.count_cap,
            "mimic_strategy": self.mimic_strategy,
        }


@dataclass
class AttackReport:
    kind: AttackKind
    mu: float
    p_root: float
    duration: float
    root: int
    double_spend: int | None = None
    malicious: list[int] = field(default_factory=list)
    main_chain: list[int] = field(default_factory=list)
    in_pc_count: dict[int, int] = field(default_factory=dict)
    root_links: int = 0
    internal_links: int = 0
    external_links: int = 0
    residual_dp: float = float("nan")

    CSV_COLUMNS = ("kind", "mu", "p_root", "num_malicious", "root_links", "r", "mean_n_pc", "residual_dp")

    @property
    def num_malicious(self) -> int:
        return len(self.malicious)

    @property
    def effective_rate_r(self) -> float:
        return effective_rate(self, self.duration) if self.duration > 0 else 0.0

    @property
    def pc_internal_distribution(self) -> ProbabilityVector | None:
        if not self.malicious:
            return None
        return ProbabilityVector.from_counts(Counter(self.in_pc_count[m] for m in self.malicious), "P_PC")

    @property
    def mean_n_pc(self) -> float:
        if not self.malicious:
            return 0.0
        return sum(self.in_pc_count[m] for m in self.malicious) / len(self.malicious)

    def main_counts(self) -> list[int]:
        """In-PC approver counts along the main PC, oldest first, without the
        newest member (which cannot have been approved yet)."""
        return [self.in_pc_count[m] for m in self.main_chain[:-1]]

    def csv_row(self) -> tuple:
        return (self.kind.value, self.mu, self.p_root, self.num_malicious, self.root_links,
                self.effective_rate_r, self.mean_n_pc, self.residual_dp)


def effective_rate(report: AttackReport, duration: float) -> float:
    """Direct links to the root accumulated per unit time."""
    if duration <= 0:
        raise ValueError("duration must be positive")
    return report.root_links / duration


class ParasiteChainBuilder:
    """Attaches malicious transactions one arrival at a time, so an event loop
    can interleave them with honest arrivals."""

    def __init__(self, tangle: Tangle, spec: AttackSpec, rng: random.Random):
        self.tangle = tangle
        self.spec = spec
        self.rng = rng
        self.report: AttackReport | None = None
        self.anchor: int | None = None
        # mimic bookkeeping: prospective count -> heap of main-PC ids
        self._by_value: dict[int, list[int]] = {}
        self._hist: Counter[int] = Counter()
        self._value: dict[int, int] = {}
        self._quota: dict[int, int] = {}
        self._short: list[int] = []  # heap of main-PC ids below their quota
        self._template_pos = 0

    @property
    def started(self) -> bool:
        return self.report is not None

    def begin(self, t: float, root: int | None = None) -> None:
        spec = self.spec
        root = spec.root if root is None else root
        if root is None:
            raise ValueError("no root given")
        tangle = self.tangle
        if not 0 <= root < len(tangle):
            raise TangleError(f"unknown root {root}")
        if not tangle.is_revealed(root, t):
            raise TangleError(f"root {root} is not revealed at the attack start {t}")
        self.report = AttackReport(spec.kind, spec.mu, spec.p_root, spec.build_duration, root)
        approvees = tangle.approvees(root)
        self.anchor = approvees[0] if approvees else root

    def arrive(self, t: float) -> int:
        """Attach the next malicious transaction; the first one is the double spend."""
        if self.report.double_spend is None:
            ds = self._attach(t, (self.report.root, self.anchor))
            self.report.double_spend = ds
            self._add_main(ds)
            return ds
        kind = self.spec.kind
        if kind is AttackKind.SPC or (kind is AttackKind.PC1 and self.rng.random() < self.spec.p_root):
            return self._extend(t)
        if kind is AttackKind.PC1:
            return self._raise_pair(t)
        if self.spec.mimic_strategy == "greedy":
            return self._mimic_greedy(t)
        return self._mimic_quota(t)

    def finish(self) -> AttackReport:
        report = self.report
        if self.spec.target_distribution is not None and len(report.main_chain) > 1:
            report.residual_dp = distance_dp(
                ProbabilityVector.from_counts(report.main_counts()), self.spec.target_distribution)
        return report

    # -- attachment rules -------------------------------------------------

    def _attach(self, t: float, approvees: tuple[int, int]) -> int:
        report = self.report
        x = self.tangle.attach(t, approvees, MALICIOUS, reveal_time=self.spec.reveal)
        report.malicious.append(x)
        report.in_pc_count[x] = 0
        for a in approvees:
            if a == report.root:
                report.root_links += 1
            elif a in report.in_pc_count:
                report.internal_links += 1
                report.in_pc_count[a] += 1
            else:
                report.external_links += 1
        return x

    def _add_main(self, x: int) -> None:
        self.report.main_chain.append(x)
        if self.spec.kind is not AttackKind.MIMIC:
            return
        if self.spec.mimic_strategy == "greedy":
            self._set_value(x, 1)
        else:
            self._quota[x] = self._next_quota()
            if self._quota[x] > 1:
                heapq.heappush(self._short, x)

    def _extend(self, t: float) -> int:
        report = self.report
        x = self._attach(t, (report.root, report.main_chain[-1]))
        self._add_main(x)
        return x

    def _raise_pair(self, t: float) -> int:
        report = self.report
        cap = self.spec.count_cap
        below = [m for m in report.main_chain if report.in_pc_count[m] < cap]
        pool = below if len(below) >= 2 else report.main_chain
        if len(pool) >= 2:
            pair = tuple(self.rng.sample(pool, 2))
        else:
            pair = (pool[0], self.anchor)
        return self._attach(t, pair)

    # Quota mimic: a main-PC tx with quota n ends with n in-PC approvers (the
    # next extension supplies one, side transactions the other n - 1).  Side
    # transactions go to the oldest main-PC tx still below its quota.

    def _next_quota(self) -> int:
        template = self.spec.template
        if template:
            n = template[self._template_pos % len(template)]
            self._template_pos += 1
            return n
        target = self.spec.target_distribution
        u = self.rng.random()
        acc = 0.0
        for n in range(1, len(target)):
            acc += target[n]
            if u < acc:
                return n
        return max(1, len(target) - 1)

    def _mimic_quota(self, t: float) -> int:
        report = self.report
        newest = report.main_chain[-1]
        while self._short:
            x = self._short[0]
            have = report.in_pc_count[x] + (x == newest)
            if have < self._quota[x]:
                if have + 1 >= self._quota[x]:
                    heapq.heappop(self._short)
                return self._attach(t, (x, self.anchor))
            heapq.heappop(self._short)
        return self._extend(t)

    # Greedy mimic: every main-PC tx carries a prospective count (its in-PC count,
    # plus one for the newest, which the next extension will approve).  Each
    # arrival either extends the chain (adds a count of 1) or raises the
    # oldest tx holding some count value by one, whichever leaves the count
    # histogram closest to the target in total variation.  Ties go to the
    # extension.

    def _set_value(self, x: int, v: int) -> None:
        old = self._value.get(x)
        if old is not None:
            self._hist[old] -= 1
            if not self._hist[old]:
                del self._hist[old]
        self._value[x] = v
        self._hist[v] += 1
        heapq.heappush(self._by_value.setdefault(v, []), x)

    def _oldest_with(self, v: int) -> int:
        heap = self._by_value[v]
        while self._value[heap[0]] != v:
            heapq.heappop(heap)
        return heap[0]

    def _mimic_greedy(self, t: float) -> int:
        target = self.spec.target_distribution
        hist, n = self._hist, sum(self._hist.values())
        support = set(hist) | {v + 1 for v in hist} | {1}

        def dist(changes: dict[int, int], total: int) -> float:
            s = 0.0
            for v in support:
                s += abs((hist.get(v, 0) + changes.get(v, 0)) / total - target[v])
            return 0.5 * (s + 1.0 - sum(target[v] for v in support))

        # A raise must strictly improve on the current histogram, otherwise
        # counts far out in the tail (where the target is ~0) would be raised
        # forever at no change in distance.
        bar = dist({}, n) - 1e-12
        best = (dist({1: 1}, n + 1), len(self.tangle), None)
        for v in hist:
            d = dist({v: -1, v + 1: 1}, n)
            if d < bar and d < best[0] - 1e-12:
                best = (d, self._oldest_with(v), v)
        _, x, v = best
        if v is None:
            return self._extend(t)
        self._set_value(x, v + 1)
        return self._attach(t, (x, self.anchor))


def build(tangle: Tangle, spec: AttackSpec, rng: random.Random | None = None) -> AttackReport:
    """Build the whole chain into ``tangle`` starting at ``spec.start`` with
    Poisson(``mu``) arrivals, without interleaved honest traffic."""
    rng = rng or random.Random(0)
    # arrival times get their own stream so attachment choices do not shift them
    arrivals = random.Random(rng.getrandbits(64))
    builder = ParasiteChainBuilder(tangle, spec, rng)
    builder.begin(spec.start)
    end = min(spec.start + spec.build_duration, spec.reveal)
    t = spec.start
    while True:
        t += arrivals.expovariate(spec.mu)
        if t > end:
            break
        builder.arrive(t)
    return builder.finish()


def _check_kind(spec: AttackSpec, kind: AttackKind) -> None:
    if spec.kind is not kind:
        raise ValueError(f"expected a {kind.value} spec, got {spec.kind.value}")


def build_spc(tangle: Tangle, spec: AttackSpec, rng: random.Random | None = None) -> AttackReport:
    _check_kind(spec, AttackKind.SPC)
    return build(tangle, spec, rng)


def build_pc1(tangle: Tangle, spec: AttackSpec, rng: random.Random | None = None) -> AttackReport:
    _check_kind(spec, AttackKind.PC1)
    return build(tangle, spec, rng)


def build_mimic(tangle: Tangle, spec: AttackSpec, rng: random.Random | None = None) -> AttackReport:
    _check_kind(spec, AttackKind.MIMIC)
    return build(tangle, spec, rng)


def pc_a_root_probability(p_star: ProbabilityVector) -> float:
    """Extension probability that gives the main PC a share ``P*(2)`` of
    two-approver transactions when every side transaction raises two counts."""
    return 1.0 / (1.0 + 0.5 * p_star[2])


def pc_a_analytic(p_star: ProbabilityVector) -> tuple[float, float]:
    """(distance d_P of the idealised PC_A chain, r / mu)."""
    return 1.0 - p_star[1] - p_star[2], 1.0 / (1.0 + 0.5 * p_star[2])


def mimic_rate_ratio(target: ProbabilityVector) -> float:
    """r / mu when every main-PC tx with n in-PC approvers costs n - 1 side transactions."""
    return 1.0 / (1.0 + sum((n - 1) * target[n] for n in range(1, len(target))))


def walk_template(tangle: Tangle, num_walks: int, rng: random.Random, at_time: float | None = None,
                  warmup: float = 0.0, maturity: float = 2.0) -> list[int]:
    """Approver counts met along honest unbiased walks, concatenated; a
    mimic attacker replays them as main-PC quotas."""
    out = [n for counts in walk_count_sequences(tangle, num_walks, rng, at_time, warmup, maturity)
           for n in counts if n >= 1]
    if not out:
        raise ValueError("honest walks met no mature transaction")
    return out
