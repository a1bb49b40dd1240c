"""Event-driven generation of honest Tangles and measurements on them.

Honest transactions arrive as a Poisson process of rate ``lam`` (per reveal
delay).  An arrival selects two tips against the Tangle as it is visible at its
issue time, attaches, and is revealed one time unit later.
"""

from __future__ import annotations

import math
import random
from collections import Counter, deque
from dataclasses import asdict, dataclass, field

import numpy as np

from .analytic import ProbabilityVector
from .parasite import AttackReport, AttackSpec, ParasiteChainBuilder
from .rng import np_stream, stream
from .tangle import GENESIS, REVEAL_DELAY, EdgePolicy, Provenance, Tangle, WeightTracker
from .tipselect import WalkConfig, exit_distribution, urw_tip, walk_select


@dataclass(frozen=True)
class SimConfig:
    lam: float
    edge_policy: EdgePolicy = EdgePolicy.SEM
    tip_selection: str = "urts"  # "urts" or "walk"
    alpha: float = 0.0
    horizon: float = 200.0
    warmup: float = 100.0
    seed: int = 0
    duplicate_edges: str = "once"

    def __post_init__(self):
        object.__setattr__(self, "edge_policy", EdgePolicy(self.edge_policy))
        if not self.lam > 0:
            raise ValueError("lambda must be positive")
        if self.tip_selection not in ("urts", "walk"):
            raise ValueError("tip_selection is 'urts' or 'walk'")
        if self.alpha < 0:
            raise ValueError("alpha must be non-negative")
        if not 0 <= self.warmup < self.horizon:
            raise ValueError("need 0 <= warmup < horizon")

    @property
    def walk(self) -> WalkConfig:
        return WalkConfig(alpha=self.alpha, duplicate_edges=self.duplicate_edges)

    def as_dict(self) -> dict:
        d = asdict(self)
        d["edge_policy"] = self.edge_policy.value
        return d


class _TipPool:
    """Tip set supporting O(1) insert, delete and uniform draw."""

    def __init__(self):
        self.items: list[int] = []
        self.where: dict[int, int] = {}

    def add(self, x: int) -> None:
        if x not in self.where:
            self.where[x] = len(self.items)
            self.items.append(x)

    def discard(self, x: int) -> None:
        i = self.where.pop(x, None)
        if i is None:
            return
        last = self.items.pop()
        if last != x:
            self.items[i] = last
            self.where[last] = i

    def __len__(self) -> int:
        return len(self.items)


@dataclass
class SimResult:
    tangle: Tangle
    config: SimConfig
    tip_counts: list[int] = field(default_factory=list)
    attack: AttackReport | None = None

    @property
    def mean_tips(self) -> float:
        return float(np.mean(self.tip_counts))


class Simulation:
    def __init__(self, config: SimConfig, attack: AttackSpec | None = None):
        self.config = config
        self.attack_spec = attack
        self.tangle = Tangle(config.edge_policy, lam=config.lam, seed=config.seed,
                             tip_selection=config.tip_selection, alpha=config.alpha)
        self.tips = _TipPool()
        self.tips.add(GENESIS)
        self.weights = WeightTracker(self.tangle) if config.tip_selection == "walk" and config.alpha > 0 else None
        self._pending: deque[int] = deque()  # honest reveals, FIFO in time
        self._hidden: list[int] = []  # malicious txs awaiting the joint reveal
        self._arrivals = stream(config.seed, "arrivals")
        self._select = stream(config.seed, "tips")
        self._builder: ParasiteChainBuilder | None = None
        if attack is not None:
            self._builder = ParasiteChainBuilder(self.tangle, attack, stream(config.seed, "attack"))
            self._attack_arrivals = stream(config.seed, "attack-arrivals")

    def _reveal(self, y: int) -> None:
        tangle = self.tangle
        self.tips.add(y)
        for a in tangle.approvees(y):
            self.tips.discard(a)
        if self.weights is not None:
            self.weights.reveal(y)

    def _reveal_until(self, t: float) -> None:
        tangle = self.tangle
        while True:
            nxt = tangle.reveal_time(self._pending[0]) if self._pending else math.inf
            hidden = tangle.reveal_time(self._hidden[0]) if self._hidden else math.inf
            if min(nxt, hidden) > t:
                return
            if hidden <= nxt:
                for y in self._hidden:
                    self._reveal(y)
                self._hidden = []
            else:
                self._reveal(self._pending.popleft())

    def _select_tips(self, t: float) -> tuple[int, int]:
        cfg = self.config
        rng = self._select
        if cfg.tip_selection == "urts":
            items = self.tips.items
            k = len(items)
            return items[int(rng.random() * k)], items[int(rng.random() * k)]
        if cfg.alpha == 0 and cfg.duplicate_edges == "once":
            return urw_tip(self.tangle, t, rng), urw_tip(self.tangle, t, rng)
        weights = self.weights.weights if self.weights is not None else None
        walk = cfg.walk
        return (walk_select(self.tangle, walk, t, rng, weights).tip,
                walk_select(self.tangle, walk, t, rng, weights).tip)

    def _honest_arrival(self, t: float, result: SimResult) -> None:
        self._reveal_until(t)
        if t >= self.config.warmup:
            result.tip_counts.append(len(self.tips))
        x = self.tangle.attach(t, self._select_tips(t), Provenance.HONEST)
        self._pending.append(x)

    def _attack_event(self, t: float) -> None:
        self._reveal_until(t)
        builder = self._builder
        if not builder.started:
            root = self.attack_spec.root
            if root is None:
                # a uniform honest tip, drawn from the attack's own stream
                items = self.tips.items
                root = items[int(builder.rng.random() * len(items))]
            builder.begin(t, root)
        else:
            self._hidden.append(builder.arrive(t))

    def run(self) -> SimResult:
        cfg = self.config
        result = SimResult(self.tangle, cfg)
        t_honest = self._arrivals.expovariate(cfg.lam)
        spec = self.attack_spec
        if spec is not None:
            t_attack = spec.start
            attack_end = min(spec.start + spec.build_duration, spec.reveal)
        else:
            t_attack = math.inf
        while min(t_honest, t_attack) <= cfg.horizon:
            if t_attack < t_honest:
                self._attack_event(t_attack)
                t_attack += self._attack_arrivals.expovariate(spec.mu)
                if t_attack > attack_end:
                    t_attack = math.inf
            else:
                self._honest_arrival(t_honest, result)
                t_honest += self._arrivals.expovariate(cfg.lam)
        self._reveal_until(cfg.horizon)
        self.tangle.advance(cfg.horizon)
        if self._builder is not None and self._builder.started:
            result.attack = self._builder.finish()
        return result


def simulate(config: SimConfig, attack: AttackSpec | None = None) -> SimResult:
    return Simulation(config, attack).run()


def run(config: SimConfig) -> Tangle:
    return simulate(config).tangle


# -- approver statistics ----------------------------------------------------


@dataclass
class ApproverHistogram:
    counts: dict[int, int]

    CSV_COLUMNS = ("n", "count", "probability")

    @property
    def sample_size(self) -> int:
        return sum(self.counts.values())

    def distribution(self) -> ProbabilityVector:
        return ProbabilityVector.from_counts(self.counts, "measured")

    def csv_rows(self) -> list[tuple[int, int, float]]:
        size = self.sample_size
        return [(n, c, c / size) for n, c in sorted(self.counts.items())]


def eligible(tangle: Tangle, warmup: float = 0.0, horizon: float | None = None) -> list[int]:
    """Honest transactions whose whole approval window lies inside
    ``[warmup, horizon]``.  The window opens at the first approval; without a
    horizon, unapproved transactions are kept as zero-approver samples."""
    out = []
    for x in range(len(tangle)):
        if tangle.provenance(x) is not Provenance.HONEST:
            continue
        first = tangle.first_approval(x)
        if first is None:
            if horizon is None and tangle.issue_time(x) >= warmup:
                out.append(x)
            continue
        if first >= warmup and (horizon is None or first + REVEAL_DELAY <= horizon):
            out.append(x)
    return out


def measure_approver_distribution(
    tangle: Tangle,
    selection: str = "all",
    warmup: float = 0.0,
    horizon: float | None = None,
    walks: int = 10_000,
    rng: random.Random | None = None,
) -> ApproverHistogram:
    """Histogram of approval edge counts, either over every eligible
    transaction (``"all"``) or over eligible transactions visited by
    ``walks`` unbiased walks from genesis, once per visit (``"along_walks"``)."""
    keep = eligible(tangle, warmup, horizon)
    if not keep:
        raise ValueError("no eligible transaction")
    edges = tangle._edges
    if selection == "all":
        return ApproverHistogram(dict(Counter(edges[x] for x in keep)))
    if selection != "along_walks":
        raise ValueError(f"unknown selection {selection!r}")
    rng = rng or random.Random(0)
    ok = bytearray(len(tangle))
    for x in keep:
        ok[x] = 1
    approvers, reveal = tangle._approvers, tangle._reveal
    t = math.inf
    counts: Counter[int] = Counter()
    rand = rng.random
    for _ in range(walks):
        x = GENESIS
        while True:
            if ok[x]:
                counts[edges[x]] += 1
            cand = [y for y in approvers[x] if reveal[y] <= t]
            k = len(cand)
            if k == 0:
                break
            x = cand[0] if k == 1 else cand[int(rand() * k)]
    if not counts:
        raise ValueError("walks visited no eligible transaction")
    return ApproverHistogram(dict(counts))


# -- exit profiles ----------------------------------------------------------


@dataclass
class ExitProfile:
    points: list[tuple[float, float]]
    num_snapshots: int
    walks_per_snapshot: int
    mean_tips: float = math.nan

    CSV_COLUMNS = ("x", "e")

    @property
    def mean_e(self) -> float:
        return float(np.mean([e for _, e in self.points]))


def snapshot_times(config: SimConfig, num_snapshots: int) -> list[float]:
    span = config.horizon - config.warmup
    return [config.warmup + (k + 0.5) * span / num_snapshots for k in range(num_snapshots)]


def exit_counts(
    tangle: Tangle,
    tip_selection: str,
    walk: WalkConfig,
    at_time: float,
    walks: int,
    gen: np.random.Generator,
    method: str = "exact",
) -> np.ndarray:
    """How often each tip is selected by ``walks`` independent selections.

    ``"exact"`` computes the exit probabilities by forward mass propagation
    and draws the tally from the matching multinomial; ``"walks"`` runs the
    walks one by one.  Both have the same distribution.
    """
    tips = sorted(tangle.tips(at_time))
    if tip_selection == "urts":
        return gen.multinomial(walks, np.full(len(tips), 1.0 / len(tips)))
    if method == "exact":
        probs = exit_distribution(tangle, walk, at_time)
        p = np.array([probs.get(x, 0.0) for x in tips])
        return gen.multinomial(walks, p / p.sum())
    if method != "walks":
        raise ValueError(f"unknown method {method!r}")
    rng = random.Random(int(gen.integers(2**63)))
    index = {x: i for i, x in enumerate(tips)}
    out = np.zeros(len(tips), dtype=np.int64)
    weights = tangle.cumulative_weights(at_time) if walk.alpha > 0 else None
    for _ in range(walks):
        if walk.alpha == 0 and walk.duplicate_edges == "once":
            tip = urw_tip(tangle, at_time, rng, walk.start)
        else:
            tip = walk_select(tangle, walk, at_time, rng, weights).tip
        out[index[tip]] += 1
    return out


def profile_from_counts(count_sets: list[np.ndarray], walks: int, grid: int | None = 50) -> ExitProfile:
    """Rank-order each snapshot's tally (most selected first), rescale to
    ``e = L * count / walks`` at ``x = rank / L`` and average the snapshots,
    bin-wise on a ``grid``-point grid or, with ``grid=None``, point-wise."""
    sums: dict[float, float] = {}
    hits: dict[float, int] = {}
    for counts in count_sets:
        L = len(counts)
        e = np.sort(np.asarray(counts, dtype=float))[::-1] * L / walks
        x = np.arange(1, L + 1) / L
        if grid is None:
            keys = np.round(x, 12)
            per = {k: v for k, v in zip(keys.tolist(), e.tolist())}
        else:
            bins = np.ceil(x * grid).astype(int) - 1
            per = {}
            for b in np.unique(bins):
                per[(b + 0.5) / grid] = float(e[bins == b].mean())
        for k, v in per.items():
            sums[k] = sums.get(k, 0.0) + v
            hits[k] = hits.get(k, 0) + 1
    points = [(k, sums[k] / hits[k]) for k in sorted(sums)]
    return ExitProfile(points, len(count_sets), walks,
                       float(np.mean([len(c) for c in count_sets])) if count_sets else math.nan)


def measure_exit_profile(
    config: SimConfig,
    num_snapshots: int = 100,
    walks_per_snapshot: int = 100_000,
    tangle: Tangle | None = None,
    grid: int | None = 50,
    method: str = "exact",
    walk: WalkConfig | None = None,
) -> ExitProfile:
    """L-normalised exit profile averaged over tip-set snapshots spread evenly
    over ``[warmup, horizon]``.  ``walk`` overrides the walk used for the
    selections (e.g. a biased walk on an unbiased-walk Tangle)."""
    if tangle is None:
        tangle = run(config)
    walk = walk or config.walk
    gen = np_stream(config.seed, "exit-profile")
    count_sets = [exit_counts(tangle, config.tip_selection, walk, t, walks_per_snapshot, gen, method)
                  for t in snapshot_times(config, num_snapshots)]
    return profile_from_counts(count_sets, walks_per_snapshot, grid)


def fit_linear_exit(profile: ExitProfile) -> float:
    """Slope ``a`` of ``e(x) = 1 + a (x - 1/2)`` by least squares.

    The models only integrate over ``x``, so the direction of the rank axis is
    immaterial and the fit returns the slope magnitude, capped at 2.
    """
    if len(profile.points) < 2:
        raise ValueError("need at least two points")
    x = np.array([p[0] for p in profile.points]) - 0.5
    e = np.array([p[1] for p in profile.points]) - 1.0
    denom = float(x @ x)
    if denom == 0:
        raise ValueError("degenerate profile")
    return min(abs(float(x @ e) / denom), 2.0)
