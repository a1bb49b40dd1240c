"""The Tangle: an append-only DAG of transactions with delayed visibility.

Time is measured in units of the reveal delay ``h``, so a transaction issued at
``t`` becomes visible to everybody at ``t + 1``.  Transaction ids are dense and
increase with issue time, which makes every approval edge point from a larger
id to a smaller one.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, NamedTuple, TextIO

import numpy as np

REVEAL_DELAY = 1.0
GENESIS = 0


class EdgePolicy(str, Enum):
    SEM = "sem"
    MEM = "mem"


class Provenance(str, Enum):
    HONEST = "honest"
    MALICIOUS = "malicious"


class TangleError(ValueError):
    pass


@dataclass(frozen=True)
class Transaction:
    id: int
    issue_time: float
    reveal_time: float
    approvees: tuple[int, ...]
    provenance: Provenance

    @property
    def is_genesis(self) -> bool:
        return not self.approvees


class Cone(NamedTuple):
    members: set[int]
    truncated: bool


class Tangle:
    """Column-oriented DAG store.

    ``approvers(x)`` lists *distinct* direct approvers in id order, while
    ``edge_count(x)`` counts approval edges, so a MEM transaction that picked
    ``x`` twice adds one approver but two edges.
    """

    def __init__(self, edge_policy: EdgePolicy | str = EdgePolicy.SEM, **meta):
        self.edge_policy = EdgePolicy(edge_policy)
        self.meta: dict = dict(meta)
        self.clock = 0.0
        self._issue: list[float] = [0.0]
        self._reveal: list[float] = [0.0]
        self._approvees: list[tuple[int, ...]] = [()]
        self._approvers: list[list[int]] = [[]]
        self._edges: list[int] = [0]
        self._first_approval: list[float | None] = [None]
        self._provenance: list[Provenance] = [Provenance.HONEST]

    # -- mutation ---------------------------------------------------------

    def attach(
        self,
        issue_time: float,
        approvees: Iterable[int],
        provenance: Provenance | str = Provenance.HONEST,
        reveal_time: float | None = None,
    ) -> int:
        """Append a transaction and return its id.

        Honest transactions may only approve transactions that are visible at
        ``issue_time``; malicious ones may approve hidden transactions (their
        own parasite chain).  ``reveal_time`` defaults to ``issue_time + 1``.
        """
        provenance = Provenance(provenance)
        approvees = tuple(approvees)
        if issue_time < self.clock:
            raise TangleError(f"issue time {issue_time} is before the clock {self.clock}")
        if not 1 <= len(approvees) <= 2:
            raise TangleError("a transaction approves one or two transactions")
        n = len(self._issue)
        for a in approvees:
            if not 0 <= a < n:
                raise TangleError(f"unknown approvee {a}")
            if provenance is Provenance.HONEST and self._reveal[a] > issue_time:
                raise TangleError(f"approvee {a} is not revealed at {issue_time}")
        if len(approvees) == 2 and approvees[0] == approvees[1] and self.edge_policy is EdgePolicy.SEM:
            approvees = approvees[:1]
        if reveal_time is None:
            reveal_time = issue_time + REVEAL_DELAY
        elif reveal_time < issue_time:
            raise TangleError("reveal time precedes issue time")

        self._append_raw(issue_time, reveal_time, approvees, provenance)
        return n

    def advance(self, t: float) -> None:
        if t < self.clock:
            raise TangleError("the clock only moves forward")
        self.clock = t

    # -- column access ----------------------------------------------------

    def __len__(self) -> int:
        return len(self._issue)

    def __getitem__(self, i: int) -> Transaction:
        self._check(i)
        return Transaction(i, self._issue[i], self._reveal[i], self._approvees[i], self._provenance[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def _check(self, i: int) -> None:
        if not 0 <= i < len(self._issue):
            raise TangleError(f"unknown transaction {i}")

    def issue_time(self, i: int) -> float:
        return self._issue[i]

    def reveal_time(self, i: int) -> float:
        return self._reveal[i]

    def approvees(self, i: int) -> tuple[int, ...]:
        return self._approvees[i]

    def approvers(self, i: int) -> list[int]:
        return self._approvers[i]

    def edge_count(self, i: int) -> int:
        return self._edges[i]

    def first_approval(self, i: int) -> float | None:
        return self._first_approval[i]

    def provenance(self, i: int) -> Provenance:
        return self._provenance[i]

    def is_revealed(self, i: int, at_time: float) -> bool:
        return self._reveal[i] <= at_time

    def multiplicity(self, y: int, x: int) -> int:
        """Number of edges from ``y`` to ``x``."""
        return self._approvees[y].count(x)

    # -- visibility-aware queries ----------------------------------------

    def visible_approvers(self, x: int, at_time: float) -> list[int]:
        reveal = self._reveal
        return [y for y in self._approvers[x] if reveal[y] <= at_time]

    def visible_edge_count(self, x: int, at_time: float) -> int:
        reveal = self._reveal
        return sum(self._approvees[y].count(x) for y in self._approvers[x] if reveal[y] <= at_time)

    def distinct_approver_count(self, x: int, at_time: float = math.inf) -> int:
        return len(self.visible_approvers(x, at_time))

    def tips(self, at_time: float | None = None) -> set[int]:
        """Revealed transactions without a revealed approver."""
        t = self.clock if at_time is None else at_time
        reveal = self._reveal
        out = set()
        for i in range(len(reveal)):
            if reveal[i] <= t and not any(reveal[y] <= t for y in self._approvers[i]):
                out.add(i)
        return out

    def future_cone(self, x: int, at_time: float = math.inf, max_size: int | None = None) -> Cone:
        """Transactions that directly or indirectly approve ``x`` (BFS over
        approvers visible at ``at_time``).  Stops once ``max_size`` members are
        collected and reports ``truncated=True`` if anything was left over."""
        self._check(x)
        reveal = self._reveal
        seen: set[int] = set()
        queue = deque([x])
        while queue:
            v = queue.popleft()
            for y in self._approvers[v]:
                if y in seen or reveal[y] > at_time:
                    continue
                if max_size is not None and len(seen) >= max_size:
                    return Cone(seen, True)
                seen.add(y)
                queue.append(y)
        return Cone(seen, False)

    def past_cone(self, x: int) -> set[int]:
        self._check(x)
        seen: set[int] = set()
        stack = list(self._approvees[x])
        while stack:
            v = stack.pop()
            if v not in seen:
                seen.add(v)
                stack.extend(self._approvees[v])
        return seen

    def cumulative_weight(self, x: int, at_time: float = math.inf) -> int:
        self._check(x)
        if self._reveal[x] > at_time:
            raise TangleError(f"transaction {x} is not revealed at {at_time}")
        return 1 + len(self.future_cone(x, at_time).members)

    def cumulative_weights(self, at_time: float = math.inf) -> list[int]:
        """Cumulative weight of every transaction as seen at ``at_time``
        (0 for unrevealed ones), in one reverse sweep with integer bitsets."""
        n = len(self._issue)
        reveal = self._reveal
        weights = [0] * n
        below: dict[int, int] = {}
        for x in range(n - 1, -1, -1):
            if reveal[x] > at_time:
                continue
            bits = 0
            for y in self._approvers[x]:
                if reveal[y] <= at_time:
                    bits |= below[y] | (1 << y)
            below[x] = bits
            weights[x] = 1 + bits.bit_count()
            for y in self._approvers[x]:
                if y in below and min(self._approvees[y]) == x:
                    del below[y]
        return weights

    # -- snapshots --------------------------------------------------------

    def dump(self, fh: TextIO) -> None:
        """Write ``id,issue_time,reveal_time,approvee1[,approvee2],provenance``
        lines after a ``#`` header carrying the edge policy and metadata."""
        fields = {"policy": self.edge_policy.value, **self.meta}
        fh.write("# tangle " + " ".join(f"{k}={v}" for k, v in fields.items()) + "\n")
        for i in range(len(self._issue)):
            cols = [str(i), repr(self._issue[i]), repr(self._reveal[i])]
            cols += [str(a) for a in self._approvees[i]]
            cols.append(self._provenance[i].value)
            fh.write(",".join(cols) + "\n")

    @classmethod
    def load(cls, fh: TextIO) -> "Tangle":
        header = fh.readline()
        if not header.startswith("# tangle"):
            raise TangleError("missing tangle header")
        meta = dict(kv.split("=", 1) for kv in header.split()[2:])
        tangle = cls(meta.pop("policy"), **meta)
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cols = line.split(",")
            i, issue, reveal = int(cols[0]), float(cols[1]), float(cols[2])
            approvees = [int(c) for c in cols[3:-1]]
            if i == GENESIS:
                continue
            if i != len(tangle):
                raise TangleError(f"non-contiguous id {i}")
            tangle._append_raw(issue, reveal, approvees, Provenance(cols[-1]))
        return tangle

    def _append_raw(self, issue, reveal, approvees, provenance) -> None:
        # Snapshot replay: the file already reflects the edge policy and
        # visibility rules, so only structural checks apply.
        n = len(self._issue)
        if any(not 0 <= a < n for a in approvees):
            raise TangleError(f"bad approvee in transaction {n}")
        self._issue.append(issue)
        self._reveal.append(reveal)
        self._approvees.append(tuple(approvees))
        self._approvers.append([])
        self._edges.append(0)
        self._first_approval.append(None)
        self._provenance.append(provenance)
        for k, a in enumerate(approvees):
            self._edges[a] += 1
            if k == 0 or a != approvees[0]:
                self._approvers[a].append(n)
            if self._first_approval[a] is None:
                self._first_approval[a] = issue
        self.clock = max(self.clock, issue)


class WeightTracker:
    """Incrementally maintained cumulative weights.

    Call :meth:`reveal` for every transaction in the order it becomes visible;
    ``weights[x]`` is then the cumulative weight of ``x`` at the current time.
    Each revealed transaction keeps its past cone as an integer bitset.
    """

    def __init__(self, tangle: Tangle):
        self.tangle = tangle
        self._past: dict[int, int] = {GENESIS: 0}
        self.weights = np.zeros(1024, dtype=np.int64)
        self.weights[GENESIS] = 1

    def reveal(self, y: int) -> None:
        bits = 0
        for a in self.tangle.approvees(y):
            bits |= self._past[a] | (1 << a)
        self._past[y] = bits
        if y >= len(self.weights):
            grown = np.zeros(max(2 * len(self.weights), y + 1), dtype=np.int64)
            grown[: len(self.weights)] = self.weights
            self.weights = grown
        self.weights[y] = 1
        if bits:
            nbytes = (bits.bit_length() + 7) // 8
            flags = np.unpackbits(np.frombuffer(bits.to_bytes(nbytes, "little"), dtype=np.uint8), bitorder="little")
            self.weights[: len(flags)] += flags

    def __getitem__(self, x: int) -> int:
        return int(self.weights[x])
