"""Simulated N-server runtime: offline setup, two MapReduce rounds, master top-k.

Workers run each phase concurrently on a thread pool (or serially) and only
talk through the message bus. Every message crossing a phase boundary is
encoded with the wire codec, charged to the ledger and decoded on delivery.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Mapping, Optional, Sequence

from ..core import Dataset, InvalidInput, QueryPoint
from ..index import DEFAULT_FANOUT, OBJECTS_LEVEL, ARTree, IndexSummary, build, level_cut, serialize
from ..oracle import ScoredObject, rank_key
from .jobs import (
    MapperOutput, ReducerOutput, Worker, filtering_mapper, filtering_reducer, refinement_mapper,
)
from .wire import (
    CommLedger, Phase, ScoreReport, ThresholdBroadcast, decode, encode,
)

log = logging.getLogger(__name__)

MASTER = 0


class QueryFailure(RuntimeError):
    pass


@dataclass
class QueryMetrics:
    phase_seconds: dict[str, float]
    comm_bytes: int
    comm_messages: int
    bytes_by_phase: dict[str, int]
    candidates: dict[int, int]
    partition_sizes: dict[int, int]
    emissions_to: dict[int, int]
    taus: dict[int, float]

    @property
    def pruning_power(self) -> dict[int, float]:
        return {l: (n - self.candidates.get(l, 0)) / n if n else 0.0
                for l, n in self.partition_sizes.items()}

    @property
    def emitted_pairs(self) -> int:
        return sum(self.emissions_to.values())

    def to_dict(self) -> dict:
        return {
            "phase_seconds": {k: round(v, 6) for k, v in self.phase_seconds.items()},
            "comm_bytes": self.comm_bytes,
            "comm_messages": self.comm_messages,
            "bytes_by_phase": self.bytes_by_phase,
            "candidates": {str(k): v for k, v in self.candidates.items()},
            "pruning_power": {str(k): v for k, v in self.pruning_power.items()},
            "emitted_pairs": self.emitted_pairs,
            "emissions_to": {str(k): v for k, v in self.emissions_to.items()},
            "taus": {str(k): v for k, v in self.taus.items()},
        }


@dataclass
class QueryTrace:
    """Which objects each phase let through; used by the verifier."""

    candidates: dict[int, tuple[float, float]] = field(default_factory=dict)
    mapper_pruned: set[int] = field(default_factory=set)
    reducer_pruned: set[int] = field(default_factory=set)
    refine_pruned: set[int] = field(default_factory=set)
    reported: dict[int, float] = field(default_factory=dict)
    partial: dict[int, list] = field(default_factory=dict)


@dataclass
class QueryResult:
    answers: list[ScoredObject]
    metrics: QueryMetrics
    ledger: CommLedger
    trace: QueryTrace


@dataclass
class Cluster:
    workers: list[Worker]
    levels: dict[int, int]
    fanout: int
    index_bytes: int

    @property
    def n(self) -> int:
        return len(self.workers)

    @property
    def trees(self) -> list[Optional[ARTree]]:
        return [w.tree for w in self.workers]


def split(D: Dataset, assignment: Mapping[int, int], n: int) -> list[Dataset]:
    buckets: list[list] = [[] for _ in range(n)]
    for obj in D.objects:
        buckets[assignment[obj.id]].append(obj)
    return [Dataset(D.d, tuple(b)) for b in buckets]


def build_trees(parts: Sequence[Dataset], fanout: int = DEFAULT_FANOUT) -> list[Optional[ARTree]]:
    return [build(p, fanout, i) if len(p) else None for i, p in enumerate(parts)]


def clamp_level(tree: Optional[ARTree], level: int) -> int:
    if tree is None or level == OBJECTS_LEVEL:
        return level
    return max(0, min(level, tree.height - 1))


def summaries_for(trees: Sequence[Optional[ARTree]], levels: Mapping[int, int]) -> list[IndexSummary]:
    out = []
    for i, t in enumerate(trees):
        if t is None:
            out.append(IndexSummary(i, levels.get(i, OBJECTS_LEVEL), ()))
        else:
            out.append(level_cut(t, clamp_level(t, levels[i])))
    return out


def assemble(parts: Sequence[Dataset], trees: Sequence[Optional[ARTree]],
             levels: Mapping[int, int], fanout: int = DEFAULT_FANOUT) -> Cluster:
    """Offline phase: hand every worker the chosen level cut of every other tree."""
    n = len(parts)
    levels = {i: clamp_level(trees[i], levels.get(i, OBJECTS_LEVEL)) for i in range(n)}
    sums = summaries_for(trees, levels)
    index_bytes = sum(len(serialize(s)) * (n - 1) for s in sums if s.entries)
    workers = [Worker(i, parts[i], trees[i], {l: sums[l] for l in range(n) if l != i})
               for i in range(n)]
    return Cluster(workers, levels, fanout, index_bytes)


def make_cluster(D: Dataset, assignment: Mapping[int, int], n: int,
                 levels: Mapping[int, int] | int = 0, fanout: int = DEFAULT_FANOUT) -> Cluster:
    parts = split(D, assignment, n)
    trees = build_trees(parts, fanout)
    if isinstance(levels, int):
        levels = {i: levels for i in range(n)}
    return assemble(parts, trees, levels, fanout)


def _run_all(fn: Callable, args: Sequence[tuple], phase: str, threads: bool) -> list:
    def guarded(i, a):
        try:
            return fn(*a)
        except Exception as exc:
            raise QueryFailure(f"worker {i} failed during {phase}: {exc!r}") from exc

    if not threads or len(args) == 1:
        return [guarded(i, a) for i, a in enumerate(args)]
    with ThreadPoolExecutor(max_workers=len(args), thread_name_prefix=f"ptd-{phase}") as pool:
        futures = [pool.submit(guarded, i, a) for i, a in enumerate(args)]
        return [f.result() for f in futures]


class _Bus:
    def __init__(self, ledger: CommLedger):
        self.ledger = ledger

    def send(self, phase: Phase, src: int, dst: int, msg):
        buf = encode(phase, src, dst, msg)
        self.ledger.charge(src, dst, phase, len(buf))
        return decode(buf)


def run_ptd(cluster: Cluster, q: QueryPoint, k: int, threads: bool = True,
            skip_full: bool = False) -> QueryResult:
    if k < 1:
        raise InvalidInput("k must be a positive integer")
    workers = cluster.workers
    n = len(workers)
    ledger = CommLedger()
    bus = _Bus(ledger)
    trace = QueryTrace()
    clock: dict[str, float] = {}
    t_start = time.perf_counter()

    # round 1, map
    t0 = time.perf_counter()
    maps: list[MapperOutput] = _run_all(
        filtering_mapper, [(w, q, k, skip_full) for w in workers], "filtering-mapper", threads)
    clock["filtering_mapper"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    inbox: list[list] = [[] for _ in range(n)]
    taus_at: list[list[float]] = [[m.tau] for m in maps]
    master_in: list[ScoreReport] = []
    shuffle = sorted(((m.partition_id, em) for m in maps for em in m.emissions),
                     key=lambda se: (se[1].sort_key(), se[0]))
    for i, em in shuffle:
        _, src, dst, msg = bus.send(Phase.CANDIDATE, i, em.key, em)
        inbox[dst].append((src, msg))
    for m in maps:
        i = m.partition_id
        for l in range(n):
            if l != i:
                _, _, dst, msg = bus.send(Phase.THRESHOLD, i, l, ThresholdBroadcast(m.tau))
                taus_at[dst].append(msg.tau)
        for oid in sorted(m.exact):
            _, _, _, msg = bus.send(Phase.DIRECT, i, MASTER, ScoreReport(oid, m.exact[oid]))
            master_in.append(msg)
        trace.candidates.update({o: (b.lb, b.ub) for o, b in m.candidates.items()})
        trace.mapper_pruned.update(o.id for o in workers[i].partition if o.id not in m.candidates)
    clock["shuffle_1"] = time.perf_counter() - t0

    # round 1, reduce
    t0 = time.perf_counter()
    reds: list[ReducerOutput] = _run_all(
        filtering_reducer, [(w, inbox[w.partition_id], taus_at[w.partition_id], q) for w in workers],
        "filtering-reducer", threads)
    clock["filtering_reducer"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    partials: list[dict[int, list]] = [{} for _ in range(n)]
    for r in reds:
        for home, em in r.emissions:
            _, _, dst, msg = bus.send(Phase.PARTIAL_SCORE, r.partition_id, home, em)
            partials[dst].setdefault(msg.object_id, []).append(msg.value)
    clock["shuffle_2"] = time.perf_counter() - t0

    # round 2, map only
    def refine(groups: dict[int, list]):
        return [(oid, refinement_mapper(oid, groups[oid])) for oid in sorted(groups)]

    t0 = time.perf_counter()
    refined = _run_all(refine, [(partials[i],) for i in range(n)], "refinement-mapper", threads)
    for i, results in enumerate(refined):
        for oid, res in results:
            trace.partial[oid] = partials[i][oid]
            if res is None:
                if any(v is None for v in partials[i][oid]):
                    trace.reducer_pruned.add(oid)
                else:
                    trace.refine_pruned.add(oid)
                continue
            _, _, _, msg = bus.send(Phase.RESULT, i, MASTER, ScoreReport(*res))
            master_in.append(msg)
    clock["refinement_mapper"] = time.perf_counter() - t0

    t0 = time.perf_counter()
    trace.reported = {m.object_id: m.score for m in master_in}
    ranked = sorted((ScoredObject(m.object_id, m.score) for m in master_in), key=rank_key)
    answers = ranked[:k]
    clock["master"] = time.perf_counter() - t0
    clock["total"] = time.perf_counter() - t_start

    emissions_to = {l: 0 for l in range(n)}
    for m in maps:
        for em in m.emissions:
            emissions_to[em.key] += 1
    metrics = QueryMetrics(
        phase_seconds=clock,
        comm_bytes=ledger.total_bytes,
        comm_messages=ledger.total_messages,
        bytes_by_phase=ledger.bytes_by_phase(),
        candidates={m.partition_id: len(m.candidates) for m in maps},
        partition_sizes={w.partition_id: len(w.partition) for w in workers},
        emissions_to=emissions_to,
        taus={m.partition_id: m.tau for m in maps},
    )
    return QueryResult(answers, metrics, ledger, trace)
