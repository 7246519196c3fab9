"""Offline cost model for choosing which index level each partition ships.

``C_l`` is the expected number of (instance, node) pairs the other
partitions emit towards partition ``l``: for every skyline entry of ``l``'s
level cut, count the instances of the likeliest remote candidates that
partially dominate it. How many remote candidates survive pruning is taken
from a normal approximation of the object upper-bound distribution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Optional, Sequence

import numpy as np
from scipy.stats import norm, spearmanr

from .bounds import PARTIAL, QueryContext, RemoteView
from .core import Dataset, InvalidInput, QueryPoint, Rect, classify_dyn, classify_rect, dyn_box
from .data import grid_queries
from .index import OBJECTS_LEVEL, ARTree, IndexSummary, level_cut

SOURCES = ("historical-log", "uniform-grid")
DEFAULT_WORKLOAD = 64
_CELLS = 2_000_000


@dataclass(frozen=True)
class QueryWorkload:
    sample_points: tuple[QueryPoint, ...]
    source: str = "uniform-grid"

    def __post_init__(self):
        if not self.sample_points:
            raise InvalidInput("workload needs at least one query point")
        if self.source not in SOURCES:
            raise InvalidInput(f"workload source must be one of {SOURCES}")

    @classmethod
    def uniform_grid(cls, D: Dataset, n: int = DEFAULT_WORKLOAD) -> "QueryWorkload":
        return cls(tuple(grid_queries(n, D.bounding_rect())), "uniform-grid")

    @classmethod
    def from_log(cls, points: Sequence[QueryPoint]) -> "QueryWorkload":
        return cls(tuple(points), "historical-log")

    def __len__(self):
        return len(self.sample_points)


def valid_levels(tree: Optional[ARTree]) -> list[int]:
    if tree is None:
        return [OBJECTS_LEVEL]
    return [OBJECTS_LEVEL, *range(tree.height)]


@dataclass(frozen=True)
class LevelChoice:
    levels: dict[int, int] = field(hash=False)

    def check(self, trees: Sequence[Optional[ARTree]]) -> None:
        if set(self.levels) != set(range(len(trees))):
            raise InvalidInput("level choice must name every partition exactly once")
        for l, t in enumerate(trees):
            if self.levels[l] not in valid_levels(t):
                raise InvalidInput(f"level {self.levels[l]} is not valid for partition {l}")

    def to_dict(self) -> dict[str, int]:
        return {str(l): v for l, v in sorted(self.levels.items())}


@dataclass(frozen=True)
class CostEstimate:
    cc: float
    per_partition: tuple[float, ...]
    scand: tuple[float, ...] = ()

    def __post_init__(self):
        if self.cc < 0 or abs(self.cc - sum(self.per_partition)) > 1e-9:
            raise InvalidInput("cc must be the non-negative sum of the per-partition costs")


def pdr_contains(e: Rect, q: QueryPoint, p) -> bool:
    """True iff an instance at ``p`` partially dominates ``e``."""
    return classify_rect(p, q, e) == PARTIAL


def _pdr_counts(partition: Dataset, q: np.ndarray, dlo: np.ndarray, dhi: np.ndarray) -> np.ndarray:
    """Per object (rows) and entry (columns): instances lying in the entry's PDR."""
    n, E = len(partition), len(dlo)
    out = np.zeros((n, E), dtype=np.int64)
    if not n or not E:
        return out
    a = np.abs(partition.coords - q)
    starts = partition.offsets[:-1]
    step = max(1, _CELLS // max(1, len(a)))
    for s in range(0, E, step):
        hit = classify_dyn(a, dlo[s:s + step], dhi[s:s + step]) == PARTIAL
        out[:, s:s + step] = np.add.reduceat(hit.astype(np.int64), starts, axis=0)
    return out


def _top_sums(counts: np.ndarray, s: int) -> np.ndarray:
    """Column-wise sum of the ``s`` largest values (the worst case for ``s`` candidates)."""
    n = counts.shape[0]
    if s <= 0 or n == 0:
        return np.zeros(counts.shape[1], dtype=np.int64)
    if s >= n:
        return counts.sum(axis=0)
    return -np.partition(-counts, s - 1, axis=0)[:s].sum(axis=0)


def n_ins(e: Rect, scand_size: int, q: QueryPoint, partition: Dataset) -> int:
    if scand_size < 0:
        raise InvalidInput("scand_size must be non-negative")
    lo, hi = np.asarray([e.lo]), np.asarray([e.hi])
    dlo, dhi = dyn_box(lo, hi, q.array)
    return int(_top_sums(_pdr_counts(partition, q.array, dlo, dhi), scand_size)[0])


def _scand_one(n: int, lbs: Sequence[float], ubs: Sequence[float], k: int) -> float:
    if n == 0:
        return 0.0
    e_tau = float(np.sort(lbs)[n - k]) if n >= k else -math.inf
    mu = float(np.mean(ubs))
    sigma = float(np.std(ubs, ddof=1)) if n > 1 else 0.0
    if sigma == 0.0 or not math.isfinite(e_tau):
        return float(n) if e_tau <= mu else 0.0
    return float(n * norm.sf((e_tau - mu) / sigma))


def _object_bounds_all(ctx: QueryContext, local: np.ndarray | None = None):
    """Lower and upper bounds of every object in the view's partition."""
    P = ctx.view.partition
    rows = np.arange(P.n_instances)
    full, nonnone = ctx.remote_terms(rows)
    if local is None:
        local = ctx.local_terms(rows)
    starts = P.offsets[:-1]
    lb = np.add.reduceat(P.probs * (full + local), starts)
    ub = np.add.reduceat(P.probs * (nonnone + local), starts)
    return lb, ub


def estimate_scand(partition: Dataset, view: RemoteView, k: int, workload: QueryWorkload,
                   _locals: Sequence[np.ndarray] | None = None) -> float:
    """Expected number of local objects whose upper bound reaches tau."""
    if k < 1:
        raise InvalidInput("k must be a positive integer")
    n = len(partition)
    if n == 0:
        return 0.0
    vals = []
    for j, q in enumerate(workload.sample_points):
        ctx = QueryContext(view, q)
        lbs, ubs = _object_bounds_all(ctx, None if _locals is None else _locals[j])
        vals.append(_scand_one(n, lbs, ubs, k))
    return min(float(n), max(0.0, float(np.mean(vals))))


def skyline_mask(dlo: np.ndarray, dhi: np.ndarray) -> np.ndarray:
    """Entries no other entry dominates (A beats B iff A.dhi <= B.dlo, one strict)."""
    E = len(dlo)
    keep = np.ones(E, dtype=bool)
    step = max(1, _CELLS // max(1, E))
    for s in range(0, E, step):
        b = dlo[s:s + step]
        le = np.all(dhi[None, :, :] <= b[:, None, :], axis=2)
        lt = np.any(dhi[None, :, :] < b[:, None, :], axis=2)
        keep[s:s + step] = ~np.any(le & lt, axis=1)
    return keep


class _Model:
    """Shared caches for evaluating many level choices over one workload."""

    def __init__(self, trees: Sequence[Optional[ARTree]], k: int, workload: QueryWorkload):
        if k < 1:
            raise InvalidInput("k must be a positive integer")
        self.trees = list(trees)
        self.n = len(self.trees)
        self.k = k
        self.workload = workload
        self._cuts: dict[tuple[int, int], object] = {}
        self._scand: dict[tuple[int, tuple], float] = {}
        self._local: dict[int, list[np.ndarray]] = {}

    def cut(self, l: int, level: int):
        key = (l, level)
        if key not in self._cuts:
            self._cuts[key] = level_cut(self.trees[l], level)
        return self._cuts[key]

    def levels_at(self, level: int) -> dict[int, int]:
        return {l: max(OBJECTS_LEVEL, min(level, (t.height - 1) if t else OBJECTS_LEVEL))
                for l, t in enumerate(self.trees)}

    def scand(self, i: int, levels: Mapping[int, int]) -> float:
        t = self.trees[i]
        if t is None:
            return 0.0
        others = tuple(levels[l] for l in range(self.n) if l != i)
        key = (i, others)
        if key not in self._scand:
            remotes = {}
            for l, tl in enumerate(self.trees):
                if l == i:
                    continue
                remotes[l] = self.cut(l, levels[l]) if tl is not None else _empty(l, levels[l])
            view = RemoteView(i, t.partition, t, remotes)
            if i not in self._local:
                rows = np.arange(t.partition.n_instances)
                self._local[i] = [QueryContext(view, q).local_terms(rows)
                                  for q in self.workload.sample_points]
            self._scand[key] = estimate_scand(t.partition, view, self.k, self.workload,
                                              self._local[i])
        return self._scand[key]

    def c_l(self, l: int, level: int, scands: Sequence[float]) -> float:
        t = self.trees[l]
        if t is None:
            return 0.0
        cut = self.cut(l, level)
        total = 0
        for q in self.workload.sample_points:
            dlo, dhi = dyn_box(cut.lo, cut.hi, q.array)
            sky = skyline_mask(dlo, dhi)
            dlo, dhi = dlo[sky], dhi[sky]
            for i, ti in enumerate(self.trees):
                if i == l or ti is None:
                    continue
                s = int(round(scands[i]))
                total += int(_top_sums(_pdr_counts(ti.partition, q.array, dlo, dhi), s).sum())
        return total / len(self.workload)

    def estimate(self, levels: Mapping[int, int]) -> CostEstimate:
        scands = [self.scand(i, levels) for i in range(self.n)]
        per = tuple(self.c_l(l, levels[l], scands) for l in range(self.n))
        return CostEstimate(float(sum(per)), per, tuple(scands))


def _empty(l: int, level: int) -> IndexSummary:
    return IndexSummary(l, level, ())


def estimate_cc(trees: Sequence[Optional[ARTree]], choice: LevelChoice, k: int,
                workload: QueryWorkload) -> CostEstimate:
    choice.check(trees)
    return _Model(trees, k, workload).estimate(choice.levels)


@dataclass
class LevelSweep:
    """Estimates for every uniform level, one row per (partition, distinct level)."""

    uniform_levels: list[int]
    estimates: dict[int, CostEstimate]
    effective: dict[int, dict[int, int]]
    choice: LevelChoice


def sweep_levels(trees: Sequence[Optional[ARTree]], k: int, workload: QueryWorkload) -> LevelSweep:
    model = _Model(trees, k, workload)
    top = max((t.height - 1 for t in trees if t is not None), default=OBJECTS_LEVEL)
    uniform = list(range(OBJECTS_LEVEL, top + 1))
    estimates, effective = {}, {}
    for L in uniform:
        effective[L] = model.levels_at(L)
        estimates[L] = model.estimate(effective[L])
    chosen = {}
    for l in range(len(trees)):
        best: dict[int, float] = {}
        for L in uniform:
            best.setdefault(effective[L][l], estimates[L].per_partition[l])
        # ties go to the coarser (higher) level
        chosen[l] = min(best, key=lambda lv: (best[lv], -lv))
    return LevelSweep(uniform, estimates, effective, LevelChoice(chosen))


def select_levels(trees: Sequence[Optional[ARTree]], k: int, workload: QueryWorkload) -> LevelChoice:
    """Per partition, the level with the lowest estimated ``C_l``."""
    if not trees:
        raise InvalidInput("no trees")
    return sweep_levels(trees, k, workload).choice


@dataclass
class ActualCost:
    per_partition: tuple[float, ...]
    scand: tuple[float, ...]
    comm_bytes: float

    @property
    def cc(self) -> float:
        return float(sum(self.per_partition))


def measure_levels(trees: Sequence[Optional[ARTree]], levels: Mapping[int, int], k: int,
                   workload: QueryWorkload, fanout: int, threads: bool = False) -> ActualCost:
    """Run the real pipeline at the given levels and average what it emitted."""
    from .cluster import assemble, run_ptd

    parts = [t.partition if t is not None else _empty_dataset(trees) for t in trees]
    cluster = assemble(parts, trees, levels, fanout)
    n = len(trees)
    emitted = np.zeros(n)
    cands = np.zeros(n)
    nbytes = 0
    for q in workload.sample_points:
        res = run_ptd(cluster, q, k, threads=threads)
        for l in range(n):
            emitted[l] += res.metrics.emissions_to[l]
            cands[l] += res.metrics.candidates[l]
        nbytes += res.metrics.comm_bytes
    m = len(workload)
    return ActualCost(tuple((emitted / m).tolist()), tuple((cands / m).tolist()), nbytes / m)


def _empty_dataset(trees) -> Dataset:
    d = next(t.partition.d for t in trees if t is not None)
    return Dataset(d, ())


REPORT_COLUMNS = ("partition", "level", "est_C_l", "act_C_l", "est_scand", "act_scand", "selected")


@dataclass
class CostReport:
    sweep: LevelSweep
    actual: dict[int, ActualCost]
    rows: list[dict]

    def spearman(self) -> float:
        est = [self.sweep.estimates[L].cc for L in self.sweep.uniform_levels]
        act = [self.actual[L].cc for L in self.sweep.uniform_levels]
        if len(est) < 2:
            return float("nan")
        return float(spearmanr(est, act).statistic)


def cost_report(trees: Sequence[Optional[ARTree]], k: int, workload: QueryWorkload,
                fanout: int, threads: bool = False) -> CostReport:
    sweep = sweep_levels(trees, k, workload)
    actual = {L: measure_levels(trees, sweep.effective[L], k, workload, fanout, threads)
              for L in sweep.uniform_levels}
    rows, seen = [], set()
    for L in sweep.uniform_levels:
        est, act = sweep.estimates[L], actual[L]
        for l in range(len(trees)):
            lv = sweep.effective[L][l]
            if (l, lv) in seen:
                continue
            seen.add((l, lv))
            rows.append({
                "partition": l, "level": lv,
                "est_C_l": est.per_partition[l], "act_C_l": act.per_partition[l],
                "est_scand": est.scand[l], "act_scand": act.scand[l],
                "selected": int(sweep.choice.levels[l] == lv),
            })
    rows.sort(key=lambda r: (r["partition"], r["level"]))
    return CostReport(sweep, actual, rows)
