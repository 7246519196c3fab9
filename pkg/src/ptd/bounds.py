"""Score lower/upper bounds for local instances, objects and tree nodes.

A worker sees its own partition exactly and every other partition only
through an ``IndexSummary``. Remote entries fully inside an instance's
dominance region count toward both bounds; partially dominated ones only
toward the upper bound. The local contribution is always exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np

from .core import (
    Dataset, DominanceClass, Instance, InvalidInput, QueryPoint, UncertainObject,
    classify_dyn, dominance_matrix, dyn_box,
)
from .index import ARTree, IndexSummary

_CELLS = 2_000_000

FULL = int(DominanceClass.FULL)
PARTIAL = int(DominanceClass.PARTIAL)
NONE = int(DominanceClass.NONE)


@dataclass(frozen=True)
class BoundPair:
    lb: float
    ub: float

    def __post_init__(self):
        if not 0.0 <= self.lb <= self.ub:
            raise InvalidInput(f"invalid bound pair ({self.lb}, {self.ub})")


def remote_masses(a: np.ndarray, dlo: np.ndarray, dhi: np.ndarray, sums: np.ndarray):
    """Summed mass of the boxes each row of ``a`` fully / at least partially dominates.

    Same classification as ``classify_dyn``, without materialising the codes.
    """
    shape = (len(a), len(dlo))
    le = np.ones(shape, dtype=bool)
    lt = np.zeros(shape, dtype=bool)
    none = np.zeros(shape, dtype=bool)
    eq = np.ones(shape, dtype=bool)
    for k in range(a.shape[1]):
        x = a[:, k, None]
        lo, hi = dlo[None, :, k], dhi[None, :, k]
        le &= x <= lo
        lt |= x < lo
        none |= x > hi
        eq &= x == hi
    none |= eq
    le &= lt
    w = sums.astype(np.float64)
    return le.astype(np.float64) @ w, (~none).astype(np.float64) @ w


class RemoteView:
    """What one worker knows: its partition exactly, the others by summary."""

    def __init__(self, partition_id: int, partition: Dataset, tree: ARTree | None,
                 remotes: Mapping[int, IndexSummary]):
        if partition_id in remotes:
            raise InvalidInput("the local partition cannot also be remote")
        n = len(remotes) + 1
        if set(remotes) | {partition_id} != set(range(n)):
            raise InvalidInput(f"view must cover partitions 0..{n - 1} exactly once")
        self.partition_id = partition_id
        self.partition = partition
        self.tree = tree
        self.remotes = dict(sorted(remotes.items()))
        self.n_partitions = n

    @cached_property
    def r_lo(self) -> np.ndarray:
        return self._cat("lo")

    @cached_property
    def r_hi(self) -> np.ndarray:
        return self._cat("hi")

    @cached_property
    def r_sums(self) -> np.ndarray:
        if not self._live:
            return np.zeros(0)
        return np.concatenate([s.sums for s in self._live.values()])

    @cached_property
    def r_part(self) -> np.ndarray:
        if not self._live:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([np.full(len(s.entries), l, dtype=np.int64)
                               for l, s in self._live.items()])

    @cached_property
    def r_ids(self) -> np.ndarray:
        if not self._live:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([s.node_ids for s in self._live.values()])

    @cached_property
    def _live(self) -> dict[int, IndexSummary]:
        # empty partitions have nothing to summarise
        return {l: s for l, s in self.remotes.items() if s.entries}

    def _cat(self, attr: str) -> np.ndarray:
        if not self._live:
            return np.zeros((0, self.partition.d))
        return np.concatenate([getattr(s, attr) for s in self._live.values()])


class QueryContext:
    """Per-(view, query) cache of dynamic-space arrays plus batched bound kernels.

    ``skip_full`` is a deliberate fault used by the verifier: remote entries
    classified Full are dropped from both bounds.
    """

    def __init__(self, view: RemoteView, q: QueryPoint, skip_full: bool = False):
        if q.d != view.partition.d:
            raise InvalidInput("query dimensionality differs from the partition")
        self.view = view
        self.q = q
        self.skip_full = skip_full
        qa = q.array
        self.r_dlo, self.r_dhi = dyn_box(view.r_lo, view.r_hi, qa)
        self.r_sums = view.r_sums
        P = view.partition
        self.local_dyn = np.abs(P.coords - qa) if P.n_instances else np.zeros((0, P.d))

    def classify_remote(self, a: np.ndarray) -> np.ndarray:
        return classify_dyn(a, self.r_dlo, self.r_dhi)

    def _chunk(self, width: int) -> int:
        return max(1, _CELLS // max(1, width))

    def instance_terms(self, rows: np.ndarray, owners: np.ndarray | None = None):
        """Remote Full mass, remote non-None mass, and exact local mass per row.

        ``rows`` index the partition's flat instance arrays. The local term
        excludes instances of the row's own object.
        """
        full, nonnone = self.remote_terms(rows)
        return full, nonnone, self.local_terms(rows, owners)

    def remote_terms(self, rows: np.ndarray):
        a_all = self.local_dyn[rows]
        m = len(rows)
        full = np.zeros(m)
        nonnone = np.zeros(m)
        E = len(self.r_sums)
        if not E:
            return full, nonnone
        step = self._chunk(E)
        for s in range(0, m, step):
            f, nn = remote_masses(a_all[s:s + step], self.r_dlo, self.r_dhi, self.r_sums)
            full[s:s + step] = f
            nonnone[s:s + step] = nn
        return full, nonnone

    def local_terms(self, rows: np.ndarray, owners: np.ndarray | None = None) -> np.ndarray:
        P = self.view.partition
        if owners is None:
            owners = P.owner[rows]
        a_all = self.local_dyn[rows]
        out = np.zeros(len(rows))
        step = self._chunk(P.n_instances)
        for s in range(0, len(rows), step):
            out[s:s + step] = self._local_mass(a_all[s:s + step], owners[s:s + step])
        return out

    def _local_mass(self, a: np.ndarray, owners: np.ndarray) -> np.ndarray:
        P = self.view.partition
        L = self.local_dyn
        dom = dominance_matrix(a, L)
        dom &= owners[:, None] != P.owner[None, :]
        return np.where(dom, P.probs, 0.0).sum(axis=1)

    def instance_bound_arrays(self, rows: np.ndarray):
        full, nonnone, local = self.instance_terms(rows)
        if self.skip_full:
            nonnone = nonnone - full
            full = np.zeros_like(full)
        p = self.view.partition.probs[rows]
        return p * (full + local), p * (nonnone + local)

    def object_bounds(self, positions: Sequence[int]) -> tuple[list[float], list[float]]:
        """Bounds for the objects at ``positions`` in ``partition.objects``."""
        P = self.view.partition
        off = P.offsets
        rows = np.concatenate([np.arange(off[i], off[i + 1]) for i in positions]) \
            if len(positions) else np.zeros(0, dtype=np.int64)
        lb, ub = self.instance_bound_arrays(rows)
        lb, ub = lb.tolist(), ub.tolist()
        lbs, ubs, r = [], [], 0
        for i in positions:
            n = int(off[i + 1] - off[i])
            lbs.append(sum(lb[r:r + n]))
            ubs.append(sum(ub[r:r + n]))
            r += n
        return lbs, ubs

    def node_ubs(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """Score upper bound for every object under each of the given local boxes."""
        v, _ = dyn_box(lo, hi, self.q.array)
        out = np.zeros(len(v))
        E = len(self.r_sums)
        step = self._chunk(max(E, self.view.partition.n_instances))
        L = self.local_dyn
        P = self.view.partition
        for s in range(0, len(v), step):
            a = v[s:s + step]
            if E:
                full, nonnone = remote_masses(a, self.r_dlo, self.r_dhi, self.r_sums)
                out[s:s + step] += nonnone - full if self.skip_full else nonnone
            if P.n_instances:
                ge = np.ones((len(a), len(L)), dtype=bool)
                for j in range(a.shape[1]):
                    ge &= L[None, :, j] >= a[:, j, None]
                out[s:s + step] += np.where(ge, P.probs, 0.0).sum(axis=1)
        return out

    def partial_entries(self, rows: np.ndarray) -> list[list[tuple[int, int]]]:
        """Per row: ``(partition, node_id)`` of every remote entry it partially dominates."""
        out = []
        if not len(self.r_sums):
            return [[] for _ in rows]
        step = self._chunk(len(self.r_sums))
        parts, ids = self.view.r_part, self.view.r_ids
        for s in range(0, len(rows), step):
            codes = self.classify_remote(self.local_dyn[rows[s:s + step]])
            for row_codes in codes:
                hit = np.nonzero(row_codes == PARTIAL)[0]
                pairs = sorted(zip(parts[hit].tolist(), ids[hit].tolist()))
                out.append(pairs)
        return out


def _local_rows(view: RemoteView, t: UncertainObject) -> slice:
    if t.id not in view.partition.by_id:
        raise InvalidInput(f"object {t.id} is not in local partition {view.partition_id}")
    return view.partition.rows_of(t.id)


def instance_bounds(t_j: Instance, t: UncertainObject, q: QueryPoint, view: RemoteView) -> BoundPair:
    sl = _local_rows(view, t)
    if t_j.object_id != t.id or not 0 <= t_j.instance_id < len(t.instances):
        raise InvalidInput("instance does not belong to the object")
    row = np.asarray([sl.start + t_j.instance_id])
    lb, ub = QueryContext(view, q).instance_bound_arrays(row)
    return BoundPair(float(lb[0]), float(ub[0]))


def object_bounds(t: UncertainObject, q: QueryPoint, view: RemoteView) -> BoundPair:
    _local_rows(view, t)
    lbs, ubs = QueryContext(view, q).object_bounds([view.partition.position[t.id]])
    return BoundPair(lbs[0], ubs[0])


def node_score_ub(e, q: QueryPoint, view: RemoteView) -> float:
    """Upper bound on ``S(t)`` for every object ``t`` under local node/entry ``e``."""
    ctx = QueryContext(view, q)
    return float(ctx.node_ubs(np.asarray([e.lo]), np.asarray([e.hi]))[0])


def partially_dominated(t_j: Instance, q: QueryPoint, summary: IndexSummary) -> list[int]:
    if not summary.entries:
        return []
    a = np.abs(np.asarray([t_j.attrs], dtype=np.float64) - q.array)
    dlo, dhi = dyn_box(summary.lo, summary.hi, q.array)
    codes = classify_dyn(a, dlo, dhi)[0]
    return sorted(summary.node_ids[codes == PARTIAL].tolist())
