"""The filtering mapper, filtering reducer and refinement mapper.

Comparisons against the threshold tau are strict everywhere (an object is
dropped only when its upper bound is *below* tau), so ties at the k-th
score survive to the master and the final order matches the oracle's.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

import numpy as np

from ..bounds import BoundPair, QueryContext, RemoteView
from ..core import Dataset, DominanceClass, QueryPoint, classify_dyn, dominance_matrix, dyn_box
from ..index import ARTree, IndexSummary
from .wire import CandidateEmission, PartialScoreEmission

NEG_INF = -math.inf


class ProtocolError(RuntimeError):
    """A message refers to state the receiving worker does not have."""


@dataclass
class Worker:
    partition_id: int
    partition: Dataset
    tree: Optional[ARTree]
    remotes: dict[int, IndexSummary]

    def __post_init__(self):
        self.view = RemoteView(self.partition_id, self.partition, self.tree, self.remotes)

    @property
    def n_partitions(self) -> int:
        return self.view.n_partitions


@dataclass
class MapperOutput:
    partition_id: int
    candidates: dict[int, BoundPair]
    emissions: list[CandidateEmission]
    exact: dict[int, float]
    tau: float
    objects_bounded: int = 0
    nodes_popped: int = 0


def _kth_largest(values: Iterable[float], k: int) -> float:
    return heapq.nlargest(k, values)[-1]


def filtering_mapper(worker: Worker, q: QueryPoint, k: int,
                     skip_full: bool = False) -> MapperOutput:
    """Best-first candidate retrieval over the local tree, then partial-node emission.

    Candidates with no partially dominated remote entry already have exact
    bounds; they are returned in ``exact`` instead of being emitted.
    """
    pid = worker.partition_id
    tree = worker.tree
    if tree is None:
        return MapperOutput(pid, {}, [], {}, NEG_INF)
    P = worker.partition
    ctx = QueryContext(worker.view, q, skip_full=skip_full)

    cands: dict[int, tuple[float, float]] = {}
    cnt = 0
    tau = NEG_INF
    bounded = popped = 0
    root = tree.root
    root_ub = float(ctx.node_ubs(root.lo[None, :], root.hi[None, :])[0])
    heap = [(-root_ub, root.node_id, root)]
    while heap:
        key, _, e = heapq.heappop(heap)
        popped += 1
        if -key < tau:
            break
        if e.is_leaf:
            positions = [P.position[c.object_id] for c in e.children]
            lbs, ubs = ctx.object_bounds(positions)
            bounded += len(positions)
            for child, lb, ub in zip(e.children, lbs, ubs):
                oid = child.object_id
                if cnt < k:
                    cands[oid] = (lb, ub)
                    cnt += 1
                    if cnt == k:
                        tau = _kth_largest((b[0] for b in cands.values()), k)
                elif ub >= tau:
                    cands[oid] = (lb, ub)
                    tau = _kth_largest((b[0] for b in cands.values()), k)
                    cands = {o: b for o, b in cands.items() if b[1] >= tau}
                    cnt = len(cands)
        else:
            ubs = ctx.node_ubs(e.child_lo, e.child_hi)
            for child, ub in zip(e.children, ubs.tolist()):
                if ub >= tau:
                    heapq.heappush(heap, (-ub, child.node_id, child))

    emissions: list[CandidateEmission] = []
    exact: dict[int, float] = {}
    for oid in sorted(cands):
        lb, ub = cands[oid]
        sl = P.rows_of(oid)
        rows = np.arange(sl.start, sl.stop)
        lists = ctx.partial_entries(rows)
        if not any(lists):
            exact[oid] = lb
            continue
        obj = P.by_id[oid]
        for inst, pairs in zip(obj.instances, lists):
            for l, eid in pairs:
                emissions.append(CandidateEmission(l, oid, inst.instance_id, inst.attrs,
                                                   inst.prob, eid, lb, ub, tau))
    emissions.sort(key=CandidateEmission.sort_key)
    return MapperOutput(pid, {o: BoundPair(*b) for o, b in cands.items()}, emissions,
                        exact, tau, bounded, popped)


@dataclass
class ReducerOutput:
    partition_id: int
    # (home partition of t, message)
    emissions: list[tuple[int, PartialScoreEmission]] = field(default_factory=list)
    nodes_visited: int = 0


class Descender:
    """Best-first descent below one node, expanding only partially dominated entries.

    Reference for ``_node_masses``: both give the exact dominated mass.
    """

    def __init__(self, tree: ARTree, q: QueryPoint):
        self.tree = tree
        self.q = q.array
        self._boxes: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.visited = 0

    def _child_box(self, node):
        box = self._boxes.get(node.node_id)
        if box is None:
            box = dyn_box(node.child_lo, node.child_hi, self.q)
            self._boxes[node.node_id] = box
        return box

    def object_mass(self, entry, a: np.ndarray) -> float:
        D = self.tree.partition
        rows = D.rows_of(entry.object_id)
        dom = dominance_matrix(a[None, :], np.abs(D.coords[rows] - self.q))[0]
        return float(np.where(dom, D.probs[rows], 0.0).sum())

    def partial_score(self, eid_elem, a: np.ndarray, p: float, self_id: int) -> float:
        if eid_elem.is_object:
            if eid_elem.object_id == self_id:
                raise ProtocolError(f"object {self_id} routed to its own partition")
            return p * self.object_mass(eid_elem, a)
        score = 0.0
        heap = [(c.level, c.node_id, c) for c in eid_elem.children]
        heapq.heapify(heap)
        while heap:
            _, _, e = heapq.heappop(heap)
            self.visited += 1
            if e.is_object:
                if e.object_id == self_id:
                    raise ProtocolError(f"object {self_id} routed to its own partition")
                score += p * self.object_mass(e, a)
                continue
            dlo, dhi = self._child_box(e)
            codes = classify_dyn(a[None, :], dlo, dhi)[0]
            for child, code in zip(e.children, codes.tolist()):
                if code == DominanceClass.FULL:
                    score += p * child.sum
                elif code == DominanceClass.PARTIAL:
                    heapq.heappush(heap, (child.level, child.node_id, child))
        return score


_CELLS = 2_000_000


def _node_masses(worker: Worker, q: QueryPoint, items: list[CandidateEmission]) -> dict[int, float]:
    """Exact partial score of every emission against its target subtree.

    Emissions keyed to the same node are evaluated together; the result per
    emission equals what a best-first descent below that node accumulates.
    """
    tree = worker.tree
    P = worker.partition
    qa = q.array
    by_node: dict[int, list[int]] = {}
    for i, em in enumerate(items):
        by_node.setdefault(em.node_id, []).append(i)
    out = [0.0] * len(items)
    for nid in sorted(by_node):
        if nid not in tree.by_id:
            raise ProtocolError(f"node {nid} not in partition {worker.partition_id}")
        idx = by_node[nid]
        rows = tree.subtree_rows(nid)
        L = np.abs(P.coords[rows] - qa)
        w = P.probs[rows]
        A = np.abs(np.asarray([items[i].attrs for i in idx]) - qa)
        p = np.asarray([items[i].prob for i in idx])
        step = max(1, _CELLS // max(1, len(rows)))
        for s in range(0, len(idx), step):
            mass = np.where(dominance_matrix(A[s:s + step], L), w, 0.0).sum(axis=1)
            for i, v in zip(idx[s:s + step], (p[s:s + step] * mass).tolist()):
                out[i] = v
    return out


def filtering_reducer(worker: Worker, received: Sequence[tuple[int, CandidateEmission]],
                      taus: Sequence[float], q: QueryPoint) -> ReducerOutput:
    """Partial scores for remote candidate instances against the local partition.

    ``received`` holds ``(source partition, emission)`` pairs already in
    delivery order; ``taus`` are the thresholds of every mapper.
    """
    out = ReducerOutput(worker.partition_id)
    if not received:
        return out
    if worker.tree is None:
        raise ProtocolError(f"partition {worker.partition_id} is empty but received candidates")
    tau = max([0.0, *taus])
    groups: dict[int, list[tuple[int, CandidateEmission]]] = {}
    for src, em in received:
        if em.key != worker.partition_id:
            raise ProtocolError(f"emission keyed to {em.key} delivered to {worker.partition_id}")
        if em.object_id in worker.partition.by_id:
            raise ProtocolError(f"object {em.object_id} routed to its own partition")
        groups.setdefault(em.object_id, []).append((src, em))
    order = [(oid, sorted(groups[oid], key=lambda se: se[1].sort_key())) for oid in sorted(groups)]
    flat = [em for _, items in order for _, em in items]
    pscores = _node_masses(worker, q, flat)
    by_id = worker.tree.by_id
    r = 0
    for oid, items in order:
        home = items[0][0]
        lb, ub = items[0][1].lb, items[0][1].ub
        delta = 0.0
        pruned = False
        for _, em in items:
            pscore = pscores[r]
            r += 1
            if pruned:
                continue
            ub = ub - by_id[em.node_id].sum * em.prob + pscore
            if ub < tau:
                out.emissions.append((home, PartialScoreEmission(oid, None)))
                pruned = True
                continue
            delta += pscore
        if not pruned:
            out.emissions.append((home, PartialScoreEmission(oid, (lb, delta, tau))))
    out.nodes_visited = len({em.node_id for em in flat})
    return out


def refinement_mapper(object_id: int,
                      values: Sequence[Optional[tuple[float, float, float]]]
                      ) -> Optional[tuple[int, float]]:
    """Combine partial scores of one object; ``None`` entries are prune signals."""
    if not values:
        raise ProtocolError(f"no partial scores for object {object_id}")
    if any(v is None for v in values):
        return None
    lb0, _, tau0 = values[0]
    score = lb0
    for lb, delta, tau in values:
        if abs(lb - lb0) > 1e-9:
            raise ProtocolError(f"object {object_id}: inconsistent lower bounds {lb0} vs {lb}")
        if tau != tau0:
            raise ProtocolError(f"object {object_id}: thresholds disagree ({tau0} vs {tau})")
        score += delta
    if score < tau0:
        return None
    return object_id, score
