"""Brute-force scoring: the reference every distributed answer is checked against.

Deliberately naive. The only concession to speed is that the pairwise
dominance test runs over numpy blocks of rows instead of a Python loop.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Dataset, Instance, InvalidInput, QueryPoint, UncertainObject, dominance_matrix

_BLOCK_CELLS = 4_000_000


@dataclass(frozen=True, order=True)
class ScoredObject:
    object_id: int
    score: float

    def __post_init__(self):
        if not (self.score >= 0.0 and np.isfinite(self.score)):
            raise InvalidInput(f"score {self.score} must be finite and non-negative")


def rank_key(s: ScoredObject):
    return (-s.score, s.object_id)


def _dominated_mass(rows: np.ndarray, row_owner: np.ndarray, D: Dataset,
                    q: np.ndarray) -> np.ndarray:
    """Probability mass of instances of *other* objects dominated by each row."""
    dyn_all = np.abs(D.coords - q)
    out = np.empty(len(rows), dtype=np.float64)
    step = max(1, _BLOCK_CELLS // max(1, D.n_instances))
    for s in range(0, len(rows), step):
        dom = dominance_matrix(np.abs(rows[s:s + step] - q), dyn_all)
        dom &= row_owner[s:s + step, None] != D.owner[None, :]
        out[s:s + step] = np.where(dom, D.probs, 0.0).sum(axis=1)
    return out


def _check(D: Dataset, q: QueryPoint) -> np.ndarray:
    if q.d != D.d:
        raise InvalidInput(f"query has d={q.d}, dataset has d={D.d}")
    return q.array


def instance_score_exact(t_j: Instance, D: Dataset, q: QueryPoint) -> float:
    qa = _check(D, q)
    if t_j.object_id not in D.by_id:
        raise InvalidInput(f"object {t_j.object_id} not in dataset")
    row = np.asarray([t_j.attrs], dtype=np.float64)
    mass = _dominated_mass(row, np.asarray([t_j.object_id]), D, qa)
    return float(t_j.prob * mass[0])


def instance_scores(D: Dataset, q: QueryPoint) -> np.ndarray:
    """``S(t_j)`` for every flat instance row of ``D``."""
    qa = _check(D, q)
    if not D.objects:
        return np.zeros(0)
    return D.probs * _dominated_mass(D.coords, D.owner, D, qa)


def object_score_exact(t: UncertainObject, D: Dataset, q: QueryPoint) -> float:
    if t.id not in D.by_id:
        raise InvalidInput(f"object {t.id} not in dataset")
    qa = _check(D, q)
    rows = np.asarray([inst.attrs for inst in t.instances], dtype=np.float64)
    probs = np.asarray([inst.prob for inst in t.instances])
    mass = _dominated_mass(rows, np.full(len(rows), t.id), D, qa)
    return float(sum(probs * mass))


def all_scores(D: Dataset, q: QueryPoint) -> dict[int, float]:
    per_inst = instance_scores(D, q)
    out = {}
    for i, obj in enumerate(D.objects):
        lo, hi = D.offsets[i], D.offsets[i + 1]
        out[obj.id] = float(sum(per_inst[lo:hi]))
    return out


def ptd_exact(D: Dataset, q: QueryPoint, k: int) -> list[ScoredObject]:
    if k < 1:
        raise InvalidInput("k must be a positive integer")
    scored = [ScoredObject(oid, s) for oid, s in all_scores(D, q).items()]
    scored.sort(key=rank_key)
    return scored[:k]


def naive_object_score(t: UncertainObject, D: Dataset, q: QueryPoint) -> float:
    """Pure-Python double loop over instance pairs; a self-check for the block scorer."""
    qa = q.attrs
    total = 0.0
    for tj in t.instances:
        a = [abs(x - y) for x, y in zip(tj.attrs, qa)]
        mass = 0.0
        for s in D.objects:
            if s.id == t.id:
                continue
            for si in s.instances:
                b = [abs(x - y) for x, y in zip(si.attrs, qa)]
                if all(x <= y for x, y in zip(a, b)) and any(x < y for x, y in zip(a, b)):
                    mass += si.prob
        total += tj.prob * mass
    return total
