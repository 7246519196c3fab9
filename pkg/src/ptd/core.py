"""Uncertain-data types and dynamic-dominance geometry.

Everything here is immutable. Dynamic attributes are the per-dimension
absolute offsets from the query point; dominance is always evaluated in
that space.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence, Union

import numpy as np

MAX_DIMS = 6
PROB_SLACK = 1e-12


class InvalidInput(ValueError):
    """Raised when an argument violates a documented precondition."""


AttributeVector = tuple  # tuple[float, ...]


def as_vector(values: Iterable[float], d: int | None = None) -> tuple[float, ...]:
    vec = tuple(float(v) for v in values)
    if not vec:
        raise InvalidInput("attribute vector must have at least one dimension")
    if d is not None and len(vec) != d:
        raise InvalidInput(f"expected {d} attributes, got {len(vec)}")
    if not all(math.isfinite(v) for v in vec):
        raise InvalidInput(f"non-finite attribute in {vec}")
    return vec


@dataclass(frozen=True)
class Instance:
    object_id: int
    instance_id: int
    attrs: tuple[float, ...]
    prob: float

    def __post_init__(self):
        object.__setattr__(self, "attrs", as_vector(self.attrs))
        if not (0.0 < self.prob <= 1.0):
            raise InvalidInput(f"instance probability {self.prob} outside (0, 1]")

    @property
    def d(self) -> int:
        return len(self.attrs)


@dataclass(frozen=True)
class UncertainObject:
    id: int
    instances: tuple[Instance, ...]

    def __post_init__(self):
        insts = tuple(self.instances)
        object.__setattr__(self, "instances", insts)
        if not insts:
            raise InvalidInput(f"object {self.id} has no instances")
        if any(inst.object_id != self.id for inst in insts):
            raise InvalidInput(f"object {self.id} holds instances of another object")
        d = insts[0].d
        if any(inst.d != d for inst in insts):
            raise InvalidInput(f"object {self.id} mixes dimensionalities")
        if self.total_prob > 1.0 + PROB_SLACK:
            raise InvalidInput(f"object {self.id} probabilities sum to {self.total_prob} > 1")

    @property
    def d(self) -> int:
        return self.instances[0].d

    @property
    def total_prob(self) -> float:
        return math.fsum(inst.prob for inst in self.instances)

    @classmethod
    def from_points(cls, object_id: int, points: Sequence[Sequence[float]],
                    probs: Sequence[float]) -> "UncertainObject":
        if len(points) != len(probs):
            raise InvalidInput("points and probs differ in length")
        return cls(object_id, tuple(
            Instance(object_id, j, tuple(p), float(pr))
            for j, (p, pr) in enumerate(zip(points, probs))))


@dataclass(frozen=True)
class QueryPoint:
    attrs: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "attrs", as_vector(self.attrs))

    @property
    def d(self) -> int:
        return len(self.attrs)

    @cached_property
    def array(self) -> np.ndarray:
        return np.asarray(self.attrs, dtype=np.float64)


@dataclass(frozen=True)
class Rect:
    lo: tuple[float, ...]
    hi: tuple[float, ...]

    def __post_init__(self):
        lo, hi = as_vector(self.lo), as_vector(self.hi)
        if len(lo) != len(hi):
            raise InvalidInput("rect corners differ in dimensionality")
        if any(a > b for a, b in zip(lo, hi)):
            raise InvalidInput(f"rect lo {lo} exceeds hi {hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def d(self) -> int:
        return len(self.lo)

    @classmethod
    def point(cls, p: Sequence[float]) -> "Rect":
        return cls(tuple(p), tuple(p))

    def contains_point(self, p: Sequence[float]) -> bool:
        return all(l <= x <= h for l, x, h in zip(self.lo, p, self.hi))

    def contains(self, other: "Rect") -> bool:
        return (all(a <= b for a, b in zip(self.lo, other.lo))
                and all(a >= b for a, b in zip(self.hi, other.hi)))


class DominanceClass(enum.IntEnum):
    NONE = 0
    PARTIAL = 1
    FULL = 2


@dataclass(frozen=True)
class Dataset:
    """A set of uncertain objects with a fixed dimensionality.

    Flat numpy views (``coords``, ``probs``, ``owner``) are built lazily and
    keep instances in object order, then instance order.
    """

    d: int
    objects: tuple[UncertainObject, ...] = field(default=())

    def __post_init__(self):
        objs = tuple(self.objects)
        object.__setattr__(self, "objects", objs)
        if not 1 <= self.d <= MAX_DIMS:
            raise InvalidInput(f"dimensionality must be in [1, {MAX_DIMS}], got {self.d}")
        seen = set()
        for obj in objs:
            if obj.d != self.d:
                raise InvalidInput(f"object {obj.id} has d={obj.d}, dataset has d={self.d}")
            if obj.id in seen:
                raise InvalidInput(f"duplicate object id {obj.id}")
            seen.add(obj.id)

    def __len__(self) -> int:
        return len(self.objects)

    def __iter__(self):
        return iter(self.objects)

    @cached_property
    def by_id(self) -> dict[int, UncertainObject]:
        return {o.id: o for o in self.objects}

    @cached_property
    def position(self) -> dict[int, int]:
        return {o.id: i for i, o in enumerate(self.objects)}

    @cached_property
    def n_instances(self) -> int:
        return sum(len(o.instances) for o in self.objects)

    @cached_property
    def coords(self) -> np.ndarray:
        out = np.empty((self.n_instances, self.d), dtype=np.float64)
        r = 0
        for o in self.objects:
            for inst in o.instances:
                out[r] = inst.attrs
                r += 1
        return out

    @cached_property
    def probs(self) -> np.ndarray:
        return np.fromiter((inst.prob for o in self.objects for inst in o.instances),
                           dtype=np.float64, count=self.n_instances)

    @cached_property
    def owner(self) -> np.ndarray:
        """Object id of each flat instance row."""
        return np.fromiter((o.id for o in self.objects for _ in o.instances),
                           dtype=np.int64, count=self.n_instances)

    @cached_property
    def offsets(self) -> np.ndarray:
        """Row offsets: instances of objects[i] occupy rows offsets[i]:offsets[i+1]."""
        sizes = [len(o.instances) for o in self.objects]
        return np.concatenate([[0], np.cumsum(sizes, dtype=np.int64)]).astype(np.int64)

    def rows_of(self, object_id: int) -> slice:
        i = self.position[object_id]
        return slice(int(self.offsets[i]), int(self.offsets[i + 1]))

    def subset(self, object_ids: Iterable[int]) -> "Dataset":
        keep = set(object_ids)
        return Dataset(self.d, tuple(o for o in self.objects if o.id in keep))

    def bounding_rect(self) -> Rect:
        if not self.objects:
            raise InvalidInput("empty dataset has no bounding rect")
        c = self.coords
        return Rect(tuple(c.min(axis=0)), tuple(c.max(axis=0)))


Point = Union[Instance, QueryPoint, Sequence[float], np.ndarray]


def _attrs(p: Point) -> np.ndarray:
    if isinstance(p, (Instance, QueryPoint)):
        return np.asarray(p.attrs, dtype=np.float64)
    return np.asarray(p, dtype=np.float64)


def _check_dims(*arrays: np.ndarray) -> None:
    d = arrays[0].shape[-1]
    if any(a.shape[-1] != d for a in arrays):
        raise InvalidInput("dimensionality mismatch")


def dyn_attrs(p: Point, q: Point) -> tuple[float, ...]:
    a, b = _attrs(p), _attrs(q)
    _check_dims(a, b)
    return tuple(float(x) for x in np.abs(a - b))


def dynamic_dominates(u: Point, v: Point, q: Point) -> bool:
    """True iff ``u`` dynamically dominates ``v`` with respect to ``q``."""
    a, b, c = _attrs(u), _attrs(v), _attrs(q)
    _check_dims(a, b, c)
    du, dv = np.abs(a - c), np.abs(b - c)
    return bool(np.all(du <= dv) and np.any(du < dv))


def dyn_interval(rect: Rect, q: Point, k: int) -> tuple[float, float]:
    """Exact range of ``|x - q[k]|`` for ``x`` in the rect's k-th side."""
    qk = _attrs(q)[k]
    lo, hi = rect.lo[k], rect.hi[k]
    a, b = abs(lo - qk), abs(hi - qk)
    dlo = 0.0 if lo <= qk <= hi else min(a, b)
    return dlo, max(a, b)


def dyn_box(lo: np.ndarray, hi: np.ndarray, q: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``dyn_interval`` over arrays of rect corners (shape ``(..., d)``)."""
    a = np.abs(lo - q)
    b = np.abs(hi - q)
    inside = (lo <= q) & (q <= hi)
    dlo = np.where(inside, 0.0, np.minimum(a, b))
    return dlo, np.maximum(a, b)


def dominance_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``out[i, j]`` is true iff dynamic vector ``a[i]`` dominates ``b[j]``."""
    le = np.ones((len(a), len(b)), dtype=bool)
    lt = np.zeros_like(le)
    for k in range(a.shape[1]):
        x, y = a[:, k, None], b[None, :, k]
        le &= x <= y
        lt |= x < y
    return le & lt


def classify_dyn(a: np.ndarray, dlo: np.ndarray, dhi: np.ndarray) -> np.ndarray:
    """Classify boxes against instances given in dynamic space.

    ``a`` has shape ``(m, d)``; ``dlo``/``dhi`` have shape ``(E, d)``. Returns an
    ``(m, E)`` int8 array of ``DominanceClass`` codes.
    """
    shape = (len(a), len(dlo))
    le = np.ones(shape, dtype=bool)
    lt = np.zeros(shape, dtype=bool)
    gt = np.zeros(shape, dtype=bool)
    eq = np.ones(shape, dtype=bool)
    for k in range(a.shape[1]):
        x = a[:, k, None]
        lo, hi = dlo[None, :, k], dhi[None, :, k]
        le &= x <= lo
        lt |= x < lo
        gt |= x > hi
        eq &= x == hi
    out = np.full(shape, DominanceClass.PARTIAL, dtype=np.int8)
    out[gt | eq] = DominanceClass.NONE
    out[le & lt] = DominanceClass.FULL
    return out


def classify_rect(t_j: Point, q: Point, rect: Rect) -> DominanceClass:
    a = np.abs(_attrs(t_j) - _attrs(q))
    lo = np.asarray(rect.lo, dtype=np.float64)
    hi = np.asarray(rect.hi, dtype=np.float64)
    _check_dims(a, lo)
    dlo, dhi = dyn_box(lo, hi, _attrs(q))
    return DominanceClass(int(classify_dyn(a[None, :], dlo[None, :], dhi[None, :])[0, 0]))


def object_mbr(t: UncertainObject) -> Rect:
    if not t.instances:
        raise InvalidInput("empty object has no MBR")
    pts = np.asarray([inst.attrs for inst in t.instances], dtype=np.float64)
    return Rect(tuple(pts.min(axis=0)), tuple(pts.max(axis=0)))
