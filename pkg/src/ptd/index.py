"""Aggregate R-tree over one partition, level cuts, and the summary wire format.

Nodes carry the summed appearance probability of every instance below them.
Trees are bulk-loaded with sort-tile-recursive packing and numbered in
post-order, so two builds over the same partition are identical.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Iterator, Sequence, Union

import numpy as np

from .core import Dataset, InvalidInput, Rect, object_mbr

OBJECTS_LEVEL = -1
INSTANCES_LEVEL = -2
DEFAULT_FANOUT = 32

MAGIC = b"PTDS"
VERSION = 1
_HEADER = struct.Struct("<4sHIhI")


class DecodeError(ValueError):
    pass


class ObjectEntry:
    """Leaf-level entry: one uncertain object's MBR and probability mass."""

    __slots__ = ("node_id", "object_id", "rect", "sum", "lo", "hi")
    level = OBJECTS_LEVEL
    is_object = True

    def __init__(self, object_id: int, rect: Rect, total: float):
        self.node_id = -1
        self.object_id = object_id
        self.rect = rect
        self.sum = total
        self.lo = np.asarray(rect.lo, dtype=np.float64)
        self.hi = np.asarray(rect.hi, dtype=np.float64)

    def __repr__(self):
        return f"ObjectEntry(id={self.node_id}, object={self.object_id}, sum={self.sum:.4g})"


class ARNode:
    __slots__ = ("node_id", "rect", "level", "sum", "children",
                 "child_lo", "child_hi", "child_sums", "lo", "hi")
    is_object = False

    def __init__(self, level: int, children: list):
        self.node_id = -1
        self.level = level
        self.children = tuple(children)
        self.child_lo = np.stack([c.lo for c in self.children])
        self.child_hi = np.stack([c.hi for c in self.children])
        self.child_sums = np.asarray([c.sum for c in self.children], dtype=np.float64)
        self.lo = self.child_lo.min(axis=0)
        self.hi = self.child_hi.max(axis=0)
        self.rect = Rect(tuple(self.lo), tuple(self.hi))
        self.sum = sum(c.sum for c in self.children)

    @property
    def is_leaf(self) -> bool:
        return self.level == 0

    def __repr__(self):
        return (f"ARNode(id={self.node_id}, level={self.level}, "
                f"children={len(self.children)}, sum={self.sum:.4g})")


Element = Union[ARNode, ObjectEntry]


def _center(e: Element, k: int) -> float:
    return 0.5 * (float(e.lo[k]) + float(e.hi[k]))


def _balanced_split(items: list, n_groups: int) -> list[list]:
    base, extra = divmod(len(items), n_groups)
    out, i = [], 0
    for g in range(n_groups):
        size = base + (1 if g < extra else 0)
        out.append(items[i:i + size])
        i += size
    return out


def _str_pack(items: list, fanout: int, dims: Sequence[int]) -> list[list]:
    """Sort-tile-recursive grouping with every group size in [ceil(f/2), f]."""
    if len(items) <= fanout:
        return [items]
    k = dims[0]
    items = sorted(items, key=lambda e: (_center(e, k), e.node_id))
    if len(dims) == 1:
        return _balanced_split(items, math.ceil(len(items) / fanout))
    n_pages = math.ceil(len(items) / fanout)
    n_slabs = math.ceil(n_pages ** (1.0 / len(dims)))
    n_slabs = max(1, min(n_slabs, len(items) // math.ceil(fanout / 2)))
    groups = []
    for slab in _balanced_split(items, n_slabs):
        groups.extend(_str_pack(slab, fanout, dims[1:]))
    return groups


@dataclass(frozen=True)
class ARTree:
    root: ARNode
    fanout: int
    height: int
    partition_id: int
    partition: Dataset

    @cached_property
    def by_id(self) -> dict[int, Element]:
        return {e.node_id: e for e in self.walk()}

    @cached_property
    def _subtree_rows(self) -> dict[int, np.ndarray]:
        P = self.partition
        out: dict[int, np.ndarray] = {}
        for e in self.walk():
            if e.is_object:
                sl = P.rows_of(e.object_id)
                out[e.node_id] = np.arange(sl.start, sl.stop)
            else:
                out[e.node_id] = np.concatenate([out[c.node_id] for c in e.children])
        return out

    def subtree_rows(self, node_id: int) -> np.ndarray:
        """Flat partition rows of every instance under the entry ``node_id``."""
        return self._subtree_rows[node_id]

    def walk(self) -> Iterator[Element]:
        """Every node and object entry, in post-order."""
        stack: list[tuple[Element, bool]] = [(self.root, False)]
        while stack:
            e, expanded = stack.pop()
            if e.is_object or expanded:
                yield e
                continue
            stack.append((e, True))
            for c in reversed(e.children):
                stack.append((c, False))

    def nodes_at(self, level: int) -> list[Element]:
        return sorted((e for e in self.walk() if e.level == level), key=lambda e: e.node_id)

    @property
    def levels(self) -> list[int]:
        """Valid level-cut levels, finest first."""
        return [OBJECTS_LEVEL] + list(range(self.height))


def build(partition: Dataset, fanout: int = DEFAULT_FANOUT, partition_id: int = 0) -> ARTree:
    if fanout < 2:
        raise InvalidInput("fanout must be at least 2")
    if len(partition) == 0:
        raise InvalidInput("cannot index an empty partition")
    dims = list(range(partition.d))
    entries = []
    for obj in partition.objects:
        e = ObjectEntry(obj.id, object_mbr(obj), sum(inst.prob for inst in obj.instances))
        e.node_id = obj.id  # provisional, only for deterministic sorting
        entries.append(e)
    level, layer = 0, entries
    while True:
        nodes = [ARNode(level, g) for g in _str_pack(layer, fanout, dims)]
        for i, n in enumerate(nodes):
            n.node_id = i
        if len(nodes) == 1:
            root = nodes[0]
            break
        layer, level = nodes, level + 1
    tree = ARTree(root, fanout, root.level + 1, partition_id, partition)
    for nid, e in enumerate(tree.walk()):
        e.node_id = nid
    return tree


@dataclass(frozen=True)
class SummaryEntry:
    node_id: int
    lo: tuple[float, ...]
    hi: tuple[float, ...]
    sum: float
    is_object: bool = False


@dataclass(frozen=True)
class IndexSummary:
    partition_id: int
    level: int
    entries: tuple[SummaryEntry, ...]

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))

    @property
    def total(self) -> float:
        return sum(e.sum for e in self.entries)

    @cached_property
    def lo(self) -> np.ndarray:
        return np.asarray([e.lo for e in self.entries], dtype=np.float64)

    @cached_property
    def hi(self) -> np.ndarray:
        return np.asarray([e.hi for e in self.entries], dtype=np.float64)

    @cached_property
    def sums(self) -> np.ndarray:
        return np.asarray([e.sum for e in self.entries], dtype=np.float64)

    @cached_property
    def node_ids(self) -> np.ndarray:
        return np.asarray([e.node_id for e in self.entries], dtype=np.int64)


def level_cut(tree: ARTree, level: int) -> IndexSummary:
    if level != OBJECTS_LEVEL and not 0 <= level < tree.height:
        raise InvalidInput(f"level {level} outside [0, {tree.height - 1}] and not the objects level")
    entries = tuple(
        SummaryEntry(e.node_id, tuple(map(float, e.lo)), tuple(map(float, e.hi)), e.sum, e.is_object)
        for e in tree.nodes_at(level))
    return IndexSummary(tree.partition_id, level, entries)


def point_summary(partition: Dataset, partition_id: int = 0) -> IndexSummary:
    """One degenerate entry per instance; bounds computed against it are exact."""
    entries = tuple(
        SummaryEntry(row, tuple(map(float, p)), tuple(map(float, p)), float(pr), True)
        for row, (p, pr) in enumerate(zip(partition.coords, partition.probs)))
    return IndexSummary(partition_id, INSTANCES_LEVEL, entries)


def _entry_struct(d: int) -> struct.Struct:
    return struct.Struct(f"<Q{d}d{d}ddB")


def serialize(summary: IndexSummary) -> bytes:
    if not summary.entries:
        raise InvalidInput("summary has no entries")
    d = len(summary.entries[0].lo)
    es = _entry_struct(d)
    parts = [_HEADER.pack(MAGIC, VERSION, summary.partition_id, summary.level, len(summary.entries))]
    for e in summary.entries:
        parts.append(es.pack(e.node_id, *e.lo, *e.hi, e.sum, 1 if e.is_object else 0))
    return b"".join(parts)


def serialized_size(n_entries: int, d: int) -> int:
    return _HEADER.size + n_entries * _entry_struct(d).size


def deserialize(buf: bytes) -> IndexSummary:
    if len(buf) < _HEADER.size:
        raise DecodeError("truncated summary header")
    magic, version, pid, level, count = _HEADER.unpack_from(buf, 0)
    if magic != MAGIC:
        raise DecodeError(f"bad magic {magic!r}")
    if version != VERSION:
        raise DecodeError(f"unsupported version {version}")
    if count == 0:
        raise DecodeError("summary has no entries")
    body = len(buf) - _HEADER.size
    per, rem = divmod(body, count)
    if rem or (per - 17) % 16 or per <= 17:
        raise DecodeError(f"body of {body} bytes does not hold {count} entries")
    d = (per - 17) // 16
    es = _entry_struct(d)
    entries = []
    for i in range(count):
        vals = es.unpack_from(buf, _HEADER.size + i * per)
        flag = vals[-1]
        if flag not in (0, 1):
            raise DecodeError(f"entry {i} has bad flag {flag}")
        entries.append(SummaryEntry(vals[0], tuple(vals[1:1 + d]), tuple(vals[1 + d:1 + 2 * d]),
                                    vals[1 + 2 * d], bool(flag)))
    return IndexSummary(pid, level, tuple(entries))


def check_integrity(tree: ARTree, tol: float = 1e-9) -> list[str]:
    """Recompute aggregates, containment and fill; returns a list of violations."""
    problems = []
    half = math.ceil(tree.fanout / 2)
    D = tree.partition
    for e in tree.walk():
        if e.is_object:
            obj = D.by_id[e.object_id]
            mass = math.fsum(i.prob for i in obj.instances)
            if abs(e.sum - mass) > tol:
                problems.append(f"object entry {e.node_id}: sum {e.sum} != {mass}")
            rows = D.coords[D.rows_of(e.object_id)]
            if np.any(rows < e.lo) or np.any(rows > e.hi):
                problems.append(f"object entry {e.node_id}: instance outside MBR")
            continue
        kids = math.fsum(c.sum for c in e.children)
        if abs(e.sum - kids) > tol:
            problems.append(f"node {e.node_id}: sum {e.sum} != children {kids}")
        for c in e.children:
            if np.any(c.lo < e.lo) or np.any(c.hi > e.hi):
                problems.append(f"node {e.node_id}: child {c.node_id} escapes rect")
            want = OBJECTS_LEVEL if e.level == 0 else e.level - 1
            if c.level != want:
                problems.append(f"node {e.node_id}: child {c.node_id} at level {c.level}")
        n = len(e.children)
        if e is not tree.root and not half <= n <= tree.fanout:
            problems.append(f"node {e.node_id}: {n} children outside [{half}, {tree.fanout}]")
        if e is tree.root and not 1 <= n <= tree.fanout:
            problems.append(f"root has {n} children")
    total = math.fsum(D.probs)
    if abs(tree.root.sum - total) > tol:
        problems.append(f"root sum {tree.root.sum} != partition mass {total}")
    return problems
