"""Synthetic and rectangle-file datasets, random partitioning, query points.

All randomness is drawn from named sub-streams of one integer seed so that
data, partitioning and queries can be re-seeded independently.
"""

from __future__ import annotations

import csv
import zlib
from dataclasses import dataclass, field

import numpy as np

from .core import MAX_DIMS, Dataset, InvalidInput, Instance, QueryPoint, Rect, UncertainObject

DISTRIBUTIONS = ("uniform", "gaussian", "zipf")
ZIPF_SKEW = 0.8
ZIPF_CELLS = 1000
SPACE = (0.0, 1000.0)


class DataFormatError(ValueError):
    pass


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))


def default_space(d: int) -> Rect:
    return Rect((SPACE[0],) * d, (SPACE[1],) * d)


@dataclass(frozen=True)
class GenConfig:
    distribution: str = "uniform"
    count: int = 500_000
    d: int = 2
    l_max: float = 3.0
    inst_min: int = 2
    inst_max: int = 10
    space: Rect | None = None
    seed: int = 0
    mass: float = 1.0

    def __post_init__(self):
        if self.distribution not in DISTRIBUTIONS:
            raise InvalidInput(f"distribution must be one of {DISTRIBUTIONS}")
        if self.count < 1:
            raise InvalidInput("object count must be positive")
        if not 1 <= self.d <= MAX_DIMS:
            raise InvalidInput(f"dimensionality must be in [1, {MAX_DIMS}]")
        if not self.l_max > 0:
            raise InvalidInput("l_max must be positive")
        if not 1 <= self.inst_min <= self.inst_max:
            raise InvalidInput("need 1 <= inst_min <= inst_max")
        if not 0 < self.mass <= 1:
            raise InvalidInput("per-object probability mass must be in (0, 1]")
        if self.space is not None and self.space.d != self.d:
            raise InvalidInput("space bounds have the wrong dimensionality")

    @property
    def bounds(self) -> Rect:
        return self.space or default_space(self.d)


def _centers(cfg: GenConfig, rng: np.random.Generator) -> np.ndarray:
    lo = np.asarray(cfg.bounds.lo)
    hi = np.asarray(cfg.bounds.hi)
    n, d = cfg.count, cfg.d
    if cfg.distribution == "uniform":
        return rng.uniform(lo, hi, size=(n, d))
    if cfg.distribution == "gaussian":
        mean, sd = (lo + hi) / 2, (hi - lo) / 6
        out = rng.normal(mean, sd, size=(n, d))
        bad = np.any((out < lo) | (out > hi), axis=1)
        while bad.any():
            out[bad] = rng.normal(mean, sd, size=(int(bad.sum()), d))
            bad = np.any((out < lo) | (out > hi), axis=1)
        return out
    ranks = np.arange(1, ZIPF_CELLS + 1, dtype=np.float64)
    pmf = ranks ** -ZIPF_SKEW
    pmf /= pmf.sum()
    cells = rng.choice(ZIPF_CELLS, size=(n, d), p=pmf)
    width = (hi - lo) / ZIPF_CELLS
    return lo + (cells + rng.random((n, d))) * width


def _objects_in_regions(region_lo: np.ndarray, region_hi: np.ndarray, counts: np.ndarray,
                        mass: float, rng: np.random.Generator, first_id: int = 0) -> list[UncertainObject]:
    total = int(counts.sum())
    owner = np.repeat(np.arange(len(counts)), counts)
    u = rng.random((total, region_lo.shape[1]))
    pts = region_lo[owner] + u * (region_hi[owner] - region_lo[owner])
    w = 1.0 - rng.random(total)
    objs, r = [], 0
    for i, m in enumerate(counts.tolist()):
        ww = w[r:r + m]
        probs = (ww / ww.sum() * mass).tolist()
        oid = first_id + i
        objs.append(UncertainObject(oid, tuple(
            Instance(oid, j, tuple(pts[r + j].tolist()), probs[j]) for j in range(m))))
        r += m
    return objs


def generate(cfg: GenConfig) -> Dataset:
    rng = substream(cfg.seed, "datagen")
    centers = _centers(cfg, rng)
    sides = cfg.l_max * (1.0 - rng.random((cfg.count, cfg.d)))
    counts = rng.integers(cfg.inst_min, cfg.inst_max + 1, size=cfg.count)
    objs = _objects_in_regions(centers - sides / 2, centers + sides / 2, counts, cfg.mass, rng)
    return Dataset(cfg.d, tuple(objs))


def load_rect_dataset(path, seed: int = 0, inst_min: int = 2, inst_max: int = 10,
                      mass: float = 1.0) -> Dataset:
    """One object per rectangle line ``lo1 .. lod hi1 .. hid``; instances sampled inside."""
    if not 1 <= inst_min <= inst_max:
        raise InvalidInput("need 1 <= inst_min <= inst_max")
    rects = []
    d = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                vals = [float(x) for x in line.split()]
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            if len(vals) % 2 or not vals:
                raise DataFormatError(f"{path}:{lineno}: expected an even number of coordinates")
            if d is None:
                d = len(vals) // 2
                if d > MAX_DIMS:
                    raise DataFormatError(f"{path}:{lineno}: {d} dimensions exceeds {MAX_DIMS}")
            elif len(vals) != 2 * d:
                raise DataFormatError(f"{path}:{lineno}: expected {2 * d} coordinates, got {len(vals)}")
            lo, hi = vals[:d], vals[d:]
            if not np.all(np.isfinite(vals)):
                raise DataFormatError(f"{path}:{lineno}: non-finite coordinate")
            if any(a > b for a, b in zip(lo, hi)):
                raise DataFormatError(f"{path}:{lineno}: lo exceeds hi")
            rects.append(vals)
    if not rects:
        raise DataFormatError(f"{path}: no rectangles")
    arr = np.asarray(rects, dtype=np.float64)
    rng = substream(seed, "datagen")
    counts = rng.integers(inst_min, inst_max + 1, size=len(arr))
    return Dataset(d, tuple(_objects_in_regions(arr[:, :d], arr[:, d:], counts, mass, rng)))


def write_dataset(D: Dataset, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["object_id", "instance_id", "prob"] + [f"a{k + 1}" for k in range(D.d)])
        for obj in sorted(D.objects, key=lambda o: o.id):
            for inst in obj.instances:
                w.writerow([obj.id, inst.instance_id, repr(inst.prob)] + [repr(x) for x in inst.attrs])


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file") from None
        if header[:3] != ["object_id", "instance_id", "prob"] or len(header) < 4:
            raise DataFormatError(f"{path}: bad header {header}")
        d = len(header) - 3
        groups: dict[int, list[Instance]] = {}
        for lineno, row in enumerate(reader, 2):
            if len(row) != d + 3:
                raise DataFormatError(f"{path}:{lineno}: expected {d + 3} fields")
            try:
                oid, iid = int(row[0]), int(row[1])
                inst = Instance(oid, iid, tuple(float(x) for x in row[3:]), float(row[2]))
            except (ValueError, InvalidInput) as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
            groups.setdefault(oid, []).append(inst)
    if not groups:
        raise DataFormatError(f"{path}: no instances")
    objs = []
    for oid in sorted(groups):
        insts = sorted(groups[oid], key=lambda i: i.instance_id)
        if [i.instance_id for i in insts] != list(range(len(insts))):
            raise DataFormatError(f"{path}: object {oid} instance ids are not 0..{len(insts) - 1}")
        objs.append(UncertainObject(oid, tuple(insts)))
    return Dataset(d, tuple(objs))


@dataclass(frozen=True)
class Partitioning:
    n: int
    assignment: dict[int, int] = field(hash=False)

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInput("need at least one partition")
        if any(not 0 <= p < self.n for p in self.assignment.values()):
            raise InvalidInput("assignment outside [0, n)")

    def sizes(self) -> list[int]:
        out = [0] * self.n
        for p in self.assignment.values():
            out[p] += 1
        return out

    def members(self, p: int) -> list[int]:
        return sorted(o for o, q in self.assignment.items() if q == p)


def random_partition(D: Dataset, n: int, seed: int = 0) -> Partitioning:
    """Independent uniform assignment; empty partitions are then topped up."""
    if n < 1:
        raise InvalidInput("need at least one partition")
    rng = substream(seed, "partitioning")
    ids = sorted(o.id for o in D.objects)
    draw = rng.integers(0, n, size=len(ids)).tolist()
    assignment = dict(zip(ids, draw))
    if len(ids) >= n:
        buckets: list[list[int]] = [[] for _ in range(n)]
        for oid in ids:
            buckets[assignment[oid]].append(oid)
        for p in range(n):
            if buckets[p]:
                continue
            donor = max(range(n), key=lambda b: (len(buckets[b]), -b))
            moved = buckets[donor].pop(int(rng.integers(len(buckets[donor]))))
            buckets[p].append(moved)
            assignment[moved] = p
    return Partitioning(n, assignment)


def write_partitioning(part: Partitioning, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["object_id", "partition"])
        for oid in sorted(part.assignment):
            w.writerow([oid, part.assignment[oid]])


def read_partitioning(path, n: int | None = None) -> Partitioning:
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["object_id", "partition"]:
            raise DataFormatError(f"{path}: bad header {header}")
        assignment = {}
        for lineno, row in enumerate(reader, 2):
            try:
                assignment[int(row[0])] = int(row[1])
            except (ValueError, IndexError) as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from None
    if n is None:
        n = max(assignment.values(), default=0) + 1
    return Partitioning(n, assignment)


def generate_queries(n: int, space: Rect, seed: int = 0) -> list[QueryPoint]:
    if n < 1:
        raise InvalidInput("need at least one query")
    rng = substream(seed, "queries")
    pts = rng.uniform(np.asarray(space.lo), np.asarray(space.hi), size=(n, space.d))
    return [QueryPoint(tuple(p)) for p in pts.tolist()]


def grid_queries(n: int, space: Rect) -> list[QueryPoint]:
    """About ``n`` points on a regular grid (cell centres) over ``space``."""
    d = space.d
    per = max(1, int(round(n ** (1.0 / d))))
    axes = [np.asarray(space.lo[k]) + (np.arange(per) + 0.5) * (space.hi[k] - space.lo[k]) / per
            for k in range(d)]
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, d)
    return [QueryPoint(tuple(p)) for p in mesh.tolist()]
