"""One-parameter-at-a-time sweeps over the engine, written as long-format CSV."""

from __future__ import annotations

import csv
import statistics
from dataclasses import dataclass, replace
from typing import Iterable, Sequence

from .cluster import make_cluster, run_ptd
from .core import Dataset, InvalidInput
from .data import GenConfig, generate, generate_queries, random_partition
from .index import DEFAULT_FANOUT, OBJECTS_LEVEL

SWEEPS: dict[str, list] = {
    "N": [1, 2, 5, 8, 10],
    "lmax": [1.0, 2.0, 3.0, 4.0, 5.0],
    "k": [5, 10, 15, 20, 25],
    "inst": [(2, 5), (2, 8), (2, 10), (2, 12), (2, 15)],
    "D": [2_000, 4_000, 10_000, 16_000, 20_000],
}
FULL_SIZES = [100_000, 200_000, 500_000, 800_000, 1_000_000]
DESK_MAX_OBJECTS = 20_000

METRICS = ("wall_clock_s", "comm_bytes", "comm_messages", "candidates", "pruning_power", "emitted_pairs")
COLUMNS = ("parameter", "value", "metric", "mean", "stdev", "n_queries")


@dataclass(frozen=True)
class BenchConfig:
    n: int = 10
    l_max: float = 3.0
    k: int = 15
    inst: tuple[int, int] = (2, 5)
    size: int = 10_000
    distribution: str = "uniform"
    d: int = 2
    fanout: int = DEFAULT_FANOUT
    level: int = OBJECTS_LEVEL
    n_queries: int = 20
    seed: int = 0
    threads: bool = True

    @classmethod
    def full(cls, **kw) -> "BenchConfig":
        return cls(inst=(2, 10), size=500_000, **kw)

    def with_value(self, key: str, value) -> "BenchConfig":
        field = {"N": "n", "lmax": "l_max", "k": "k", "inst": "inst", "D": "size"}[key]
        if key == "inst":
            value = tuple(value)
        return replace(self, **{field: value})


def sweep_values(key: str, full: bool = False) -> list:
    if key not in SWEEPS:
        raise InvalidInput(f"unknown sweep key {key!r}; choose from {sorted(SWEEPS)}")
    return list(FULL_SIZES if key == "D" and full else SWEEPS[key])


class _DataCache:
    def __init__(self):
        self._data: dict[tuple, Dataset] = {}

    def get(self, cfg: BenchConfig) -> Dataset:
        key = (cfg.distribution, cfg.size, cfg.d, cfg.l_max, cfg.inst, cfg.seed)
        if key not in self._data:
            self._data.clear()  # keep at most one dataset alive
            self._data[key] = generate(GenConfig(cfg.distribution, count=cfg.size, d=cfg.d,
                                                 l_max=cfg.l_max, inst_min=cfg.inst[0],
                                                 inst_max=cfg.inst[1], seed=cfg.seed))
        return self._data[key]


def run_point(cfg: BenchConfig, data: Dataset | None = None) -> dict[str, list[float]]:
    """Per-query samples of every metric for one configuration."""
    D = data if data is not None else _DataCache().get(cfg)
    part = random_partition(D, cfg.n, cfg.seed)
    cluster = make_cluster(D, part.assignment, cfg.n, levels=cfg.level, fanout=cfg.fanout)
    queries = generate_queries(cfg.n_queries, D.bounding_rect(), cfg.seed)
    out: dict[str, list[float]] = {m: [] for m in METRICS}
    for q in queries:
        m = run_ptd(cluster, q, cfg.k, threads=cfg.threads).metrics
        out["wall_clock_s"].append(m.phase_seconds["total"])
        out["comm_bytes"].append(float(m.comm_bytes))
        out["comm_messages"].append(float(m.comm_messages))
        out["candidates"].append(float(sum(m.candidates.values())))
        pp = m.pruning_power
        out["pruning_power"].append(sum(pp.values()) / len(pp))
        out["emitted_pairs"].append(float(m.emitted_pairs))
    return out


def _fmt(value) -> str:
    if isinstance(value, tuple):
        return f"[{value[0]};{value[1]}]"
    return str(value)


def sweep(base: BenchConfig, key: str, values: Sequence | None = None) -> list[dict]:
    values = sweep_values(key) if values is None else list(values)
    if not values:
        raise InvalidInput("empty sweep list")
    cache = _DataCache()
    rows = []
    for v in values:
        cfg = base.with_value(key, v)
        if cfg.n < 1 or cfg.k < 1 or cfg.size < 1:
            raise InvalidInput(f"invalid sweep value {v!r} for {key}")
        samples = run_point(cfg, cache.get(cfg))
        for metric in METRICS:
            xs = samples[metric]
            rows.append({
                "parameter": key, "value": _fmt(v), "metric": metric,
                "mean": statistics.fmean(xs),
                "stdev": statistics.stdev(xs) if len(xs) > 1 else 0.0,
                "n_queries": len(xs),
            })
    return rows


def write_rows(rows: Iterable[dict], fh, columns: Sequence[str] = COLUMNS) -> None:
    w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(r)


def means(rows: Iterable[dict], metric: str) -> list[float]:
    return [r["mean"] for r in rows if r["metric"] == metric]
