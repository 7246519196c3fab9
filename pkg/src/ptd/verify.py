"""Randomised equivalence campaign: distributed answers against the exact oracle.

Each configuration draws a dataset, a partitioning, a level choice and a
query point, runs the distributed engine and checks it against brute force
along with the engine's internal invariants.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Optional

from .bounds import QueryContext
from .cluster import Cluster, make_cluster, run_ptd
from .cluster.wire import Phase
from .core import DominanceClass, InvalidInput, QueryPoint, classify_rect, dynamic_dominates
from .data import DISTRIBUTIONS, GenConfig, generate, random_partition, substream
from .index import check_integrity, deserialize, level_cut, serialize
from .oracle import all_scores, ptd_exact

log = logging.getLogger(__name__)

SCORE_TOL = 1e-9
BOUND_SLACK = 1e-12
INSTANCE_LIMIT = 100_000

INVARIANTS = (
    "oracle_equivalence",
    "pruning_safety",
    "candidate_sufficiency",
    "tau_safety",
    "score_decomposition",
    "bound_sandwich",
    "ledger_recount",
    "determinism",
    "index_integrity",
    "summary_roundtrip",
    "dominance_order",
    "classification_consistency",
)


@dataclass(frozen=True)
class CampaignSpec:
    configs: int = 100
    seed: int = 0
    min_objects: int = 50
    max_objects: int = 2000
    inst_min: int = 1
    inst_max: int = 5
    d: int = 2
    servers: tuple[int, ...] = (1, 2, 5)
    ks: tuple[int, ...] = (1, 5, 15)
    fanout: int = 32
    l_max: tuple[float, ...] = (3.0, 30.0, 100.0)
    break_lb: bool = False

    def __post_init__(self):
        if self.configs < 1:
            raise InvalidInput("need at least one configuration")
        if not 1 <= self.min_objects <= self.max_objects:
            raise InvalidInput("need 1 <= min_objects <= max_objects")

    @property
    def worst_instances(self) -> int:
        return self.max_objects * self.inst_max


@dataclass
class ConfigCase:
    index: int
    distribution: str
    n_objects: int
    n: int
    k: int
    levels: dict[int, int]
    query: tuple[float, ...]
    data_seed: int
    l_max: float = 3.0


@dataclass
class Failure:
    invariant: str
    case: int
    detail: str


@dataclass
class CampaignReport:
    spec: CampaignSpec
    checks: Counter = field(default_factory=Counter)
    failures: list[Failure] = field(default_factory=list)
    cases: list[ConfigCase] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures

    def fail(self, invariant: str, case: int, detail: str) -> None:
        self.failures.append(Failure(invariant, case, detail))

    def failures_by_invariant(self) -> dict[str, int]:
        return dict(Counter(f.invariant for f in self.failures))

    def to_dict(self) -> dict:
        bad = self.failures_by_invariant()
        return {
            "passed": self.passed,
            "configs": len(self.cases),
            "seed": self.spec.seed,
            "break_lb": self.spec.break_lb,
            "coverage": [{"invariant": name, "checks": self.checks[name], "failures": bad.get(name, 0)}
                         for name in INVARIANTS],
            "failures": [{"invariant": f.invariant, "config": f.case, "detail": f.detail}
                         for f in self.failures[:200]],
        }


def draw_cases(spec: CampaignSpec) -> list[ConfigCase]:
    rng = substream(spec.seed, "campaign")
    cases = []
    for i in range(spec.configs):
        cases.append(ConfigCase(
            index=i,
            distribution=DISTRIBUTIONS[i % len(DISTRIBUTIONS)],
            n_objects=int(rng.integers(spec.min_objects, spec.max_objects + 1)),
            n=spec.servers[i % len(spec.servers)],
            k=spec.ks[(i // len(spec.servers)) % len(spec.ks)],
            levels={},
            query=(),
            data_seed=int(rng.integers(0, 2**31 - 1)),
            l_max=float(spec.l_max[int(rng.integers(len(spec.l_max)))]),
        ))
    return cases


def _level_choice(cluster_trees, rng) -> dict[int, int]:
    out = {}
    for l, t in enumerate(cluster_trees):
        choices = [-1] if t is None else t.levels
        out[l] = int(choices[int(rng.integers(len(choices)))])
    return out


def _answers_match(got, exp) -> Optional[str]:
    if [a.object_id for a in got] != [a.object_id for a in exp]:
        return f"ids {[a.object_id for a in got]} != {[a.object_id for a in exp]}"
    for g, e in zip(got, exp):
        if abs(g.score - e.score) > SCORE_TOL:
            return f"object {g.object_id}: expected {e.score!r}, got {g.score!r}"
    return None


def _phase_of_loss(oid, result) -> str:
    tr = result.trace
    if oid in tr.mapper_pruned:
        return "filtering-mapper"
    if oid in tr.reducer_pruned:
        return "filtering-reducer"
    if oid in tr.refine_pruned:
        return "refinement-mapper"
    return "master"


def _check_bounds(report, case, cluster: Cluster, q: QueryPoint, exact: dict, rng,
                  skip_full: bool, sample: int = 20) -> None:
    for w in cluster.workers:
        P = w.partition
        if not len(P):
            continue
        ctx = QueryContext(w.view, q, skip_full=skip_full)
        picks = rng.choice(len(P), size=min(sample, len(P)), replace=False).tolist()
        lbs, ubs = ctx.object_bounds(picks)
        for pos, lb, ub in zip(picks, lbs, ubs):
            oid = P.objects[pos].id
            report.checks["bound_sandwich"] += 1
            s = exact[oid]
            if not (lb <= s + BOUND_SLACK and s <= ub + BOUND_SLACK):
                report.fail("bound_sandwich", case.index,
                            f"object {oid} partition {w.partition_id}: lb={lb!r} exact={s!r} ub={ub!r}")


def _check_ledger(report, case, result, d: int) -> None:
    report.checks["ledger_recount"] += 1
    led = result.ledger
    rows = led.rows()
    total = sum(r[4] for r in rows)
    n_cand = sum(r[3] for r in rows if r[2] == int(Phase.CANDIDATE))
    cand_bytes = sum(r[4] for r in rows if r[2] == int(Phase.CANDIDATE))
    expect = n_cand * (13 + 8 * (7 + d))
    if total != led.total_bytes or cand_bytes != expect \
            or n_cand != result.metrics.emitted_pairs:
        report.fail("ledger_recount", case.index,
                    f"total {total} vs {led.total_bytes}; candidate bytes {cand_bytes} vs {expect}")


def _check_geometry(report, case, cluster: Cluster, q: QueryPoint, rng) -> None:
    for w in cluster.workers:
        t = w.tree
        if t is None:
            continue
        report.checks["index_integrity"] += 1
        problems = check_integrity(t)
        if problems:
            report.fail("index_integrity", case.index, f"partition {w.partition_id}: {problems[:3]}")
        for lv in t.levels:
            report.checks["summary_roundtrip"] += 1
            s = level_cut(t, lv)
            back = deserialize(serialize(s))
            if back != s:
                report.fail("summary_roundtrip", case.index, f"partition {w.partition_id} level {lv}")
        P = w.partition
        nodes = list(t.by_id.values())
        for _ in range(5):
            e = nodes[int(rng.integers(len(nodes)))]
            inst = P.objects[int(rng.integers(len(P)))].instances[0]
            cls = classify_rect(inst, q, e.rect)
            rows = t.subtree_rows(e.node_id)
            doms = [dynamic_dominates(inst.attrs, P.coords[r], q.attrs) for r in rows.tolist()]
            report.checks["classification_consistency"] += 1
            if cls == DominanceClass.FULL and not all(doms):
                report.fail("classification_consistency", case.index, f"Full but misses, node {e.node_id}")
            if cls == DominanceClass.NONE and any(doms):
                report.fail("classification_consistency", case.index, f"None but hits, node {e.node_id}")
            u, v = inst.attrs, tuple(P.coords[int(rows[0])].tolist())
            report.checks["dominance_order"] += 1
            if dynamic_dominates(u, u, q.attrs) or (
                    dynamic_dominates(u, v, q.attrs) and dynamic_dominates(v, u, q.attrs)):
                report.fail("dominance_order", case.index, "dominance is not a strict order")


def run_case(spec: CampaignSpec, case: ConfigCase, report: CampaignReport) -> None:
    cfg = GenConfig(case.distribution, count=case.n_objects, d=spec.d, l_max=case.l_max,
                    inst_min=spec.inst_min, inst_max=spec.inst_max, seed=case.data_seed)
    D = generate(cfg)
    rng = substream(case.data_seed, "campaign-case")
    part = random_partition(D, case.n, case.data_seed)
    base = make_cluster(D, part.assignment, case.n, levels=-1, fanout=spec.fanout)
    case.levels = _level_choice(base.trees, rng)
    cluster = make_cluster(D, part.assignment, case.n, levels=case.levels, fanout=spec.fanout)
    lo, hi = cfg.bounds.lo, cfg.bounds.hi
    q = QueryPoint(tuple(rng.uniform(lo, hi).tolist()))
    case.query = q.attrs
    k = case.k

    result = run_ptd(cluster, q, k, threads=True, skip_full=spec.break_lb)
    expected = ptd_exact(D, q, k)
    exact = all_scores(D, q)

    report.checks["oracle_equivalence"] += 1
    diff = _answers_match(result.answers, expected)
    if diff:
        lost = [e.object_id for e in expected if e.object_id not in {a.object_id for a in result.answers}]
        where = ", ".join(f"{o}@{_phase_of_loss(o, result)}" for o in lost)
        report.fail("oracle_equivalence", case.index, f"{diff}; lost: {where or 'none'}")

    top = {e.object_id for e in expected}
    tr = result.trace
    pruned = tr.mapper_pruned | tr.reducer_pruned | tr.refine_pruned
    report.checks["pruning_safety"] += 1
    bad = sorted(top & pruned)
    if bad:
        report.fail("pruning_safety", case.index,
                    "; ".join(f"{o} pruned at {_phase_of_loss(o, result)}" for o in bad))
    report.checks["candidate_sufficiency"] += 1
    missing = sorted(top - set(tr.candidates))
    if missing:
        report.fail("candidate_sufficiency", case.index, f"top-k objects not candidates: {missing}")

    report.checks["tau_safety"] += 1
    kth = expected[-1].score if len(expected) == k else -math.inf
    taus = [t for t in result.metrics.taus.values() if math.isfinite(t)]
    if taus and max(taus) > kth + BOUND_SLACK:
        report.fail("tau_safety", case.index, f"max tau {max(taus)!r} exceeds k-th score {kth!r}")

    for oid, s in tr.reported.items():
        report.checks["score_decomposition"] += 1
        if abs(s - exact[oid]) > SCORE_TOL:
            report.fail("score_decomposition", case.index, f"object {oid}: {s!r} vs {exact[oid]!r}")

    for oid, (lb, ub) in tr.candidates.items():
        report.checks["bound_sandwich"] += 1
        if not (lb <= exact[oid] + BOUND_SLACK and exact[oid] <= ub + BOUND_SLACK):
            report.fail("bound_sandwich", case.index,
                        f"candidate {oid}: lb={lb!r} exact={exact[oid]!r} ub={ub!r}")
    _check_bounds(report, case, cluster, q, exact, rng, spec.break_lb)
    _check_ledger(report, case, result, D.d)

    report.checks["determinism"] += 1
    again = run_ptd(cluster, q, k, threads=False, skip_full=spec.break_lb)
    if [(a.object_id, a.score) for a in again.answers] != [(a.object_id, a.score) for a in result.answers] \
            or again.ledger.rows() != result.ledger.rows():
        report.fail("determinism", case.index, "threaded and serial runs differ")

    _check_geometry(report, case, cluster, q, rng)


def run_campaign(spec: CampaignSpec, force: bool = False,
                 progress: Callable[[int, ConfigCase], None] | None = None) -> CampaignReport:
    if spec.worst_instances > INSTANCE_LIMIT and not force:
        raise InvalidInput(
            f"configurations may reach {spec.worst_instances} instances (> {INSTANCE_LIMIT}); "
            "pass --force to run anyway")
    report = CampaignReport(spec)
    for case in draw_cases(spec):
        report.cases.append(case)
        try:
            run_case(spec, case, report)
        except Exception as exc:  # a crash is a verification failure, not a tool error
            log.exception("config %d crashed", case.index)
            report.fail("oracle_equivalence", case.index, f"crash: {exc!r}")
        if progress:
            progress(case.index, case)
    return report
