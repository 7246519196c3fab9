"""End-to-end acceptance checks; each prints a single PASS/FAIL line.

Slow (roughly eight minutes on one core). Run alone with
``pytest tests/test_acceptance.py -v``.
"""

import json
import time

import pytest

from ptd.bench import BenchConfig, means, sweep
from ptd.bounds import QueryContext, RemoteView
from ptd.cli import main
from ptd.cluster import build_trees, split
from ptd.core import QueryPoint
from ptd.costmodel import QueryWorkload, measure_levels, sweep_levels
from ptd.data import DISTRIBUTIONS, GenConfig, generate, random_partition, substream
from ptd.fixtures import fixture_query, toy_dataset
from ptd.index import IndexSummary, check_integrity, level_cut, point_summary
from ptd.oracle import all_scores, instance_score_exact
from ptd.verify import CampaignSpec, run_campaign

pytestmark = pytest.mark.acceptance


@pytest.fixture(scope="module")
def campaign():
    t0 = time.perf_counter()
    spec = CampaignSpec(configs=100, seed=0, min_objects=50, max_objects=2000,
                        servers=(1, 2, 5), ks=(1, 5, 15))
    rep = run_campaign(spec)
    return rep, time.perf_counter() - t0


def test_oracle_equivalence(campaign, verdict):
    rep, secs = campaign
    dists = {c.distribution for c in rep.cases}
    bad = rep.failures_by_invariant().get("oracle_equivalence", 0)
    ok = len(rep.cases) >= 100 and bad == 0 and dists == set(DISTRIBUTIONS) \
        and {c.n for c in rep.cases} == {1, 2, 5} and {c.k for c in rep.cases} == {1, 5, 15}
    first = next((f.detail for f in rep.failures if f.invariant == "oracle_equivalence"), "")
    verdict("oracle equivalence", ok,
            f"{len(rep.cases)} configs, {bad} mismatches, {secs:.0f}s {first}".strip())


def test_running_example(verdict):
    D, q = toy_dataset(), fixture_query()
    a = D.by_id[0]
    got = [instance_score_exact(i, D, q) for i in a.instances]
    s_a = all_scores(D, q)[0]
    want = [0.36, 0.66, 0.48]
    ok = all(abs(g - w) <= 1e-12 for g, w in zip(got, want)) and abs(s_a - 1.5) <= 1e-12
    verdict("running example", ok,
            "S(a1..a3)=" + ", ".join(f"{g:.4g}" for g in got) + f", S(a)={s_a:.4g} "
            "(want 0.36, 0.66, 0.48, 1.5)")


def _random_views(D, n, rng, points=False):
    part = random_partition(D, n, int(rng.integers(1 << 30)))
    parts = split(D, part.assignment, n)
    trees = build_trees(parts, int(rng.choice([2, 4, 8, 32])))
    sums = {}
    for i, t in enumerate(trees):
        if points:
            sums[i] = point_summary(parts[i], i)
        elif t is None:
            sums[i] = IndexSummary(i, -1, ())
        else:
            lv = t.levels
            sums[i] = level_cut(t, int(lv[int(rng.integers(len(lv)))]))
    return [RemoteView(i, parts[i], trees[i], {l: s for l, s in sums.items() if l != i})
            for i in range(n)]


def test_bound_sandwich(verdict):
    rng = substream(0, "acceptance-sandwich")
    trials = violations = 0
    worst = 0.0
    setups = 0
    while trials < 10_000:
        setups += 1
        cfg = GenConfig(DISTRIBUTIONS[setups % 3], count=int(rng.integers(40, 200)),
                        l_max=float(rng.choice([3.0, 30.0, 150.0])), inst_min=1, inst_max=5,
                        seed=int(rng.integers(1 << 30)))
        D = generate(cfg)
        q = QueryPoint(tuple(rng.uniform(0, 1000, 2).tolist()))
        exact = all_scores(D, q)
        for v in _random_views(D, int(rng.choice([2, 3, 5])), rng):
            if not len(v.partition):
                continue
            lbs, ubs = QueryContext(v, q).object_bounds(list(range(len(v.partition))))
            for obj, lb, ub in zip(v.partition.objects, lbs, ubs):
                trials += 1
                s = exact[obj.id]
                if lb > s + 1e-12 or s > ub + 1e-12:
                    violations += 1
    for _ in range(30):
        D = generate(GenConfig(count=int(rng.integers(30, 120)), l_max=60, inst_min=1, inst_max=5,
                               seed=int(rng.integers(1 << 30))))
        q = QueryPoint(tuple(rng.uniform(0, 1000, 2).tolist()))
        exact = all_scores(D, q)
        for v in _random_views(D, int(rng.choice([2, 3, 5])), rng, points=True):
            if not len(v.partition):
                continue
            lbs, ubs = QueryContext(v, q).object_bounds(list(range(len(v.partition))))
            for obj, lb, ub in zip(v.partition.objects, lbs, ubs):
                worst = max(worst, abs(lb - exact[obj.id]), abs(ub - exact[obj.id]))
    verdict("bound sandwich", trials >= 10_000 and violations == 0 and worst <= 1e-9,
            f"{trials} trials over {setups} setups, {violations} violations; "
            f"point summaries max |bound - exact| = {worst:.2e}")


def test_pruning_safety(campaign, verdict):
    rep, _ = campaign
    checks = rep.checks["pruning_safety"]
    bad = rep.failures_by_invariant()
    lost = bad.get("pruning_safety", 0) + bad.get("candidate_sufficiency", 0)
    verdict("pruning safety", checks >= 100 and lost == 0,
            f"{checks} configs, {lost} top-k objects pruned")


def test_cost_model_fidelity(verdict):
    from scipy.stats import spearmanr

    t0 = time.perf_counter()
    D = generate(GenConfig(count=5000, inst_min=2, inst_max=5, seed=0))
    part = random_partition(D, 5, 0)
    fanout = 8
    trees = build_trees(split(D, part.assignment, 5), fanout)
    wl = QueryWorkload.uniform_grid(D, 9)
    sw = sweep_levels(trees, 15, wl)
    est = {L: sw.estimates[L].cc for L in sw.uniform_levels}
    act = {L: measure_levels(trees, sw.effective[L], 15, wl, fanout).cc for L in sw.uniform_levels}
    chosen = sw.choice.levels
    match = [L for L in sw.uniform_levels if sw.effective[L] == chosen]
    chosen_cc = act[match[0]] if match else measure_levels(trees, chosen, 15, wl, fanout).cc
    best = min([*act.values(), chosen_cc])
    rho = float(spearmanr([est[L] for L in sw.uniform_levels],
                          [act[L] for L in sw.uniform_levels]).statistic)
    ok = rho >= 0.8 and chosen_cc <= 1.5 * best
    verdict("cost-model fidelity", ok,
            f"spearman {rho:.3f} over levels {sw.uniform_levels}; selected {chosen} "
            f"actual CC {chosen_cc:.0f} vs best {best:.0f}; est {[round(est[L]) for L in est]}, "
            f"act {[round(act[L]) for L in act]}; {time.perf_counter() - t0:.0f}s")


def _one_inversion_ok(xs, tol=0.05) -> bool:
    drops = [(a, b) for a, b in zip(xs, xs[1:]) if b < a]
    return len(drops) == 0 or (len(drops) == 1 and drops[0][1] >= (1 - tol) * drops[0][0])


def test_scaling_trends(verdict):
    base = BenchConfig(size=10_000, n_queries=20, threads=True)
    ns = [1, 2, 5, 8, 10]
    rows = sweep(base, "N", ns)
    nbytes = means(rows, "comm_bytes")
    wall = means(rows, "wall_clock_s")
    bytes_ok = _one_inversion_ok(nbytes)
    wall_ok = wall[-1] < wall[0]
    verdict("scaling trends", bytes_ok and wall_ok,
            f"bytes by N {dict(zip(ns, [round(b) for b in nbytes]))} "
            f"({'non-decreasing' if bytes_ok else 'DECREASING'}); wall clock N=1 {wall[0]:.3f}s, "
            f"N=10 {wall[-1]:.3f}s ({'ok' if wall_ok else 'N=10 not faster'})")


def test_determinism(tmp_path, verdict, capsys):
    data = tmp_path / "d.csv"
    first, r1, r2 = (tmp_path / n for n in ("first.json", "r1.json", "r2.json"))
    assert main(["gen", "--n-objects", "2000", "--lmax", "20", "--inst-max", "5", "--seed", "5",
                 "--out", str(data)]) == 0
    assert main(["query", "--data", str(data), "--servers", "5", "--k", "10", "--n-queries", "5",
                 "--level", "0", "--seed", "5", "--out", str(first)]) == 0
    assert main(["query", "--manifest", str(first), "--out", str(r1)]) == 0
    assert main(["query", "--manifest", str(first), "--out", str(r2)]) == 0
    capsys.readouterr()
    docs = [json.loads(p.read_text()) for p in (first, r1, r2)]
    key = [json.dumps([(r["answers"], r["ledger"]) for r in d["queries"]]).encode() for d in docs]
    verdict("determinism", key[0] == key[1] == key[2],
            f"{len(docs[0]['queries'])} queries, answers and ledger totals byte-identical "
            f"across 3 runs" if key[0] == key[1] == key[2] else "runs differ")


def test_index_integrity(campaign, verdict):
    rep, _ = campaign
    built = problems = 0
    for dist in DISTRIBUTIONS:
        for count, lmax in ((1, 3.0), (37, 30.0), (3000, 3.0), (8000, 100.0)):
            D = generate(GenConfig(dist, count=count, l_max=lmax, inst_min=1, inst_max=6, seed=count))
            for n in (1, 5):
                part = random_partition(D, n, 1)
                for fanout in (2, 8, 32):
                    for t in build_trees(split(D, part.assignment, n), fanout):
                        if t is None:
                            continue
                        built += 1
                        problems += len(check_integrity(t))
    camp = rep.failures_by_invariant().get("index_integrity", 0)
    verdict("index integrity", problems == 0 and camp == 0,
            f"{built} trees built here plus {rep.checks['index_integrity']} in the campaign, "
            f"{problems + camp} violations")
