"""``ptd`` command line: data generation, partitioning, indexing, queries, checks, sweeps."""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import statistics
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import bench, costmodel
from .cluster import QueryFailure, build_trees, make_cluster, run_ptd, split
from .core import Dataset, InvalidInput, QueryPoint
from .data import (
    DISTRIBUTIONS, DataFormatError, GenConfig, Partitioning, generate, generate_queries,
    load_rect_dataset, random_partition, read_dataset, read_partitioning, write_dataset,
    write_partitioning,
)
from .index import DEFAULT_FANOUT, OBJECTS_LEVEL, DecodeError, check_integrity, level_cut, serialize
from .oracle import ptd_exact
from .verify import CampaignSpec, run_campaign

log = logging.getLogger("ptd")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
MANIFEST_VERSION = 1


class UsageError(Exception):
    pass


# ---------------------------------------------------------------- helpers

def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _dump(obj, path: Optional[str]) -> None:
    text = json.dumps(obj, indent=2, sort_keys=False) + "\n"
    if path:
        Path(path).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _need(path: Optional[str], what: str, hint: str) -> Path:
    if not path:
        raise UsageError(f"missing {what}; {hint}")
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} {path} does not exist; {hint}")
    return p


def _load_data(path: Optional[str]) -> Dataset:
    return read_dataset(_need(path, "dataset", "create one with `ptd gen --out FILE`"))


def _load_partitioning(args, D: Dataset) -> Partitioning:
    if getattr(args, "partitioning", None):
        part = read_partitioning(_need(args.partitioning, "partitioning",
                                       "create one with `ptd partition`"))
        missing = {o.id for o in D.objects} - set(part.assignment)
        if missing:
            raise UsageError(f"partitioning does not cover objects {sorted(missing)[:5]}...")
        return part
    return random_partition(D, args.servers, args.seed)


def _read_points(path: str, d: int) -> list[QueryPoint]:
    pts = []
    with open(_need(path, "query file", "give a CSV with one point per row"), encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    for lineno, row in enumerate(rows, 1):
        if not row:
            continue
        try:
            vals = [float(x) for x in row]
        except ValueError:
            if lineno == 1:
                continue  # header
            raise DataFormatError(f"{path}:{lineno}: non-numeric query coordinate") from None
        if len(vals) != d:
            raise DataFormatError(f"{path}:{lineno}: expected {d} coordinates")
        pts.append(QueryPoint(tuple(vals)))
    if not pts:
        raise DataFormatError(f"{path}: no query points")
    return pts


def _queries(args, D: Dataset) -> list[QueryPoint]:
    if getattr(args, "query", None):
        pts = []
        for text in args.query:
            try:
                pts.append(QueryPoint(tuple(float(x) for x in text.split(","))))
            except ValueError:
                raise UsageError(f"bad --query {text!r}; expected comma-separated numbers") from None
            if pts[-1].d != D.d:
                raise UsageError(f"--query {text!r} has {pts[-1].d} coordinates, data has {D.d}")
        return pts
    if getattr(args, "queries_file", None):
        return _read_points(args.queries_file, D.d)
    if args.n_queries < 1:
        raise UsageError("--n-queries must be positive")
    return generate_queries(args.n_queries, D.bounding_rect(), args.seed)


def _workload(args, D: Dataset) -> costmodel.QueryWorkload:
    if args.workload:
        return costmodel.QueryWorkload.from_log(_read_points(args.workload, D.d))
    return costmodel.QueryWorkload.uniform_grid(D, args.n_workload)


def _fanout(args) -> int:
    if getattr(args, "index", None):
        meta = json.loads((_need(args.index, "index directory", "run `ptd index`") / "index.json")
                          .read_text(encoding="utf-8"))
        return int(meta["fanout"])
    return args.fanout


def _answers(ans) -> list[list]:
    return [[a.object_id, a.score] for a in ans]


# ---------------------------------------------------------------- commands

def cmd_gen(args) -> int:
    if args.rect_file:
        D = load_rect_dataset(args.rect_file, args.seed, args.inst_min, args.inst_max)
        config = {"rect_file": args.rect_file, "inst_min": args.inst_min, "inst_max": args.inst_max}
    else:
        cfg = GenConfig(args.dist, count=args.n_objects, d=args.dims, l_max=args.lmax,
                        inst_min=args.inst_min, inst_max=args.inst_max, seed=args.seed)
        D = generate(cfg)
        config = {"dist": args.dist, "n_objects": args.n_objects, "dims": args.dims,
                  "lmax": args.lmax, "inst_min": args.inst_min, "inst_max": args.inst_max}
    write_dataset(D, args.out)
    stub = {"version": MANIFEST_VERSION, "command": "gen", "config": config, "seed": args.seed,
            "dataset": str(args.out), "dataset_sha256": _sha256(args.out),
            "objects": len(D), "instances": D.n_instances}
    _dump(stub, f"{args.out}.manifest.json")
    print(f"wrote {len(D)} objects ({D.n_instances} instances) to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_partition(args) -> int:
    D = _load_data(args.data)
    part = random_partition(D, args.servers, args.seed)
    write_partitioning(part, args.out)
    print(f"partition sizes: {part.sizes()}", file=sys.stderr)
    return EXIT_OK


def cmd_index(args) -> int:
    D = _load_data(args.data)
    part = _load_partitioning(args, D)
    trees = build_trees(split(D, part.assignment, part.n), args.fanout)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = {"fanout": args.fanout, "partitions": []}
    status = EXIT_OK
    for l, t in enumerate(trees):
        if t is None:
            meta["partitions"].append({"partition": l, "objects": 0, "levels": []})
            continue
        problems = check_integrity(t)
        if problems:
            print(f"partition {l}: integrity violations: {problems[:5]}", file=sys.stderr)
            status = EXIT_FAIL
        levels = []
        for lv in t.levels:
            s = level_cut(t, lv)
            buf = serialize(s)
            name = f"p{l}_L{lv}.ptds"
            (out / name).write_bytes(buf)
            levels.append({"level": lv, "entries": len(s.entries), "bytes": len(buf), "file": name})
        meta["partitions"].append({"partition": l, "objects": len(t.partition),
                                   "height": t.height, "levels": levels})
    _dump(meta, str(out / "index.json"))
    return status


def cmd_select_levels(args) -> int:
    D = _load_data(args.data)
    part = _load_partitioning(args, D)
    trees = build_trees(split(D, part.assignment, part.n), _fanout(args))
    wl = _workload(args, D)
    sweep = costmodel.sweep_levels(trees, args.k, wl)
    doc = {
        "levels": sweep.choice.to_dict(),
        "k": args.k,
        "workload": {"source": wl.source, "points": len(wl)},
        "estimates": {str(L): {"cc": e.cc, "per_partition": list(e.per_partition),
                               "scand": list(e.scand)}
                      for L, e in sweep.estimates.items()},
    }
    _dump(doc, args.out)
    return EXIT_OK


def _levels_for(args, trees, D) -> dict[int, int]:
    if args.auto:
        return dict(costmodel.select_levels(trees, args.k, costmodel.QueryWorkload.uniform_grid(D)).levels)
    if args.levels:
        doc = json.loads(_need(args.levels, "levels file", "run `ptd select-levels`").read_text())
        levels = {int(k): int(v) for k, v in doc.get("levels", doc).items()}
        costmodel.LevelChoice(levels).check(trees)
        return levels
    return {l: args.level for l in range(len(trees))}


def _run_queries(D, part, levels, fanout, queries, k, threads) -> dict:
    cluster = make_cluster(D, part.assignment, part.n, levels=levels, fanout=fanout)
    results = []
    for q in queries:
        r = run_ptd(cluster, q, k, threads=threads)
        results.append({"q": list(q.attrs), "answers": _answers(r.answers),
                        "ledger": {"total_bytes": r.ledger.total_bytes,
                                   "total_messages": r.ledger.total_messages},
                        "metrics": r.metrics.to_dict()})
    walls = [r["metrics"]["phase_seconds"]["total"] for r in results]
    nbytes = [r["ledger"]["total_bytes"] for r in results]
    return {"levels": {str(l): v for l, v in sorted(cluster.levels.items())},
            "index_bytes": cluster.index_bytes,
            "queries": results,
            "averages": {"wall_clock_s": statistics.fmean(walls),
                         "comm_bytes": statistics.fmean(nbytes)}}


def cmd_query(args) -> int:
    if args.manifest:
        return _rerun(args)
    D = _load_data(args.data)
    part = _load_partitioning(args, D)
    fanout = _fanout(args)
    trees = build_trees(split(D, part.assignment, part.n), fanout)
    levels = _levels_for(args, trees, D)
    queries = _queries(args, D)
    run = _run_queries(D, part, levels, fanout, queries, args.k, args.threads)
    manifest = {
        "version": MANIFEST_VERSION, "command": "query",
        "config": {"servers": part.n, "k": args.k, "fanout": fanout, "n_queries": len(queries),
                   "threads": args.threads, "objects": len(D), "instances": D.n_instances,
                   "dims": D.d},
        "seed": args.seed,
        "dataset": str(args.data), "dataset_sha256": _sha256(args.data),
        "partitioning": {str(o): p for o, p in sorted(part.assignment.items())},
        **run,
    }
    _dump(manifest, args.out)
    if args.out:
        a = run["averages"]
        print(f"{len(queries)} queries: mean wall clock {a['wall_clock_s']:.4f}s, "
              f"mean communication {a['comm_bytes']:.0f} bytes", file=sys.stderr)
    return EXIT_OK


def _rerun(args) -> int:
    m = json.loads(_need(args.manifest, "manifest", "write one with `ptd query --out`")
                   .read_text(encoding="utf-8"))
    if m.get("command") != "query":
        raise UsageError("manifest was not written by `ptd query`")
    data = args.data or m["dataset"]
    D = _load_data(data)
    if _sha256(data) != m["dataset_sha256"]:
        raise UsageError(f"dataset {data} does not match the manifest checksum")
    cfg = m["config"]
    part = Partitioning(cfg["servers"], {int(o): int(p) for o, p in m["partitioning"].items()})
    levels = {int(l): int(v) for l, v in m["levels"].items()}
    queries = [QueryPoint(tuple(r["q"])) for r in m["queries"]]
    run = _run_queries(D, part, levels, cfg["fanout"], queries, cfg["k"], cfg["threads"])
    out = {**m, **run, "dataset": str(data)}
    _dump(out, args.out)
    return EXIT_OK


def cmd_oracle(args) -> int:
    D = _load_data(args.data)
    queries = _queries(args, D)
    results = [{"q": list(q.attrs), "answers": _answers(ptd_exact(D, q, args.k))} for q in queries]
    _dump({"command": "oracle", "k": args.k, "queries": results}, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    spec = CampaignSpec(configs=args.configs, seed=args.seed, min_objects=args.min_objects,
                        max_objects=args.max_objects, fanout=args.fanout, break_lb=args.break_lb)

    def progress(i, case):
        log.info("config %d/%d: %s |D|=%d N=%d k=%d", i + 1, spec.configs, case.distribution,
                 case.n_objects, case.n, case.k)

    report = run_campaign(spec, force=args.force, progress=progress)
    doc = report.to_dict()
    _dump(doc, args.out)
    verdict = "PASS" if report.passed else "FAIL"
    print(f"verify: {verdict} ({len(report.cases)} configs, {len(report.failures)} failures)",
          file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_FAIL


def _parse_values(key: str, text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        if key == "inst":
            lo, _, hi = tok.partition("-")
            out.append((int(lo), int(hi)))
        elif key == "lmax":
            out.append(float(tok))
        else:
            out.append(int(tok))
    return out


def cmd_bench(args) -> int:
    base = bench.BenchConfig(n=args.servers, l_max=args.lmax, k=args.k,
                             inst=(args.inst_min, args.inst_max), size=args.n_objects,
                             distribution=args.dist, fanout=args.fanout, level=args.level,
                             n_queries=args.n_queries, seed=args.seed, threads=args.threads)
    if args.full:
        base = bench.BenchConfig.full(n=base.n, l_max=base.l_max, k=base.k,
                                      distribution=base.distribution, fanout=base.fanout,
                                      level=base.level, n_queries=base.n_queries, seed=base.seed,
                                      threads=base.threads)
    if args.values is not None:
        try:
            values = _parse_values(args.vary, args.values)
        except ValueError:
            raise UsageError(f"cannot parse --values {args.values!r} for --vary {args.vary}") from None
        if not values:
            raise UsageError("empty sweep list")
    else:
        values = bench.sweep_values(args.vary, args.full)
    if not args.full:
        big = [v for v in values if args.vary == "D" and v > bench.DESK_MAX_OBJECTS]
        if big or (args.vary != "D" and base.size > bench.DESK_MAX_OBJECTS):
            raise UsageError(f"object counts above {bench.DESK_MAX_OBJECTS} need --full")
    rows = bench.sweep(base, args.vary, values)
    if args.out:
        with open(args.out, "w", encoding="utf-8", newline="") as fh:
            bench.write_rows(rows, fh)
    else:
        bench.write_rows(rows, sys.stdout)
    return EXIT_OK


def cmd_cost_report(args) -> int:
    D = _load_data(args.data)
    part = _load_partitioning(args, D)
    fanout = _fanout(args)
    trees = build_trees(split(D, part.assignment, part.n), fanout)
    wl = _workload(args, D)
    rep = costmodel.cost_report(trees, args.k, wl, fanout, threads=args.threads)
    fh = open(args.out, "w", encoding="utf-8", newline="") if args.out else sys.stdout
    try:
        bench.write_rows(rep.rows, fh, costmodel.REPORT_COLUMNS)
    finally:
        if args.out:
            fh.close()
    print(f"selected levels: {rep.sweep.choice.to_dict()}; "
          f"spearman(est_CC, act_CC) over uniform levels = {rep.spearman():.3f}", file=sys.stderr)
    return EXIT_OK


# ---------------------------------------------------------------- parser

def _positive(text: str) -> int:
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _data_args(p, partitioning=True):
    p.add_argument("--data", required=False, help="dataset CSV from `ptd gen`")
    if partitioning:
        p.add_argument("--partitioning", help="partitioning CSV from `ptd partition`")
        p.add_argument("--servers", type=_positive, default=10,
                       help="servers when partitioning on the fly (default 10)")
    p.add_argument("--seed", type=int, default=0)


def _threads(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--threads", dest="threads", action="store_true", default=True,
                   help="run workers on a thread pool (default)")
    g.add_argument("--serial", dest="threads", action="store_false",
                   help="run workers one after another")


def _workload_args(p):
    p.add_argument("--workload", help="CSV of historical query points")
    p.add_argument("--n-workload", type=_positive, default=costmodel.DEFAULT_WORKLOAD,
                   help="grid points when no --workload is given (default 64)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ptd", description="Distributed probabilistic top-k dominating queries.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a synthetic dataset")
    p.add_argument("--dist", choices=DISTRIBUTIONS, default="uniform")
    p.add_argument("--n-objects", type=_positive, default=500_000)
    p.add_argument("--lmax", type=float, default=3.0)
    p.add_argument("--inst-min", type=_positive, default=2)
    p.add_argument("--inst-max", type=_positive, default=10)
    p.add_argument("--dims", type=_positive, default=2)
    p.add_argument("--rect-file", help="build objects from a rectangle file instead")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("partition", help="randomly assign objects to servers")
    _data_args(p, partitioning=False)
    p.add_argument("--servers", type=_positive, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_partition)

    p = sub.add_parser("index", help="build per-partition aR-trees and write level summaries")
    _data_args(p)
    p.add_argument("--fanout", type=int, default=DEFAULT_FANOUT)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(fn=cmd_index)

    p = sub.add_parser("select-levels", help="choose summary levels with the cost model")
    _data_args(p)
    p.add_argument("--index", help="index directory (takes the fanout from it)")
    p.add_argument("--fanout", type=int, default=DEFAULT_FANOUT)
    p.add_argument("--k", type=_positive, default=15)
    _workload_args(p)
    p.add_argument("--out")
    p.set_defaults(fn=cmd_select_levels)

    p = sub.add_parser("query", help="run distributed top-k dominating queries")
    _data_args(p)
    p.add_argument("--index", help="index directory (takes the fanout from it)")
    p.add_argument("--fanout", type=int, default=DEFAULT_FANOUT)
    p.add_argument("--k", type=_positive, default=15)
    p.add_argument("--n-queries", type=int, default=20)
    p.add_argument("--query", action="append", help="explicit query point x,y,...; repeatable")
    p.add_argument("--queries-file", help="CSV of query points")
    g = p.add_mutually_exclusive_group()
    g.add_argument("--levels", help="levels JSON from `ptd select-levels`")
    g.add_argument("--level", type=int, default=OBJECTS_LEVEL,
                   help="one level for every partition (-1 = object MBRs, default)")
    g.add_argument("--auto", action="store_true", help="run level selection first")
    p.add_argument("--manifest", help="re-run exactly what a previous manifest describes")
    p.add_argument("--out", help="write the run manifest here instead of stdout")
    _threads(p)
    p.set_defaults(fn=cmd_query)

    p = sub.add_parser("oracle", help="brute-force answers on the whole dataset")
    _data_args(p, partitioning=False)
    p.add_argument("--k", type=_positive, default=15)
    p.add_argument("--n-queries", type=int, default=20)
    p.add_argument("--query", action="append")
    p.add_argument("--queries-file")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_oracle)

    p = sub.add_parser("verify", help="randomised oracle-equivalence campaign")
    p.add_argument("--configs", type=_positive, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--min-objects", type=_positive, default=50)
    p.add_argument("--max-objects", type=_positive, default=2000)
    p.add_argument("--fanout", type=int, default=DEFAULT_FANOUT)
    p.add_argument("--break-lb", action="store_true", help="inject a bound fault (drop Full entries)")
    p.add_argument("--force", action="store_true", help="allow more than 100,000 instances per config")
    p.add_argument("--out")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("bench", help="one-parameter sweeps, CSV output")
    p.add_argument("--vary", required=True, choices=sorted(bench.SWEEPS))
    p.add_argument("--values", help="comma list overriding the default sweep (inst as 2-5)")
    p.add_argument("--full", action="store_true", help="full-scale object counts (100K to 1M)")
    p.add_argument("--servers", type=_positive, default=10)
    p.add_argument("--k", type=_positive, default=15)
    p.add_argument("--lmax", type=float, default=3.0)
    p.add_argument("--inst-min", type=_positive, default=2)
    p.add_argument("--inst-max", type=_positive, default=5)
    p.add_argument("--n-objects", type=_positive, default=10_000)
    p.add_argument("--dist", choices=DISTRIBUTIONS, default="uniform")
    p.add_argument("--fanout", type=int, default=DEFAULT_FANOUT)
    p.add_argument("--level", type=int, default=OBJECTS_LEVEL)
    p.add_argument("--n-queries", type=_positive, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    _threads(p)
    p.set_defaults(fn=cmd_bench)

    p = sub.add_parser("cost-report", help="estimated vs actual cost per level")
    _data_args(p)
    p.add_argument("--index", help="index directory (takes the fanout from it)")
    p.add_argument("--fanout", type=int, default=DEFAULT_FANOUT)
    p.add_argument("--k", type=_positive, default=15)
    _workload_args(p)
    p.add_argument("--out")
    _threads(p)
    p.set_defaults(fn=cmd_cost_report)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (UsageError, InvalidInput, DataFormatError, DecodeError, FileNotFoundError) as exc:
        parser.print_usage(sys.stderr)
        print(f"ptd {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except QueryFailure as exc:
        print(f"ptd {args.command}: query failed: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
