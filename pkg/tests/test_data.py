import math

import numpy as np
import pytest

from ptd.core import InvalidInput, Rect
from ptd.data import (
    DISTRIBUTIONS, DataFormatError, GenConfig, Partitioning, generate, generate_queries,
    grid_queries, load_rect_dataset, random_partition, read_dataset, read_partitioning,
    write_dataset, write_partitioning,
)
from ptd.fixtures import toy_dataset


def test_generation_is_deterministic():
    a = generate(GenConfig(count=200, seed=7))
    b = generate(GenConfig(count=200, seed=7))
    c = generate(GenConfig(count=200, seed=8))
    assert a == b
    assert a != c


@pytest.mark.parametrize("dist", DISTRIBUTIONS)
def test_generated_objects_respect_config(dist):
    cfg = GenConfig(distribution=dist, count=400, d=3, l_max=10, inst_min=2, inst_max=6, seed=1)
    D = generate(cfg)
    assert len(D) == 400 and D.d == 3
    for obj in D.objects:
        assert 2 <= len(obj.instances) <= 6
        assert math.fsum(i.prob for i in obj.instances) == pytest.approx(1.0, abs=1e-12)
        pts = np.asarray([i.attrs for i in obj.instances])
        assert np.all(pts.max(axis=0) - pts.min(axis=0) <= 10 + 1e-9)
    # centres stay in the space; instances at most half a side beyond it
    assert np.all(D.coords >= -5) and np.all(D.coords <= 1005)


def test_distributions_differ_in_shape():
    spread = {}
    for dist in DISTRIBUTIONS:
        c = generate(GenConfig(distribution=dist, count=3000, seed=2, l_max=1)).coords
        spread[dist] = np.mean(np.abs(c - 500) < 100)
    # gaussian crowds the middle; zipf piles into the low cells
    assert spread["gaussian"] > 2 * spread["uniform"]
    zc = generate(GenConfig(distribution="zipf", count=3000, seed=2, l_max=1)).coords
    assert np.mean(zc < 100) > 0.3


def test_partial_mass():
    D = generate(GenConfig(count=50, seed=3, mass=0.6))
    assert all(o.total_prob == pytest.approx(0.6) for o in D.objects)


@pytest.mark.parametrize("kw", [dict(count=0), dict(d=7), dict(l_max=0), dict(inst_min=3, inst_max=2),
                                dict(distribution="pareto"), dict(mass=1.5)])
def test_bad_configs(kw):
    with pytest.raises(InvalidInput):
        GenConfig(**kw)


def test_csv_roundtrip_is_exact(tmp_path):
    D = generate(GenConfig(count=60, seed=4, d=3))
    p = tmp_path / "d.csv"
    write_dataset(D, p)
    assert read_dataset(p) == D


def test_csv_errors_carry_line_numbers(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("object_id,instance_id,prob,a1,a2\n0,0,1.0,1,2\n1,0,zero,1,2\n")
    with pytest.raises(DataFormatError, match=":3:"):
        read_dataset(p)
    p.write_text("")
    with pytest.raises(DataFormatError, match="empty"):
        read_dataset(p)
    p.write_text("object_id,instance_id,prob,a1\n0,1,1.0,3\n")
    with pytest.raises(DataFormatError, match="instance ids"):
        read_dataset(p)


def test_rect_loader(tmp_path):
    p = tmp_path / "r.txt"
    p.write_text("# lo hi\n0 0 10 10\n\n5 5 6 9\n")
    D = load_rect_dataset(p, seed=1, inst_min=3, inst_max=3)
    assert len(D) == 2 and D.d == 2
    pts = np.asarray([i.attrs for i in D.objects[1].instances])
    assert np.all(pts >= [5, 5]) and np.all(pts <= [6, 9])
    assert load_rect_dataset(p, seed=1, inst_min=3, inst_max=3) == D


@pytest.mark.parametrize("body,where", [
    ("0 0 1 1\n0 0 1\n", ":2:"),
    ("0 0 1 1\n2 0 1 1\n", ":2:"),
    ("0 0 x 1\n", ":1:"),
    ("1 2 3\n", ":1:"),
    ("0 0 nan 1\n", ":1:"),
])
def test_rect_loader_errors(tmp_path, body, where):
    p = tmp_path / "r.txt"
    p.write_text(body)
    with pytest.raises(DataFormatError, match=where):
        load_rect_dataset(p)


def test_rect_loader_empty(tmp_path):
    p = tmp_path / "r.txt"
    p.write_text("# nothing\n\n")
    with pytest.raises(DataFormatError, match="no rectangles"):
        load_rect_dataset(p)


def test_partition_golden_toy():
    assert random_partition(toy_dataset(), 2, 0).assignment == {0: 0, 1: 1, 2: 1, 3: 1}
    assert random_partition(toy_dataset(), 2, 1).assignment == {0: 1, 1: 1, 2: 0, 3: 0}


def test_partition_has_no_empty_bucket():
    D = generate(GenConfig(count=12, seed=0))
    for seed in range(30):
        assert min(random_partition(D, 10, seed).sizes()) >= 1
    # fewer objects than partitions leaves some empty
    assert random_partition(toy_dataset(), 6, 0).sizes().count(0) >= 2


def test_partition_roundtrip(tmp_path):
    D = generate(GenConfig(count=40, seed=0))
    part = random_partition(D, 4, 9)
    p = tmp_path / "p.csv"
    write_partitioning(part, p)
    back = read_partitioning(p, 4)
    assert back.assignment == part.assignment and back.n == 4
    assert sorted(back.members(2)) == back.members(2)


def test_partition_validation(tmp_path):
    with pytest.raises(InvalidInput):
        Partitioning(2, {0: 2})
    with pytest.raises(InvalidInput):
        random_partition(toy_dataset(), 0)
    p = tmp_path / "p.csv"
    p.write_text("object_id,partition\n0,x\n")
    with pytest.raises(DataFormatError, match=":2:"):
        read_partitioning(p)


def test_queries():
    space = Rect((0, 0), (100, 50))
    qs = generate_queries(25, space, 3)
    assert qs == generate_queries(25, space, 3)
    assert all(0 <= q.attrs[0] <= 100 and 0 <= q.attrs[1] <= 50 for q in qs)
    g = grid_queries(64, space)
    assert len(g) == 64
    assert g[0].attrs == (6.25, 3.125)
    with pytest.raises(InvalidInput):
        generate_queries(0, space)
