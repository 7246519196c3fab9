import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ptd.core import (
    Dataset, DominanceClass, Instance, InvalidInput, QueryPoint, Rect, UncertainObject,
    classify_dyn, classify_rect, dominance_matrix, dyn_attrs, dyn_box, dyn_interval,
    dynamic_dominates, object_mbr,
)

coord = st.floats(-50, 50, allow_nan=False).map(lambda x: round(x, 1))


def pts(d):
    return st.tuples(*[coord] * d)


def test_dyn_attrs_is_absolute_difference():
    assert dyn_attrs((7, 10), (8, 8)) == (1.0, 2.0)


def test_dominance_needs_one_strict_dimension():
    q = (0, 0)
    assert dynamic_dominates((1, 1), (2, 1), q)
    assert not dynamic_dominates((1, 1), (1, 1), q)
    assert not dynamic_dominates((1, 3), (2, 1), q)
    # mirrored points are equivalent under dynamic attributes
    assert not dynamic_dominates((-1, 1), (1, -1), q)


def test_dominance_rejects_mixed_dimensions():
    with pytest.raises(InvalidInput):
        dynamic_dominates((1, 2), (1, 2, 3), (0, 0))


@given(pts(2), pts(2), pts(2))
def test_dominance_is_irreflexive_and_asymmetric(u, v, q):
    assert not dynamic_dominates(u, u, q)
    assert not (dynamic_dominates(u, v, q) and dynamic_dominates(v, u, q))


@given(pts(2), pts(2), pts(2), pts(2))
def test_dominance_is_transitive(u, v, w, q):
    if dynamic_dominates(u, v, q) and dynamic_dominates(v, w, q):
        assert dynamic_dominates(u, w, q)


def test_dyn_interval_inside_and_outside():
    r = Rect((2, 2), (6, 4))
    assert dyn_interval(r, (3, 0), 0) == (0.0, 3.0)
    assert dyn_interval(r, (3, 0), 1) == (2.0, 4.0)
    assert dyn_interval(r, (8, 0), 0) == (2.0, 6.0)


@given(pts(2), pts(2), pts(2))
def test_dyn_box_brackets_every_corner(a, b, q):
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    dlo, dhi = dyn_box(lo[None], hi[None], np.asarray(q, dtype=float))
    for corner in itertools.product(*zip(lo, hi)):
        da = np.abs(np.asarray(corner) - q)
        assert np.all(dlo[0] <= da + 1e-12) and np.all(da <= dhi[0] + 1e-12)


def _corner_oracle(t, q, rect, grid=5):
    """Classify by sampling the rect (corners plus an interior grid)."""
    axes = [np.linspace(l, h, grid) for l, h in zip(rect.lo, rect.hi)]
    hits = [dynamic_dominates(t, p, q) for p in itertools.product(*axes)]
    if all(hits):
        return DominanceClass.FULL
    if not any(hits):
        return DominanceClass.NONE
    return DominanceClass.PARTIAL


@settings(max_examples=300)
@given(pts(2), pts(2), pts(2), pts(2))
def test_classify_rect_agrees_with_sampling(t, q, a, b):
    rect = Rect(tuple(np.minimum(a, b)), tuple(np.maximum(a, b)))
    got = classify_rect(t, q, rect)
    sampled = _corner_oracle(t, q, rect)
    if got == DominanceClass.FULL:
        assert sampled == DominanceClass.FULL
    elif got == DominanceClass.NONE:
        assert sampled == DominanceClass.NONE
    else:
        # the closest and farthest points of the rect witness both outcomes
        lo, hi, qa = np.asarray(rect.lo), np.asarray(rect.hi), np.asarray(q, dtype=float)
        near = np.clip(qa, lo, hi)
        far = np.where(np.abs(lo - qa) > np.abs(hi - qa), lo, hi)
        assert dynamic_dominates(t, far, q)
        assert not dynamic_dominates(t, near, q)


def test_classify_examples():
    q = (0, 0)
    assert classify_rect((1, 1), q, Rect((2, 2), (3, 3))) == DominanceClass.FULL
    assert classify_rect((5, 5), q, Rect((2, 2), (3, 3))) == DominanceClass.NONE
    assert classify_rect((2.5, 1), q, Rect((2, 2), (3, 3))) == DominanceClass.PARTIAL
    # a degenerate rect equal to the instance is not dominated
    assert classify_rect((2, 2), q, Rect((2, 2), (2, 2))) == DominanceClass.NONE


@given(st.lists(pts(3), min_size=1, max_size=6), st.lists(pts(3), min_size=1, max_size=6))
def test_dominance_matrix_matches_pairwise(a, b):
    A = np.abs(np.asarray(a, dtype=float))
    B = np.abs(np.asarray(b, dtype=float))
    m = dominance_matrix(A, B)
    for i, j in itertools.product(range(len(a)), range(len(b))):
        assert m[i, j] == dynamic_dominates(A[i], B[j], (0, 0, 0))


@given(st.lists(pts(2), min_size=1, max_size=5), pts(2), pts(2), pts(2))
def test_classify_dyn_matches_scalar(ts, q, a, b):
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    qa = np.asarray(q, dtype=float)
    dlo, dhi = dyn_box(lo[None], hi[None], qa)
    codes = classify_dyn(np.abs(np.asarray(ts, dtype=float) - qa), dlo, dhi)
    for i, t in enumerate(ts):
        assert codes[i, 0] == classify_rect(t, q, Rect(tuple(lo), tuple(hi)))


def test_instance_validation():
    with pytest.raises(InvalidInput):
        Instance(0, 0, (1.0, 2.0), 0.0)
    with pytest.raises(InvalidInput):
        Instance(0, 0, (1.0, float("nan")), 0.5)
    with pytest.raises(InvalidInput):
        Instance(0, 0, (), 0.5)


def test_object_probability_mass_limit():
    with pytest.raises(InvalidInput):
        UncertainObject.from_points(0, [(0, 0), (1, 1)], [0.6, 0.6])
    obj = UncertainObject.from_points(0, [(0, 0), (1, 1)], [0.3, 0.3])
    assert obj.total_prob == pytest.approx(0.6)
    with pytest.raises(InvalidInput):
        UncertainObject(0, ())


def test_dataset_validation():
    a = UncertainObject.from_points(0, [(0, 0)], [1.0])
    with pytest.raises(InvalidInput):
        Dataset(2, (a, a))
    with pytest.raises(InvalidInput):
        Dataset(7, ())
    with pytest.raises(InvalidInput):
        Dataset(3, (a,))


def test_dataset_flat_views():
    a = UncertainObject.from_points(4, [(0, 0), (1, 2)], [0.5, 0.5])
    b = UncertainObject.from_points(9, [(3, 3)], [1.0])
    D = Dataset(2, (a, b))
    assert D.n_instances == 3
    assert D.owner.tolist() == [4, 4, 9]
    assert D.rows_of(9) == slice(2, 3)
    assert object_mbr(a) == Rect((0, 0), (1, 2))
    assert D.bounding_rect() == Rect((0, 0), (3, 3))


def test_query_point_validation():
    with pytest.raises(InvalidInput):
        QueryPoint(())
    with pytest.raises(InvalidInput):
        QueryPoint((1.0, float("inf")))
    assert QueryPoint((1, 2)).array.tolist() == [1.0, 2.0]
