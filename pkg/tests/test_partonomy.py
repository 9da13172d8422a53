import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parsehier.datasets import FeatureSequence
from parsehier.partonomy import (
    BoundarySet,
    Level,
    Partonomy,
    Segment,
    children,
    concat_videos,
    containment_violations,
    from_boundaries,
    from_flat_annotations,
    nest_recursive,
    snap,
    validate,
)


@st.composite
def boundary_sets(draw, max_T=200, max_levels=4):
    T = draw(st.integers(2, max_T))
    n = draw(st.integers(1, max_levels))
    sets = [draw(st.lists(st.integers(1, T - 1), max_size=30)) if T > 1 else [] for _ in range(n)]
    return T, sets


def level(bounds, T):
    return Level.from_boundaries(bounds, T)


def test_segment_and_level_invariants():
    with pytest.raises(ValueError):
        Segment(5, 5)
    with pytest.raises(ValueError):
        Segment(-1, 3)
    lv = level([10, 20], 30)
    assert [(s.start, s.end) for s in lv] == [(0, 10), (10, 20), (20, 30)]
    assert lv.boundaries == [10, 20] and lv.span == 30


def test_children_examples():
    lower = Level([Segment(0, 10), Segment(10, 15), Segment(15, 20), Segment(20, 30)])
    got = children(Segment(10, 20), lower)
    assert [(s.start, s.end) for s in got] == [(10, 15), (15, 20)]
    assert children(Segment(0, 30), lower) == list(lower)


def test_from_boundaries_examples():
    p = from_boundaries([BoundarySet(1, []), BoundarySet(2, [])], 40)
    assert [len(lv) for lv in p.levels] == [1, 1]
    assert p.parents(1) == [0]

    p = from_boundaries([BoundarySet(1, [10, 20, 30]), BoundarySet(2, [19])], 40)
    assert p.level(2).boundaries == [20]
    assert [(s.start, s.end) for s in p.level(2)] == [(0, 20), (20, 40)]
    assert p.parents(1) == [0, 0, 1, 1]
    assert not validate(p)
    with pytest.raises(ValueError):
        from_boundaries([], 0)


def test_snap_ties_go_earlier():
    assert snap(15, [10, 20]) == 10
    assert snap(16, [10, 20]) == 20
    assert snap(7, [10, 20]) == 10
    assert snap(20, [10, 20]) == 20


def test_validate_flags_misaligned_boundary():
    p = Partonomy([level([10, 20], 30), level([19], 30)], 30)
    msgs = validate(p)
    assert any("boundary 19 not in finer set" in m for m in msgs)
    assert any("no parent" in m for m in msgs)


def test_validate_flags_gaps_and_ends():
    bad = Partonomy([Level([Segment(0, 10), Segment(12, 30)])], 30)
    assert any("starts at 12" in m for m in validate(bad))
    short = Partonomy([Level([Segment(0, 10)])], 30)
    assert any("not T=30" in m for m in validate(short))


def test_independent_levels_are_flagged():
    rng = np.random.default_rng(0)
    flat = [level(sorted(rng.choice(np.arange(1, 500), k, replace=False)), 500) for k in (40, 15, 5)]
    assert containment_violations(flat) > 0
    assert validate(Partonomy(flat, 500))
    assert not validate(nest_recursive(flat))


def test_flat_annotations_snap():
    fine = level([50, 100, 110, 150], 200)
    p, d = from_flat_annotations(fine, level([101], 200))
    assert p.level(2).boundaries == [100] and d == [1]
    same, d = from_flat_annotations(fine, level([100, 150], 200))
    assert same.level(2).boundaries == [100, 150] and d == [0, 0]
    with pytest.raises(ValueError):
        from_flat_annotations(fine, level([5], 150))


def test_flat_annotations_keep_labels_and_drop_collapsed():
    fine = level([10, 20], 30)
    coarse = Level([Segment(0, 9, "a"), Segment(9, 11, "b"), Segment(11, 30, "c")])
    p, d = from_flat_annotations(fine, coarse)
    assert [(s.start, s.end, s.label) for s in p.level(2)] == [(0, 10, "a"), (10, 30, "c")]
    assert d == [1, 1]


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 10_000), jitter=st.integers(0, 2))
def test_jittered_annotations_snap_within_jitter(seed, jitter):
    rng = np.random.default_rng(seed)
    T = 1000
    fine_b = sorted(set(rng.choice(np.arange(10, T - 10, 10), 40, replace=False).tolist()))
    coarse_true = fine_b[::4]
    coarse_b = sorted(set(b + int(rng.integers(-jitter, jitter + 1)) for b in coarse_true))
    p, d = from_flat_annotations(level(fine_b, T), level(coarse_b, T))
    assert max(d, default=0) <= jitter
    assert p.level(2).boundaries == coarse_true


def test_nest_recursive_identical_levels_gives_unary_chains():
    lv = level([5, 9], 12)
    p = nest_recursive([lv, lv, lv])
    assert all(p.parents(i) == [0, 1, 2] for i in (1, 2))
    assert p.n_nodes() == 9


@settings(max_examples=300, deadline=None)
@given(boundary_sets())
def test_from_boundaries_always_valid_and_round_trips(data):
    T, sets = data
    p = from_boundaries([BoundarySet(i, s) for i, s in enumerate(sets, 1)], T)
    assert not validate(p)
    q = from_boundaries(p.boundary_sets(), T)
    assert q == p
    counts = [len(lv) for lv in p.levels]
    assert counts == sorted(counts, reverse=True)


@settings(max_examples=300, deadline=None)
@given(boundary_sets())
def test_nest_recursive_valid_and_idempotent(data):
    T, sets = data
    flat = [level(sorted(set(s)), T) for s in sets]
    p = nest_recursive(flat)
    assert not validate(p)
    assert p.level(1) == flat[0]
    assert nest_recursive(p.levels) == p
    if len(p.levels) >= 2:
        again, d = from_flat_annotations(p.level(1), p.level(2))
        assert again.level(2) == p.level(2) and not any(d)


@settings(max_examples=200, deadline=None)
@given(boundary_sets(max_levels=3))
def test_partition_property(data):
    T, sets = data
    p = from_boundaries([BoundarySet(i, s) for i, s in enumerate(sets, 1)], T)
    for i in range(1, len(p.levels)):
        lower, upper = p.level(i), p.level(i + 1)
        union = [s for par in upper for s in children(par, lower)]
        assert union == list(lower)
        for seg, par in zip(lower, p.parents(i)):
            assert upper[par].start <= seg.start and seg.end <= upper[par].end


def _fs(T, d=3, fps=10.0, v=0.0):
    return FeatureSequence(np.full((T, d), v, dtype=np.float32), fps)


def test_concat_two_items():
    fs, p = concat_videos([(_fs(100), level([40], 100), level([], 100)),
                           (_fs(50, v=1.0), level([10, 30], 50), level([30], 50))])
    assert fs.T == 150 and fs.data[100, 0] == 1.0
    assert [(s.start, s.end) for s in p.level(3)] == [(0, 100), (100, 150)]
    assert p.level(1).boundaries == [40, 100, 110, 130]
    assert p.level(2).boundaries == [100, 130]
    assert not validate(p)


def test_concat_single_and_three():
    _, p = concat_videos([(_fs(20), level([5], 20), level([], 20))])
    assert len(p.level(3)) == 1 and p.level(3)[0].end == 20
    items = [(_fs(n), level([n // 2], n), level([n // 2 + 1], n)) for n in (10, 20, 30)]
    _, p = concat_videos(items)
    assert p.level(3).boundaries == [10, 30]
    assert not validate(p)


def test_concat_errors():
    with pytest.raises(ValueError):
        concat_videos([])
    with pytest.raises(ValueError):
        concat_videos([(_fs(10), level([], 10), level([], 10)), (_fs(10, d=4), level([], 10), level([], 10))])
    with pytest.raises(ValueError):
        concat_videos([(_fs(10), level([], 10), level([], 10)), (_fs(10, fps=5.0), level([], 10), level([], 10))])
    with pytest.raises(ValueError):
        concat_videos([(_fs(10), level([], 12), level([], 10))])
