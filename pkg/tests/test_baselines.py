import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from parsehier.baselines import (
    K_PRESETS,
    BaselineConfig,
    baseline_levels,
    build_baseline_partonomy,
    fixed_length,
    fixed_length_level,
    kmeans_segment,
    linkage_levels,
    linkage_segment,
    mid_k,
    oracle_kmeans,
    pre_nesting_violations,
)
from parsehier.datasets import FeatureSequence, SynthConfig, generate_synthetic
from parsehier.partonomy import validate


def two_regimes(T=60, cut=25, d=3):
    X = np.zeros((T, d))
    X[cut:] = 10.0
    return X + 0.01 * np.random.default_rng(0).normal(size=(T, d))


def test_fixed_length_examples():
    assert fixed_length_level(100, 25).boundaries == [25, 50, 75]
    assert fixed_length_level(100, 100).boundaries == []
    assert fixed_length_level(100, 250).boundaries == []
    p = fixed_length(100, None, (10, 50))
    assert p.level(1).boundaries == list(range(10, 100, 10))
    assert p.level(2).boundaries == [50]
    assert not validate(p)
    with pytest.raises(ValueError):
        fixed_length_level(10, 0)


def test_kmeans_examples():
    X = two_regimes()
    assert kmeans_segment(X, 1).boundaries == []
    assert kmeans_segment(X, 2, seed=3).boundaries == [25]
    a = kmeans_segment(np.random.default_rng(1).normal(size=(80, 4)), 5, seed=9)
    b = kmeans_segment(np.random.default_rng(1).normal(size=(80, 4)), 5, seed=9)
    assert a == b
    with pytest.raises(ValueError):
        kmeans_segment(X, 61)
    with pytest.raises(ValueError):
        kmeans_segment(X, 0)


def test_oracle_kmeans_reads_k_from_gt():
    fs, gt = generate_synthetic(SynthConfig(durations=(10.0, 40.0, 120.0), length=240, dim=4, seed=2))
    lv = oracle_kmeans(fs, gt, 3, seed=0)
    assert lv == kmeans_segment(fs, len(gt.level(3)), seed=0)
    p = build_baseline_partonomy(fs, BaselineConfig(), "kmeans-oracle", gt)
    assert not validate(p)
    with pytest.raises(ValueError):
        build_baseline_partonomy(fs, BaselineConfig(), "kmeans-oracle")


def test_linkage_examples():
    X = np.random.default_rng(4).normal(size=(30, 3))
    single = linkage_segment(X, (1, 1))
    assert [len(lv) for lv in single.levels] == [1, 1]
    fine = linkage_levels(X, (30, 5))
    assert len(fine[0]) == 30 and len(fine[1]) == 5
    assert linkage_levels(two_regimes(), (2,))[0].boundaries == [25]
    with pytest.raises(ValueError):
        linkage_levels(X, (31,))
    with pytest.raises(ValueError):
        linkage_levels(X, (3, 5))


def test_linkage_cuts_are_nested():
    X = np.random.default_rng(5).normal(size=(120, 4))
    levels = linkage_levels(X, (20, 8, 3))
    assert [len(lv) for lv in levels] == [20, 8, 3]
    for lo, hi in zip(levels, levels[1:]):
        assert set(hi.boundaries) <= set(lo.boundaries)


def test_presets_and_mid_k():
    assert K_PRESETS["breakfast"] == (38, 22, 6)
    assert K_PRESETS["assembly"] == (242, 134, 26)
    assert mid_k(38, 6) == 22 and mid_k(242, 26) == 134


def test_config_errors():
    X = np.zeros((10, 2))
    with pytest.raises(ValueError):
        BaselineConfig(counts=(0,))
    with pytest.raises(ValueError):
        BaselineConfig(durations=(-1.0,))
    for method in ("fixed", "kmeans", "linkage", "spectral"):
        with pytest.raises(ValueError):
            baseline_levels(X, BaselineConfig(), method)


def test_raw_kmeans_levels_violate_containment():
    fs, _ = generate_synthetic(SynthConfig(durations=(10.0, 40.0, 120.0), length=400, dim=4, seed=3))
    cfg = BaselineConfig(counts=(30, 10, 4), seed=0)
    assert pre_nesting_violations(fs, cfg, "kmeans") > 0
    assert not validate(build_baseline_partonomy(fs, cfg, "kmeans"))


@st.composite
def streams(draw):
    T = draw(st.integers(2, 60))
    d = draw(st.integers(1, 3))
    seed = draw(st.integers(0, 2**31))
    X = np.random.default_rng(seed).normal(size=(T, d))
    if draw(st.booleans()):
        X = np.round(X)  # many duplicate frames
    ks = sorted(draw(st.lists(st.integers(1, T), min_size=1, max_size=3)), reverse=True)
    durs = sorted(draw(st.lists(st.floats(0.5, 80.0), min_size=1, max_size=3)))
    return FeatureSequence(X, 10.0), tuple(ks), tuple(durs), seed


@settings(max_examples=100, deadline=None)
@given(streams())
def test_every_baseline_output_validates(data):
    fs, ks, durs, seed = data
    cfg = BaselineConfig(counts=ks, durations=durs, seed=seed % 1000)
    for method in ("fixed", "kmeans", "linkage"):
        p = build_baseline_partonomy(fs, cfg, method)
        assert not validate(p) and p.T == fs.T
