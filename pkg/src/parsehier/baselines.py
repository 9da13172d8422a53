"""Non-learned comparison segmenters, lifted to partonomies by nesting.

Each method produces one flat Level per granularity (finest first); the
levels are then nested by snapping coarse boundaries onto finer ones.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp

from .partonomy import Level, Partonomy, containment_violations, nest_recursive, validate

METHODS = ("fixed", "kmeans", "kmeans-oracle", "linkage")

# per-level segment counts, finest first
K_PRESETS = {
    "breakfast": (38, 22, 6),
    "salads": (52, 36, 19),
    "assembly": (242, 134, 26),
}


def mid_k(k_fine: int, k_coarse: int) -> int:
    return int(math.ceil((k_fine + k_coarse) / 2))


@dataclass
class BaselineConfig:
    counts: Optional[Tuple[int, ...]] = None       # k per level, finest first
    durations: Optional[Tuple[float, ...]] = None  # frames per level, finest first
    oracle: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.counts is not None:
            self.counts = tuple(int(k) for k in self.counts)
            if any(k < 1 for k in self.counts):
                raise ValueError("segment counts must be >= 1")
        if self.durations is not None:
            self.durations = tuple(float(d) for d in self.durations)
            if any(d <= 0 for d in self.durations):
                raise ValueError("durations must be positive")


def _frames(features) -> np.ndarray:
    return np.asarray(getattr(features, "data", features), dtype=np.float64)


def _level_from_labels(labels: np.ndarray, name: str = "") -> Level:
    T = labels.shape[0]
    cuts = np.flatnonzero(labels[1:] != labels[:-1]) + 1
    return Level.from_boundaries(cuts.tolist(), T, name)


def fixed_length_level(T: int, duration: float, name: str = "") -> Level:
    if duration <= 0:
        raise ValueError("duration must be positive")
    cuts = []
    k = 1
    while True:
        b = int(round(k * duration))
        if b >= T:
            break
        if b > 0:
            cuts.append(b)
        k += 1
    return Level.from_boundaries(cuts, T, name)


def fixed_length(T: int, fps: Optional[float], durations: Sequence[float]) -> Partonomy:
    """Uniform segments per level; the last partial segment is kept."""
    levels = [fixed_length_level(T, d, f"L{i}") for i, d in enumerate(durations, start=1)]
    return nest_recursive(levels, fps)


def kmeans_segment(features, k: int, seed: int = 0) -> Level:
    """Cluster frames with k-means; a boundary wherever the cluster id changes."""
    from sklearn.cluster import KMeans
    from sklearn.exceptions import ConvergenceWarning

    X = _frames(features)
    T = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > T:
        raise ValueError(f"k={k} exceeds the number of frames T={T}")
    if k == 1:
        return Level.from_boundaries([], T)
    km = KMeans(n_clusters=k, init="k-means++", n_init=1, max_iter=100, tol=1e-6,
                random_state=seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConvergenceWarning)
        labels = km.fit_predict(X)
    return _level_from_labels(labels)


def oracle_kmeans(features, gt: Partonomy, level: int, seed: int = 0) -> Level:
    """k-means with k set to the ground-truth segment count of ``level``."""
    return kmeans_segment(features, len(gt.level(level)), seed)


def _chain_connectivity(T: int):
    ones = np.ones(T - 1)
    return sp.diags([ones, ones], [-1, 1], shape=(T, T), format="csr")


def linkage_levels(features, counts: Sequence[int]) -> List[Level]:
    """Contiguous Ward clustering, the merge tree cut at each k."""
    from sklearn.cluster import ward_tree

    X = _frames(features)
    T = X.shape[0]
    counts = [int(k) for k in counts]
    if any(k < 1 or k > T for k in counts):
        raise ValueError(f"every k must lie in [1, T={T}], got {counts}")
    if any(b > a for a, b in zip(counts, counts[1:])):
        raise ValueError("k must not increase from fine to coarse")
    if T == 1:
        return [Level.from_boundaries([], T) for _ in counts]
    children, _, _, _ = ward_tree(X, connectivity=_chain_connectivity(T))

    # union-find over merges, replayed up to each cut
    parent = list(range(2 * T - 1))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    out: List[Optional[Level]] = [None] * len(counts)
    order = sorted(range(len(counts)), key=lambda i: -counts[i])  # many clusters first
    done = 0
    for i in order:
        target = T - counts[i]
        while done < target:
            a, b = children[done]
            node = T + done
            parent[find(int(a))] = node
            parent[find(int(b))] = node
            done += 1
        labels = np.array([find(t) for t in range(T)])
        out[i] = _level_from_labels(labels, f"L{i + 1}")
    return out  # type: ignore[return-value]


def linkage_segment(features, counts: Sequence[int], fps: Optional[float] = None) -> Partonomy:
    levels = linkage_levels(features, counts)
    return nest_recursive(levels, fps)


def baseline_levels(features, cfg: BaselineConfig, method: str,
                    gt: Optional[Partonomy] = None) -> List[Level]:
    """Flat, un-nested levels (finest first) for ``method``."""
    X = _frames(features)
    T = X.shape[0]
    if method == "fixed":
        if cfg.durations is None:
            raise ValueError("fixed-length baseline needs durations")
        return [fixed_length_level(T, d, f"L{i}") for i, d in enumerate(cfg.durations, start=1)]
    if method in ("kmeans", "kmeans-oracle"):
        if method == "kmeans-oracle" or cfg.oracle:
            if gt is None:
                raise ValueError("oracle k-means needs a ground-truth partonomy")
            counts = [len(lv) for lv in gt.levels]
        else:
            if cfg.counts is None:
                raise ValueError("k-means baseline needs per-level counts")
            counts = list(cfg.counts)
        counts = [min(k, T) for k in counts]
        return [Level(kmeans_segment(X, k, cfg.seed).segments, f"L{i}")
                for i, k in enumerate(counts, start=1)]
    if method == "linkage":
        if cfg.counts is None:
            raise ValueError("linkage baseline needs per-level counts")
        return linkage_levels(X, [min(k, T) for k in cfg.counts])
    raise ValueError(f"unknown baseline method {method!r}; choose from {METHODS}")


def build_baseline_partonomy(features, cfg: BaselineConfig, method: str,
                             gt: Optional[Partonomy] = None) -> Partonomy:
    flat = baseline_levels(features, cfg, method, gt)
    p = nest_recursive(flat, getattr(features, "fps", None))
    problems = validate(p)
    if problems:
        raise RuntimeError("baseline produced an invalid partonomy: " + "; ".join(problems[:3]))
    return p


def pre_nesting_violations(features, cfg: BaselineConfig, method: str,
                           gt: Optional[Partonomy] = None) -> int:
    return containment_violations(baseline_levels(features, cfg, method, gt))
