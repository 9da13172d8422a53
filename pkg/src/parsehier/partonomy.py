"""Temporal partonomies: nested levels of contiguous, half-open segments.

Level 1 is the finest. Every segment of level i lies inside exactly one
segment of level i+1, which is the same as saying that the boundary set of
each level is a subset of the boundary set of the level below.
"""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Segment:
    start: int
    end: int  # exclusive
    label: str = ""

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"invalid segment [{self.start}, {self.end})")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class Level:
    segments: Tuple[Segment, ...]
    name: str = ""

    def __init__(self, segments, name: str = ""):
        object.__setattr__(self, "segments", tuple(segments))
        object.__setattr__(self, "name", name)

    def __len__(self):
        return len(self.segments)

    def __iter__(self):
        return iter(self.segments)

    def __getitem__(self, k):
        return self.segments[k]

    @property
    def boundaries(self) -> List[int]:
        """Interior boundaries: every segment start except the first."""
        return [s.start for s in self.segments[1:]]

    @property
    def span(self) -> int:
        return self.segments[-1].end if self.segments else 0

    @classmethod
    def from_boundaries(cls, boundaries: Sequence[int], T: int, name: str = "",
                        labels: Optional[Sequence[str]] = None) -> "Level":
        cuts = [0] + sorted(set(int(b) for b in boundaries if 0 < b < T)) + [T]
        segs = []
        for k in range(len(cuts) - 1):
            lab = labels[k] if labels is not None else ""
            segs.append(Segment(cuts[k], cuts[k + 1], lab))
        return cls(segs, name)


@dataclass(frozen=True)
class BoundarySet:
    level: int
    frames: Tuple[int, ...]

    def __init__(self, level: int, frames):
        object.__setattr__(self, "level", int(level))
        object.__setattr__(self, "frames", tuple(sorted(set(int(f) for f in frames))))

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)


class Partonomy:
    """Ordered levels (finest first) over frames [0, T)."""

    def __init__(self, levels: Sequence[Level], T: int, fps: Optional[float] = None):
        if T <= 0:
            raise ValueError("T must be positive")
        self.levels: Tuple[Level, ...] = tuple(levels)
        self.T = int(T)
        self.fps = fps

    def __len__(self):
        return len(self.levels)

    def __eq__(self, other):
        if not isinstance(other, Partonomy):
            return NotImplemented
        return self.T == other.T and self.levels == other.levels

    def __repr__(self):
        counts = [len(lv) for lv in self.levels]
        return f"Partonomy(T={self.T}, segments per level={counts})"

    def level(self, i: int) -> Level:
        """1-based access."""
        return self.levels[i - 1]

    def boundary_sets(self) -> List[BoundarySet]:
        return [BoundarySet(i, lv.boundaries) for i, lv in enumerate(self.levels, start=1)]

    def parents(self, i: int) -> List[int]:
        """Index into level i+1 of each level-i segment's parent (-1 if none)."""
        if i >= len(self.levels):
            return [-1] * len(self.levels[i - 1])
        upper = self.levels[i]
        starts = [s.start for s in upper]
        out = []
        for seg in self.levels[i - 1]:
            k = bisect.bisect_right(starts, seg.start) - 1
            if k >= 0 and upper[k].start <= seg.start and seg.end <= upper[k].end:
                out.append(k)
            else:
                out.append(-1)
        return out

    def n_nodes(self) -> int:
        return sum(len(lv) for lv in self.levels)

    def relabeled(self, fn) -> "Partonomy":
        levels = [Level([Segment(s.start, s.end, fn(s.label)) for s in lv], lv.name)
                  for lv in self.levels]
        return Partonomy(levels, self.T, self.fps)


def children(parent: Segment, lower: Level) -> List[Segment]:
    """Lower-level segments temporally contained in ``parent``."""
    return [s for s in lower if parent.start <= s.start and s.end <= parent.end]


def validate(p: Partonomy) -> List[str]:
    """All structural violations; an empty list means the partonomy is valid."""
    problems: List[str] = []
    if not p.levels:
        return ["partonomy has no levels"]
    for i, lv in enumerate(p.levels, start=1):
        if len(lv) == 0:
            problems.append(f"level {i}: no segments")
            continue
        if lv[0].start != 0:
            problems.append(f"level {i}: first segment starts at {lv[0].start}, not 0")
        if lv[-1].end != p.T:
            problems.append(f"level {i}: last segment ends at {lv[-1].end}, not T={p.T}")
        for k in range(1, len(lv)):
            if lv[k].start != lv[k - 1].end:
                problems.append(f"level {i}: segment {k} starts at {lv[k].start} "
                                f"but previous ends at {lv[k - 1].end}")
    if problems:
        return problems
    for i in range(1, len(p.levels)):
        fine = set(p.levels[i - 1].boundaries)
        for b in p.levels[i].boundaries:
            if b not in fine:
                problems.append(f"level {i + 1}: boundary {b} not in finer set")
        if len(p.levels[i]) > len(p.levels[i - 1]):
            problems.append(f"level {i + 1}: more segments than level {i}")
        for k, par in enumerate(p.parents(i)):
            if par < 0:
                seg = p.levels[i - 1][k]
                problems.append(f"level {i}: segment [{seg.start},{seg.end}) has no parent")
    return problems


def is_valid(p: Partonomy) -> bool:
    return not validate(p)


# ---------------------------------------------------------------------------
# snapping


def snap(b: int, targets: Sequence[int]) -> int:
    """Nearest element of sorted ``targets``; ties go to the earlier frame."""
    k = bisect.bisect_left(targets, b)
    if k < len(targets) and targets[k] == b:
        return b
    cands = []
    if k > 0:
        cands.append(targets[k - 1])
    if k < len(targets):
        cands.append(targets[k])
    return min(cands, key=lambda c: (abs(c - b), c))


def _snap_level(level: Level, finer: Sequence[int], T: int) -> Tuple[Level, List[int]]:
    """Move each boundary of ``level`` onto ``finer``; drop collapsed segments."""
    finer = sorted(finer)
    cuts = [0]
    labels = []
    dists = []
    for seg in level:
        end = seg.end
        if end != T:
            if finer:
                s = snap(end, finer)
                dists.append(abs(s - end))
                end = s
            else:
                dists.append(min(end, T - end))
                end = T
        if end <= cuts[-1]:
            log.debug("segment [%d,%d) collapsed by snapping", seg.start, seg.end)
            continue
        cuts.append(end)
        labels.append(seg.label)
    if cuts[-1] != T:
        cuts[-1] = T
    segs = [Segment(cuts[k], cuts[k + 1], labels[k]) for k in range(len(cuts) - 1)]
    return Level(segs, level.name), dists


def from_boundaries(sets: Sequence[BoundarySet], T: int, fps: Optional[float] = None) -> Partonomy:
    """Nested partonomy from per-level boundary sets ordered finest first."""
    if T <= 0:
        raise ValueError("T must be positive")
    levels: List[Level] = []
    prev: Optional[List[int]] = None
    for k, bs in enumerate(sets, start=1):
        frames = sorted(set(int(f) for f in bs if 0 < int(f) < T))
        if prev is not None:
            frames = sorted(set(snap(b, prev) for b in frames)) if prev else []
        levels.append(Level.from_boundaries(frames, T, name=f"L{k}"))
        prev = frames
    return Partonomy(levels, T, fps)


def from_flat_annotations(fine: Level, coarse: Level, fps: Optional[float] = None
                          ) -> Tuple[Partonomy, List[int]]:
    """Two-level partonomy with coarse boundaries snapped onto fine ones.

    Returns the partonomy and the snap distance of every coarse boundary.
    """
    if fine.span != coarse.span:
        raise ValueError(f"levels span {fine.span} and {coarse.span} frames")
    T = fine.span
    snapped, dists = _snap_level(coarse, fine.boundaries, T)
    return Partonomy([fine, snapped], T, fps), dists


def nest_recursive(flat_levels: Sequence[Level], fps: Optional[float] = None) -> Partonomy:
    """Nest independently produced levels (finest first) by repeated snapping."""
    if not flat_levels:
        raise ValueError("no levels")
    T = flat_levels[0].span
    for lv in flat_levels:
        if lv.span != T:
            raise ValueError("levels do not span the same T")
    out = [flat_levels[0]]
    for lv in flat_levels[1:]:
        snapped, _ = _snap_level(lv, out[-1].boundaries, T)
        out.append(snapped)
    return Partonomy(out, T, fps)


def containment_violations(flat_levels: Sequence[Level]) -> int:
    """Coarse boundaries missing from the level below, before any nesting."""
    n = 0
    for i in range(1, len(flat_levels)):
        fine = set(flat_levels[i - 1].boundaries)
        n += sum(1 for b in flat_levels[i].boundaries if b not in fine)
    return n


def concat_videos(items: Sequence[Tuple[object, Level, Level]]):
    """Join videos end to end and add a top level with one segment per video.

    ``items`` holds (FeatureSequence, fine Level, coarse Level) triples.
    Returns the joined FeatureSequence and a three-level Partonomy.
    """
    from .datasets import FeatureSequence

    if not items:
        raise ValueError("nothing to concatenate")
    dims = {fs.data.shape[1] for fs, _, _ in items}
    fpss = {float(fs.fps) for fs, _, _ in items}
    if len(dims) != 1:
        raise ValueError(f"feature dims differ: {sorted(dims)}")
    if len(fpss) != 1:
        raise ValueError(f"frame rates differ: {sorted(fpss)}")
    fine_segs, coarse_segs, top_segs = [], [], []
    off = 0
    for k, (fs, fine, coarse) in enumerate(items):
        T = fs.data.shape[0]
        if fine.span != T or coarse.span != T:
            raise ValueError(f"item {k}: annotations span {fine.span}/{coarse.span}, video has {T}")
        coarse, _ = _snap_level(coarse, fine.boundaries, T)
        fine_segs += [Segment(s.start + off, s.end + off, s.label) for s in fine]
        coarse_segs += [Segment(s.start + off, s.end + off, s.label) for s in coarse]
        top_segs.append(Segment(off, off + T, f"video{k}"))
        off += T
    data = np.concatenate([fs.data for fs, _, _ in items], axis=0)
    fps = fpss.pop()
    p = Partonomy([Level(fine_segs, "fine"), Level(coarse_segs, "coarse"), Level(top_segs, "task")],
                  off, fps)
    problems = validate(p)
    if problems:
        raise ValueError("concatenated partonomy invalid: " + "; ".join(problems[:5]))
    return FeatureSequence(data, fps), p
