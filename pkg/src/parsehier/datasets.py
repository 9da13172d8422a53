"""Feature/annotation files and a seeded generator of nested synthetic streams.

Feature files (``.prsf``) are little-endian: magic ``PRSF``, u32 version (1),
u32 T, u32 d, f32 fps, then T*d f32 values row-major.

Annotations are JSON::

    {"fps": float, "T": int,
     "levels": [{"name": str, "segments": [{"start": int, "end": int, "label": str}]}]}

with levels finest first and end-exclusive frame indices.

Random numbers come from numpy's PCG64 bit generator seeded through
``numpy.random.default_rng(seed)``; draws use ``Generator.uniform`` and
``Generator.standard_normal`` in the order documented in ``generate_synthetic``.
"""

from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .partonomy import Level, Partonomy, Segment, validate

log = logging.getLogger(__name__)

MAGIC = b"PRSF"
VERSION = 1
_HEADER = struct.Struct("<4sIIIf")


class FormatError(ValueError):
    pass


@dataclass
class FeatureSequence:
    data: np.ndarray
    fps: float = 30.0

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float32)
        if self.data.ndim != 2:
            raise ValueError("features must be a T x d matrix")
        if self.data.shape[0] < 2 or self.data.shape[1] < 1:
            raise ValueError(f"need T >= 2 and d >= 1, got {self.data.shape}")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("features contain non-finite values")

    @property
    def T(self) -> int:
        return self.data.shape[0]

    @property
    def d(self) -> int:
        return self.data.shape[1]


def write_features(path, fs: FeatureSequence) -> None:
    header = _HEADER.pack(MAGIC, VERSION, fs.T, fs.d, float(fs.fps))
    Path(path).write_bytes(header + fs.data.astype("<f4").tobytes())


def read_features(path) -> FeatureSequence:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header at byte {len(raw)}")
    magic, version, T, d, fps = _HEADER.unpack_from(raw, 0)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r} at byte 0")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported version {version} at byte 4")
    expected = _HEADER.size + 4 * T * d
    if len(raw) != expected:
        raise FormatError(f"{path}: payload length mismatch at byte {min(len(raw), expected)} "
                          f"(header says T={T}, d={d}; file has {len(raw)} bytes, expected {expected})")
    data = np.frombuffer(raw, dtype="<f4", count=T * d, offset=_HEADER.size).reshape(T, d)
    return FeatureSequence(data.astype(np.float32), float(np.float32(fps)))


def partonomy_to_json(p: Partonomy) -> dict:
    return {
        "fps": float(p.fps) if p.fps is not None else 0.0,
        "T": p.T,
        "levels": [
            {"name": lv.name or f"L{i}",
             "segments": [{"start": s.start, "end": s.end, "label": s.label} for s in lv]}
            for i, lv in enumerate(p.levels, start=1)
        ],
    }


def write_annotation(path, p: Partonomy) -> None:
    Path(path).write_text(json.dumps(partonomy_to_json(p), indent=1) + "\n", encoding="utf-8")


_TOP_KEYS = {"fps", "T", "levels"}
_LEVEL_KEYS = {"name", "segments"}
_SEG_KEYS = {"start", "end", "label"}


def _need(obj, key, typ, where):
    if not isinstance(obj, dict) or key not in obj:
        raise FormatError(f"{where}: missing field {key!r}")
    val = obj[key]
    if typ is int and (isinstance(val, bool) or not isinstance(val, int)):
        raise FormatError(f"{where}: field {key!r} must be an integer")
    if typ is float and (isinstance(val, bool) or not isinstance(val, (int, float))):
        raise FormatError(f"{where}: field {key!r} must be a number")
    if typ in (str, list) and not isinstance(val, typ):
        raise FormatError(f"{where}: field {key!r} must be a {typ.__name__}")
    return val


def _warn_extra(obj, known, where):
    extra = set(obj) - known
    if extra:
        log.warning("%s: ignoring unknown fields %s", where, sorted(extra))


def partonomy_from_json(obj) -> Partonomy:
    fps = float(_need(obj, "fps", float, "annotation"))
    T = _need(obj, "T", int, "annotation")
    levels_raw = _need(obj, "levels", list, "annotation")
    _warn_extra(obj, _TOP_KEYS, "annotation")
    levels = []
    for i, lv in enumerate(levels_raw):
        where = f"levels[{i}]"
        name = _need(lv, "name", str, where)
        segs_raw = _need(lv, "segments", list, where)
        _warn_extra(lv, _LEVEL_KEYS, where)
        segs = []
        for j, s in enumerate(segs_raw):
            w = f"{where}.segments[{j}]"
            start = _need(s, "start", int, w)
            end = _need(s, "end", int, w)
            label = s.get("label", "")
            if not isinstance(label, str):
                raise FormatError(f"{w}: field 'label' must be a str")
            _warn_extra(s, _SEG_KEYS, w)
            try:
                segs.append(Segment(start, end, label))
            except ValueError as exc:
                raise FormatError(f"{w}: {exc}") from None
        levels.append(Level(segs, name))
    try:
        p = Partonomy(levels, T, fps if fps > 0 else None)
    except ValueError as exc:
        raise FormatError(f"annotation: field 'T': {exc}") from None
    problems = validate(p)
    if problems:
        raise FormatError("annotation: invalid partonomy: " + "; ".join(problems[:5]))
    return p


def read_annotation(path) -> Partonomy:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not JSON ({exc})") from None
    return partonomy_from_json(obj)


# ---------------------------------------------------------------------------
# synthetic streams


class SynthConfigError(ValueError):
    pass


@dataclass
class SynthConfig:
    """Nested piecewise-stationary stream.

    ``durations`` and ``jitter`` are per level, finest first, in frames;
    segment lengths are drawn uniformly from ``mean ± jitter``. The top-level
    mean vector of each segment has scale ``separation``; the level below adds
    an offset of scale ``offset_scale * separation`` and each further level
    multiplies that scale by ``offset_decay``.
    """

    durations: Tuple[float, ...] = (20.0, 100.0, 400.0)
    jitter: Optional[Tuple[float, ...]] = None  # default: half of each mean
    length: int = 2000
    dim: int = 16
    separation: float = 1.0
    noise: float = 0.5
    offset_scale: float = 0.5
    offset_decay: float = 1.0
    drift: float = 0.0
    fps: float = 30.0
    seed: int = 0

    @property
    def n_levels(self) -> int:
        return len(self.durations)

    def jitters(self) -> Tuple[float, ...]:
        if self.jitter is None:
            return tuple(0.5 * m for m in self.durations)
        return tuple(self.jitter)

    def validate(self) -> None:
        if self.n_levels < 1:
            raise SynthConfigError("need at least one level")
        if any(m <= 0 for m in self.durations):
            raise SynthConfigError("durations must be positive")
        if any(b <= a for a, b in zip(self.durations, self.durations[1:])):
            raise SynthConfigError("mean durations must increase from fine to coarse "
                                   f"(got {list(self.durations)})")
        jit = self.jitters()
        if len(jit) != self.n_levels:
            raise SynthConfigError("one jitter value per level")
        if any(j < 0 or j >= m for j, m in zip(jit, self.durations)):
            raise SynthConfigError("jitter must lie in [0, mean)")
        if self.length < max(2, int(self.durations[0])):
            raise SynthConfigError("length too short")
        if self.noise < 0:
            raise SynthConfigError("noise must be >= 0")
        if self.separation <= 0:
            raise SynthConfigError("separation must be > 0")
        if self.offset_scale < 0 or self.offset_decay <= 0:
            raise SynthConfigError("offset_scale must be >= 0 and offset_decay > 0")
        if self.dim < 1 or self.fps <= 0:
            raise SynthConfigError("dim and fps must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["durations"] = list(self.durations)
        d["jitter"] = None if self.jitter is None else list(self.jitter)
        return d


def _split(rng: np.random.Generator, start: int, end: int, mean: float, jitter: float) -> List[int]:
    """Cut points (including start and end) for children of [start, end)."""
    cuts = [start]
    lo = max(1.0, mean - jitter)
    hi = mean + jitter
    while True:
        dur = int(round(rng.uniform(lo, hi))) if hi > lo else int(round(mean))
        nxt = cuts[-1] + max(1, dur)
        if nxt >= end:
            break
        cuts.append(nxt)
    # a short remainder is merged into the previous child
    if len(cuts) > 1 and end - cuts[-1] < 0.5 * lo:
        cuts.pop()
    cuts.append(end)
    return cuts


def generate_synthetic(cfg: SynthConfig) -> Tuple[FeatureSequence, Partonomy]:
    """Draw a stream and its ground-truth partonomy.

    Order of draws: top-level cuts, then recursively (depth first, temporal
    order) each segment's child cuts; then mean vectors level by level from the
    top; then the noise matrix.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    N = cfg.n_levels
    jit = cfg.jitters()
    T = int(cfg.length)

    # cut points per level, coarse to fine
    cuts_by_level: List[List[int]] = [None] * N  # type: ignore[list-item]
    cuts_by_level[N - 1] = _split(rng, 0, T, cfg.durations[N - 1], jit[N - 1])
    for lvl in range(N - 2, -1, -1):
        upper = cuts_by_level[lvl + 1]
        cuts = [0]
        for a, b in zip(upper[:-1], upper[1:]):
            cuts += _split(rng, a, b, cfg.durations[lvl], jit[lvl])[1:]
        cuts_by_level[lvl] = cuts

    # mean vectors
    means_by_level: List[np.ndarray] = [None] * N  # type: ignore[list-item]
    n_top = len(cuts_by_level[N - 1]) - 1
    means_by_level[N - 1] = cfg.separation * rng.standard_normal((n_top, cfg.dim))
    scale = cfg.separation * cfg.offset_scale / cfg.offset_decay
    for lvl in range(N - 2, -1, -1):
        scale *= cfg.offset_decay
        cuts = cuts_by_level[lvl]
        upper = cuts_by_level[lvl + 1]
        parent = np.searchsorted(upper, cuts[:-1], side="right") - 1
        offs = scale * rng.standard_normal((len(cuts) - 1, cfg.dim))
        means_by_level[lvl] = means_by_level[lvl + 1][parent] + offs

    fine_cuts = np.asarray(cuts_by_level[0])
    seg_of = np.searchsorted(fine_cuts, np.arange(T), side="right") - 1
    data = means_by_level[0][seg_of]
    if cfg.drift:
        since = np.arange(T) - fine_cuts[seg_of]
        data = data + cfg.drift * since[:, None]
    noise = rng.standard_normal((T, cfg.dim))
    data = data + cfg.noise * noise

    levels = []
    for lvl in range(N):
        c = cuts_by_level[lvl]
        segs = [Segment(c[k], c[k + 1], f"L{lvl + 1}_{k}") for k in range(len(c) - 1)]
        levels.append(Level(segs, f"L{lvl + 1}"))
    p = Partonomy(levels, T, cfg.fps)
    assert not validate(p)
    return FeatureSequence(data.astype(np.float32), cfg.fps), p
