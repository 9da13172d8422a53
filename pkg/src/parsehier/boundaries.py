"""Event boundaries from per-level prediction-error traces.

Each trace is smoothed with a trailing moving average, differenced twice, and
boundaries are the strict local maxima of the result within a per-level
radius. Trace index t is the loss of predicting frame t+1, so a maximum at t
becomes a boundary at frame t+1. With the trailing average the online
detection latency is r + 1 frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .partonomy import BoundarySet

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class BoundaryConfig:
    smoothing: Tuple[int, ...]
    radii: Tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "smoothing", tuple(int(k) for k in self.smoothing))
        object.__setattr__(self, "radii", tuple(int(r) for r in self.radii))
        if len(self.smoothing) != len(self.radii):
            raise ValueError("need one smoothing window per radius")
        if any(k < 1 for k in self.smoothing):
            raise ValueError("smoothing windows must be >= 1")
        if any(r < 1 for r in self.radii):
            raise ValueError("radii must be >= 1")

    @property
    def n_levels(self) -> int:
        return len(self.radii)

    @classmethod
    def from_fps(cls, fps: float, n_levels: int = 3) -> "BoundaryConfig":
        """Frame-rate defaults: radii 0.25/1.25/2.0 s, smoothing max(3, 0.2 s)."""
        factors = [0.25, 1.25, 2.0]
        while len(factors) < n_levels:
            factors.append(factors[-1] + 0.75)
        radii = tuple(max(1, int(round(f * fps))) for f in factors[:n_levels])
        k = max(3, int(round(0.2 * fps)))
        return cls((k,) * n_levels, radii)

    @classmethod
    def from_durations(cls, durations, fraction: float = 0.25, smoothing: int = 3) -> "BoundaryConfig":
        """Radii proportional to known mean segment durations (frames)."""
        radii = tuple(max(1, int(round(fraction * d))) for d in durations)
        return cls((smoothing,) * len(radii), radii)

    def scaled(self, factor: float) -> "BoundaryConfig":
        return BoundaryConfig(self.smoothing,
                              tuple(max(1, int(round(r * factor))) for r in self.radii))


# published tables label the levels L2/L3/L4; they map to predictor levels 1/2/3
PRESETS = {
    "breakfast": BoundaryConfig((4, 3, 2), (4, 20, 30)),
    "salads": BoundaryConfig((3, 3, 3), (4, 20, 45)),
    "assembly": BoundaryConfig((3, 3, 3), (4, 30, 60)),
}


def preset(name: str, fps: Optional[float] = None, n_levels: int = 3) -> BoundaryConfig:
    if name == "fps-default":
        if fps is None:
            raise ValueError("fps-default preset needs a frame rate")
        return BoundaryConfig.from_fps(fps, n_levels)
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from "
                         f"{sorted(PRESETS) + ['fps-default']}") from None


def moving_average(trace, k: int) -> np.ndarray:
    """Trailing mean over the last min(t+1, k) values."""
    x = np.asarray(trace, dtype=np.float64)
    if x.size == 0:
        raise ValueError("empty trace")
    if k < 1:
        raise ValueError("window must be >= 1")
    # direct window sums: a running cumsum drifts on long or offset traces
    k = min(k, x.size)
    out = np.empty_like(x)
    for j in range(k - 1):
        out[j] = x[:j + 1].sum() / (j + 1)
    win = np.lib.stride_tricks.sliding_window_view(x, k)
    out[k - 1:] = win.sum(axis=1) / k
    return out


def second_difference(trace) -> np.ndarray:
    """Central second difference; both endpoints hold -inf."""
    x = np.asarray(trace, dtype=np.float64)
    if x.size < 3:
        raise ValueError("second difference needs at least 3 samples")
    out = np.full(x.size, -np.inf)
    out[1:-1] = x[2:] - 2.0 * x[1:-1] + x[:-2]
    return out


def local_maxima(signal, r: int, tol: float = 0.0) -> List[int]:
    """Indices strictly greater than every other value within distance r.

    A value must exceed each neighbour by more than ``tol``.
    """
    x = np.asarray(signal, dtype=np.float64)
    n = x.size
    if r < 1:
        raise ValueError("radius must be >= 1")
    if n == 0:
        return []
    keep = np.isfinite(x)
    with np.errstate(invalid="ignore"):  # -inf - -inf at the sentinels compares False
        for s in range(1, min(r, n - 1) + 1):
            keep[s:] &= x[s:] - x[:-s] > tol
            keep[:-s] &= x[:-s] - x[s:] > tol
    return [int(i) for i in np.flatnonzero(keep)]


# Rounding in the smoothing step leaves ~1e-16 relative noise on flat or
# shifted traces; differences below this fraction of the signal scale count as ties.
_REL_TIE = 1e-9


def _tie_tolerance(ma: np.ndarray, d2: np.ndarray) -> float:
    inner = d2[1:-1]
    scale = max(float(np.max(np.abs(inner))) if inner.size else 0.0,
                1e-6 * float(np.max(np.abs(ma))))
    return _REL_TIE * scale


def extract_level(trace, smoothing: int, radius: int) -> List[int]:
    """Boundary frames for one trace (length T-1)."""
    x = np.asarray(trace, dtype=np.float64)
    if x.size < 3:
        log.warning("trace of length %d too short for boundary extraction", x.size)
        return []
    ma = moving_average(x, smoothing)
    d2 = second_difference(ma)
    tol = _tie_tolerance(ma, d2)
    # stencils touching warm-up averages (fewer than k samples) are excluded
    d2[:min(smoothing, d2.size)] = -np.inf
    T = x.size + 1
    return sorted({t + 1 for t in local_maxima(d2, radius, tol) if 0 < t + 1 < T})


def extract_boundaries(traces: Sequence, cfg: BoundaryConfig) -> List[BoundarySet]:
    if len(traces) != cfg.n_levels:
        raise ValueError(f"{len(traces)} traces but config has {cfg.n_levels} levels")
    return [BoundarySet(i, extract_level(tr, k, r))
            for i, (tr, k, r) in enumerate(zip(traces, cfg.smoothing, cfg.radii), start=1)]
