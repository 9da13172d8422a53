"""Hierarchy of recurrent predictors trained online on a feature stream.

Level 1 predicts the next feature vector from the current one. Level i >= 2
predicts the next hidden state of level i-1 from the current one, together
with an attention summary of the recent hidden states of level i+1 (the top
level attends over its own history). Per-level losses are recorded as error
traces; their transients are what the boundary extractor looks at.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import math
import struct
from collections import deque
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Deque, Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .nn_core import (
    AdamState,
    NonFiniteError,
    Node,
    Parameters,
    RecurrentState,
    ShapeError,
    Tape,
    adam_step,
    attention,
    concat,
    const,
    init_lstm_params,
    l1,
    linear,
    lstm_cell_forward,
    mse,
    weighted_sum,
)

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class LevelConfig:
    index: int          # 1-based
    input_dim: int      # dimension of what this level predicts (d_{i-1})
    hidden_dim: int
    memory: int = 5     # K, number of superordinate states attended over


@dataclass
class StackConfig:
    levels: List[LevelConfig]
    sparsity: float = 0.1
    train_lr: float = 1e-3
    adapt_lr: float = 1e-6
    window: int = 1
    top_context: str = "self"       # "self" or "none"
    bottom_context: bool = False    # give level 1 a top-down context too
    normalize: bool = False         # running z-normalisation of features
    max_skips: int = 100

    @classmethod
    def build(cls, feature_dim: int, n_levels: int = 3, hidden_dim: int = 64,
              memory: int = 5, **kw) -> "StackConfig":
        levels = []
        for i in range(1, n_levels + 1):
            levels.append(LevelConfig(i, feature_dim if i == 1 else hidden_dim,
                                      hidden_dim, memory))
        cfg = cls(levels=levels, **kw)
        cfg.validate()
        return cfg

    @property
    def n_levels(self) -> int:
        return len(self.levels)

    @property
    def feature_dim(self) -> int:
        return self.levels[0].input_dim

    def validate(self) -> None:
        if self.n_levels < 2:
            raise ConfigError("need at least two levels")
        for pos, lv in enumerate(self.levels, start=1):
            if lv.index != pos:
                raise ConfigError("level indices must run 1..N")
            if lv.input_dim < 1 or lv.hidden_dim < 1:
                raise ConfigError(f"level {pos}: dims must be positive")
            if lv.memory < 1:
                raise ConfigError(f"level {pos}: memory K must be >= 1")
            if pos > 1 and lv.input_dim != self.levels[pos - 2].hidden_dim:
                raise ConfigError(f"level {pos}: input_dim must equal hidden_dim of level {pos - 1}")
        for i in range(1, self.n_levels + 1):
            src = self.context_source(i)
            if src is not None and self.levels[src - 1].hidden_dim != self.levels[i - 1].hidden_dim:
                raise ConfigError(f"level {i} attends over level {src}: hidden dims must match")
        if self.sparsity < 0:
            raise ConfigError("sparsity weight must be >= 0")
        if self.adapt_lr > self.train_lr:
            raise ConfigError("adapt_lr must not exceed train_lr")
        if self.window < 1:
            raise ConfigError("window must be >= 1")
        if self.top_context not in ("self", "none"):
            raise ConfigError("top_context must be 'self' or 'none'")

    def context_source(self, i: int) -> Optional[int]:
        """Level whose hidden history level ``i`` attends over, or None."""
        if i == 1 and not self.bottom_context:
            return None
        if i < self.n_levels:
            return i + 1
        return i if self.top_context == "self" else None

    def lstm_input_dim(self, i: int) -> int:
        lv = self.levels[i - 1]
        bottom = lv.input_dim
        return bottom + (lv.hidden_dim if self.context_source(i) is not None else 0)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["levels"] = [asdict(lv) for lv in self.levels]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StackConfig":
        d = dict(d)
        d["levels"] = [LevelConfig(**lv) for lv in d["levels"]]
        cfg = cls(**d)
        cfg.validate()
        return cfg


StackParams = List[Parameters]


def init_params(cfg: StackConfig, seed: int) -> StackParams:
    rng = np.random.default_rng(seed)
    out = []
    for lv in cfg.levels:
        arrays = init_lstm_params(rng, cfg.lstm_input_dim(lv.index), lv.hidden_dim, lv.input_dim)
        out.append(Parameters(arrays))
    return out


def copy_params(params: StackParams) -> StackParams:
    return [p.copy() for p in params]


def params_fingerprint(params: StackParams) -> str:
    h = hashlib.sha256()
    for p in params:
        h.update(p.fingerprint().encode())
    return h.hexdigest()


@dataclass
class StackState:
    rec: List[RecurrentState]
    memories: List[Deque[np.ndarray]]   # memories[i-1]: newest-first history for level i
    t: int = 0

    @classmethod
    def zeros(cls, cfg: StackConfig) -> "StackState":
        return cls(
            rec=[RecurrentState.zeros(lv.hidden_dim) for lv in cfg.levels],
            memories=[deque(maxlen=lv.memory) for lv in cfg.levels],
            t=0,
        )

    def detached(self) -> "StackState":
        return StackState([r.detached() for r in self.rec],
                          [deque(m, maxlen=m.maxlen) for m in self.memories], self.t)


@dataclass
class StepOutput:
    predictions: List[np.ndarray]
    pred_loss: List[float]
    sparse_loss: List[float]
    energy: float


def energy(out: StepOutput, sparsity: float) -> float:
    return math.fsum(p + sparsity * s for p, s in zip(out.pred_loss, out.sparse_loss))


@dataclass
class _Graph:
    """Tape-level result of one step, before conversion to plain numbers."""
    preds: List[Node]
    pred_loss: List[Node]
    sparse_loss: List[Node]
    energy: Node


def _forward(tape: Tape, f_t: np.ndarray, f_next: np.ndarray, state: StackState,
             params: StackParams, cfg: StackConfig,
             targets: Optional[Sequence[np.ndarray]] = None) -> Tuple[_Graph, StackState]:
    N = cfg.n_levels
    f_t = np.asarray(f_t, dtype=np.float64)
    f_next = np.asarray(f_next, dtype=np.float64)
    if f_t.shape != (cfg.feature_dim,) or f_next.shape != (cfg.feature_dim,):
        raise ShapeError(f"frame shape {f_t.shape}/{f_next.shape}, expected ({cfg.feature_dim},)")
    if len(params) != N:
        raise ShapeError(f"got parameters for {len(params)} levels, config has {N}")

    new_rec: List[RecurrentState] = []
    preds: List[Node] = []
    for i in range(1, N + 1):
        lv = cfg.levels[i - 1]
        p = params[i - 1]
        prev = state.rec[i - 1]
        if i == 1:
            bottom = const(f_t)
        else:
            # lower state enters as a constant: no gradient into level i-1
            bottom = const(state.rec[i - 2].hidden.value)
        src = cfg.context_source(i)
        if src is None:
            x = bottom
        else:
            mem = state.memories[i - 1]
            if len(mem) == 0:
                ctx = const(np.zeros(lv.hidden_dim))
            else:
                ctx = attention(tape, prev.hidden, const(np.stack(list(mem))))
            x = concat(tape, [bottom, ctx])
        h_new, rs = lstm_cell_forward(tape, x, prev, p["W"], p["b"])
        pred = linear(tape, h_new, p["Wo"], p["bo"])
        if not (np.all(np.isfinite(h_new.value)) and np.all(np.isfinite(pred.value))):
            raise NonFiniteError(f"non-finite activation at level {i}, t={state.t}")
        new_rec.append(rs)
        preds.append(pred)

    pred_loss: List[Node] = []
    sparse_loss: List[Node] = []
    for i in range(1, N + 1):
        if i == 1:
            target = const(f_next)
        elif targets is not None:
            target = const(targets[i - 2])
        else:
            target = const(new_rec[i - 2].hidden.value)
        pred_loss.append(mse(tape, preds[i - 1], target))
        sparse_loss.append(l1(tape, new_rec[i - 1].hidden))
    terms = pred_loss + sparse_loss
    weights = [1.0] * N + [cfg.sparsity] * N
    E = weighted_sum(tape, terms, weights)

    memories = []
    for i in range(1, N + 1):
        m = deque(state.memories[i - 1], maxlen=state.memories[i - 1].maxlen)
        src = cfg.context_source(i)
        if src is not None:
            m.appendleft(new_rec[src - 1].hidden.value.copy())
        memories.append(m)
    return _Graph(preds, pred_loss, sparse_loss, E), StackState(new_rec, memories, state.t + 1)


def _to_output(g: _Graph) -> StepOutput:
    return StepOutput(
        predictions=[p.value.copy() for p in g.preds],
        pred_loss=[float(n.value) for n in g.pred_loss],
        sparse_loss=[float(n.value) for n in g.sparse_loss],
        energy=float(g.energy.value),
    )


def step(f_t, f_next, state: StackState, params: StackParams, cfg: StackConfig
         ) -> Tuple[StepOutput, StackState]:
    """One frame of forward dynamics. Does not touch the parameters."""
    g, new_state = _forward(Tape(), f_t, f_next, state, params, cfg)
    return _to_output(g), new_state


def step_targets(f_t, f_next, state: StackState, params: StackParams, cfg: StackConfig
                 ) -> List[np.ndarray]:
    """Targets of levels 2..N (the new lower hidden states) at the given parameters."""
    _, new_state = step(f_t, f_next, state, params, cfg)
    return [r.hidden.value.copy() for r in new_state.rec[:-1]]


def step_energy_node(tape: Tape, f_t, f_next, state: StackState, params: StackParams,
                     cfg: StackConfig, targets: Optional[Sequence[np.ndarray]] = None) -> Node:
    """Energy of a single step as a tape node (for gradient checks).

    Targets of levels 2..N are constants of the objective. Passing ``targets``
    (see ``step_targets``) pins them, so that finite differences of the
    returned value see the same objective the tape differentiates.
    """
    g, _ = _forward(tape, f_t, f_next, state, params, cfg, targets)
    return g.energy


# ---------------------------------------------------------------------------
# streaming


class _RunningNorm:
    """Causal per-dimension z-normalisation (Welford)."""

    def __init__(self, d: int):
        self.n = 0
        self.mean = np.zeros(d)
        self.m2 = np.zeros(d)

    def update(self, x):
        self.n += 1
        delta = x - self.mean
        self.mean += delta / self.n
        self.m2 += delta * (x - self.mean)

    def apply(self, x):
        if self.n < 2:
            return x - self.mean
        std = np.sqrt(self.m2 / (self.n - 1))
        return (x - self.mean) / np.where(std > 1e-8, std, 1.0)


@dataclass
class EnergyTrace:
    energy: np.ndarray          # (steps,)
    pred: np.ndarray            # (steps, N)
    sparse: np.ndarray          # (steps, N)
    video: np.ndarray           # (steps,) index of the source video
    skipped_updates: int = 0


class _Streamer:
    """Runs the stack over one stream with windowed online updates."""

    def __init__(self, params: StackParams, cfg: StackConfig, lr: float):
        self.params = params
        self.cfg = cfg
        self.opts = [AdamState.for_params(p, lr) for p in params]
        self.lr = lr
        self.consecutive_skips = 0
        self.skipped = 0

    def run(self, frames: np.ndarray, tag: str = "") -> Iterator[StepOutput]:
        cfg = self.cfg
        T = frames.shape[0]
        state = StackState.zeros(cfg)
        norm = _RunningNorm(frames.shape[1]) if cfg.normalize else None
        learn = self.lr > 0
        tape = Tape()
        pending: List[Node] = []
        for t in range(T - 1):
            f_t, f_next = frames[t].astype(np.float64), frames[t + 1].astype(np.float64)
            if norm is not None:
                if t == 0:
                    norm.update(f_t)
                x_t = norm.apply(f_t)
                norm.update(f_next)
                x_next = norm.apply(f_next)
                f_t, f_next = x_t, x_next
            try:
                g, state = _forward(tape if learn else Tape(), f_t, f_next, state, self.params, cfg)
            except NonFiniteError as exc:
                raise NonFiniteError(f"{tag}: {exc}") from exc
            yield _to_output(g)
            if learn:
                pending.append(g.energy)
                if len(pending) == cfg.window or t == T - 2:
                    self._update(tape, pending, tag, t)
                    pending = []
                    tape = Tape()
                    state = state.detached()

    def _update(self, tape: Tape, pending: List[Node], tag: str, t: int) -> None:
        total = weighted_sum(tape, pending, [1.0] * len(pending))
        for p in self.params:
            p.zero_grad()
        tape.backward(total)
        try:
            grads = [p.grads() for p in self.params]
            for p, g in zip(self.params, grads):
                for k, arr in g.items():
                    if not np.all(np.isfinite(arr)):
                        raise NonFiniteError(f"non-finite gradient for {k!r}")
            for p, g, opt in zip(self.params, grads, self.opts):
                adam_step(p, g, opt)
            self.consecutive_skips = 0
        except NonFiniteError as exc:
            self.skipped += 1
            self.consecutive_skips += 1
            log.warning("%s t=%d: update skipped (%s)", tag, t, exc)
            if self.consecutive_skips >= self.cfg.max_skips:
                raise NonFiniteError(f"{tag}: {self.consecutive_skips} consecutive skipped updates") from exc
        finally:
            for p in self.params:
                p.zero_grad()


def _frames(video) -> np.ndarray:
    return np.asarray(getattr(video, "data", video))


def train_stream(videos: Sequence, cfg: StackConfig, seed: int = 0,
                 params: Optional[StackParams] = None) -> Tuple[StackParams, EnergyTrace]:
    """Single streaming pass over ``videos`` in order, updating at train_lr.

    Recurrent state is reset between videos; parameters carry over.
    """
    cfg.validate()
    if len(videos) == 0:
        raise ConfigError("no training videos")
    for k, v in enumerate(videos):
        fr = _frames(v)
        if fr.ndim != 2 or fr.shape[0] < 2 or fr.shape[1] != cfg.feature_dim:
            raise ShapeError(f"video {k}: need T >= 2 frames of dim {cfg.feature_dim}, got {fr.shape}")
    params = init_params(cfg, seed) if params is None else params
    streamer = _Streamer(params, cfg, cfg.train_lr)
    E, P, S, V = [], [], [], []
    for k, v in enumerate(videos):
        for out in streamer.run(_frames(v), tag=f"video {k}"):
            E.append(out.energy)
            P.append(out.pred_loss)
            S.append(out.sparse_loss)
            V.append(k)
    trace = EnergyTrace(np.array(E), np.array(P), np.array(S), np.array(V, dtype=np.int64),
                        streamer.skipped)
    return params, trace


def infer_stream(video, trained: StackParams, cfg: StackConfig,
                 adapt_lr: Optional[float] = None) -> np.ndarray:
    """Per-level prediction-loss traces, shape (N, T-1).

    Works on a private copy of ``trained`` so every video starts from the
    trained weights.
    """
    frames = _frames(video)
    if frames.ndim != 2 or frames.shape[0] < 2:
        raise ValueError(f"need at least 2 frames, got shape {frames.shape}")
    if frames.shape[1] != cfg.feature_dim:
        raise ShapeError(f"feature dim {frames.shape[1]}, expected {cfg.feature_dim}")
    lr = cfg.adapt_lr if adapt_lr is None else adapt_lr
    streamer = _Streamer(copy_params(trained), cfg, lr)
    rows = [out.pred_loss for out in streamer.run(frames, tag="infer")]
    return np.asarray(rows, dtype=np.float64).T


# ---------------------------------------------------------------------------
# checkpoints

_CKPT_MAGIC = b"PRSC"
_CKPT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, cfg: StackConfig, params: StackParams) -> None:
    """Binary checkpoint: magic, version, JSON header, f64 payload, sha256."""
    specs = []
    payload = io.BytesIO()
    for lvl, p in enumerate(params, start=1):
        for name in p.names():
            arr = p[name].value
            specs.append({"level": lvl, "name": name, "shape": list(arr.shape)})
            payload.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    header = json.dumps({"config": cfg.to_dict(), "params": specs}, sort_keys=True).encode()
    body = (_CKPT_MAGIC + struct.pack("<II", _CKPT_VERSION, len(header)) + header
            + payload.getvalue())
    Path(path).write_bytes(body + hashlib.sha256(body).digest())


def load_checkpoint(path) -> Tuple[StackConfig, StackParams]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 + 32:
        raise CheckpointError("checkpoint truncated")
    if raw[:4] != _CKPT_MAGIC:
        raise CheckpointError("bad checkpoint magic")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise CheckpointError("checkpoint checksum mismatch")
    version, hlen = struct.unpack_from("<II", body, 4)
    if version != _CKPT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    header = json.loads(body[12:12 + hlen].decode())
    cfg = StackConfig.from_dict(header["config"])
    off = 12 + hlen
    arrays: List[Dict[str, np.ndarray]] = [dict() for _ in range(cfg.n_levels)]
    for spec in header["params"]:
        n = int(np.prod(spec["shape"])) if spec["shape"] else 1
        arr = np.frombuffer(body, dtype="<f8", count=n, offset=off).reshape(spec["shape"])
        arrays[spec["level"] - 1][spec["name"]] = arr.astype(np.float64)
        off += 8 * n
    if off != len(body):
        raise CheckpointError("checkpoint payload length mismatch")
    return cfg, [Parameters(a) for a in arrays]
