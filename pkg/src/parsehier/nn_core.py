"""Small reverse-mode differentiation engine and the layers the predictor stack needs.

Only the operations used by the stack are provided: affine maps, a standard
LSTM cell, scaled dot-product attention, concatenation and the two losses.
Every op is fused (one tape entry per op) so that per-frame streaming updates
stay cheap in pure numpy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    """Raised when an activation or gradient stops being finite."""


class Node:
    """A value on the tape, optionally carrying a gradient slot."""

    __slots__ = ("value", "grad", "requires_grad")

    def __init__(self, value, requires_grad: bool = False):
        self.value = np.asarray(value, dtype=DTYPE)
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self):
        return self.value.shape

    def _accumulate(self, g):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    def __repr__(self):
        return f"Node(shape={self.value.shape}, requires_grad={self.requires_grad})"


def const(value) -> Node:
    return Node(value, requires_grad=False)


class Tape:
    """Records backward closures in execution order."""

    def __init__(self):
        self._ops: List[Callable[[], None]] = []

    def record(self, fn: Callable[[], None]) -> None:
        self._ops.append(fn)

    def backward(self, out: Node) -> None:
        if out.value.shape not in ((), (1,)):
            raise ShapeError("backward() needs a scalar output")
        out.grad = np.ones_like(out.value)
        for fn in reversed(self._ops):
            fn()

    def clear(self) -> None:
        self._ops.clear()

    def __len__(self):
        return len(self._ops)


def _needs(*nodes: Node) -> bool:
    return any(n.requires_grad for n in nodes)


# ---------------------------------------------------------------------------
# parameters and optimizer


class Parameters:
    """Named dense arrays with gradient slots; shapes fixed at construction."""

    def __init__(self, arrays: Dict[str, np.ndarray]):
        self._nodes: Dict[str, Node] = {}
        for name, arr in arrays.items():
            arr = np.array(arr, dtype=DTYPE, copy=True)
            if not np.all(np.isfinite(arr)):
                raise NonFiniteError(f"parameter {name!r} has non-finite entries")
            self._nodes[name] = Node(arr, requires_grad=True)

    def __getitem__(self, name: str) -> Node:
        return self._nodes[name]

    def __contains__(self, name):
        return name in self._nodes

    def __iter__(self):
        return iter(self._nodes)

    def __len__(self):
        return len(self._nodes)

    def names(self) -> List[str]:
        return list(self._nodes)

    def items(self):
        return self._nodes.items()

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {k: n.value.shape for k, n in self._nodes.items()}

    def values(self) -> Dict[str, np.ndarray]:
        return {k: n.value for k, n in self._nodes.items()}

    def grads(self) -> Dict[str, np.ndarray]:
        return {k: (n.grad if n.grad is not None else np.zeros_like(n.value))
                for k, n in self._nodes.items()}

    def zero_grad(self) -> None:
        for n in self._nodes.values():
            n.grad = None

    def copy(self) -> "Parameters":
        return Parameters(self.values())

    def size(self) -> int:
        return int(sum(n.value.size for n in self._nodes.values()))

    def fingerprint(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for k in sorted(self._nodes):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self._nodes[k].value).tobytes())
        return h.hexdigest()


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: Parameters, lr: float, **kw) -> "AdamState":
        st = cls(lr=lr, **kw)
        for k, shape in params.shapes().items():
            st.m[k] = np.zeros(shape, dtype=DTYPE)
            st.v[k] = np.zeros(shape, dtype=DTYPE)
        return st


def adam_step(params: Parameters, grads: Dict[str, np.ndarray], opt: AdamState) -> None:
    """Apply one bias-corrected ADAM update in place.

    The whole update is rejected (nothing changes) if any gradient entry is
    non-finite.
    """
    for k, g in grads.items():
        if g.shape != params[k].value.shape:
            raise ShapeError(f"gradient for {k!r} has shape {g.shape}, "
                             f"expected {params[k].value.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for {k!r}")
    opt.step += 1
    b1, b2 = opt.beta1, opt.beta2
    c1 = 1.0 - b1 ** opt.step
    c2 = 1.0 - b2 ** opt.step
    for k, g in grads.items():
        m = opt.m[k]
        v = opt.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if opt.lr:
            p = params[k].value
            p -= opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)


# ---------------------------------------------------------------------------
# ops


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def linear(tape: Tape, x: Node, W: Node, b: Node) -> Node:
    """y = W x + b for a single vector x."""
    if W.value.ndim != 2 or W.value.shape[1] != x.value.shape[0]:
        raise ShapeError(f"linear: W {W.value.shape} incompatible with x {x.value.shape}")
    out = Node(W.value @ x.value + b.value, _needs(x, W, b))
    if out.requires_grad:
        def back():
            g = out.grad
            if g is None:
                return
            if W.requires_grad:
                W._accumulate(np.outer(g, x.value))
            if b.requires_grad:
                b._accumulate(g)
            if x.requires_grad:
                x._accumulate(W.value.T @ g)
        tape.record(back)
    return out


def concat(tape: Tape, parts: Sequence[Node]) -> Node:
    out = Node(np.concatenate([p.value for p in parts]), _needs(*parts))
    if out.requires_grad:
        sizes = [p.value.shape[0] for p in parts]

        def back():
            g = out.grad
            if g is None:
                return
            o = 0
            for p, n in zip(parts, sizes):
                if p.requires_grad:
                    p._accumulate(g[o:o + n])
                o += n
        tape.record(back)
    return out


@dataclass
class RecurrentState:
    hidden: Node
    cell: Node

    @classmethod
    def zeros(cls, dim: int) -> "RecurrentState":
        return cls(const(np.zeros(dim)), const(np.zeros(dim)))

    def detached(self) -> "RecurrentState":
        return RecurrentState(const(self.hidden.value.copy()), const(self.cell.value.copy()))


def lstm_cell_forward(tape: Tape, x: Node, state: RecurrentState, W: Node, b: Node
                      ) -> Tuple[Node, RecurrentState]:
    """Standard LSTM cell, gates stacked as (input, forget, candidate, output).

    ``W`` has shape (4*d_h, d_in + d_h) and acts on ``[x; h]``. Returns the
    output (equal to the new hidden state) and the new state.
    """
    h, c = state.hidden, state.cell
    dh = h.value.shape[0]
    if W.value.shape != (4 * dh, x.value.shape[0] + dh):
        raise ShapeError(f"lstm: W {W.value.shape} incompatible with x {x.value.shape} "
                         f"and hidden {h.value.shape}")
    if c.value.shape != (dh,):
        raise ShapeError("lstm: cell and hidden dims differ")
    xh = np.concatenate([x.value, h.value])
    z = W.value @ xh + b.value
    i = sigmoid(z[:dh])
    f = sigmoid(z[dh:2 * dh])
    g = np.tanh(z[2 * dh:3 * dh])
    o = sigmoid(z[3 * dh:])
    c_new = f * c.value + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    req = _needs(x, h, c, W, b)
    h_out = Node(h_new, req)
    c_out = Node(c_new, req)
    if req:
        dx = x.value.shape[0]

        def back():
            gh = h_out.grad
            gc = c_out.grad
            if gh is None and gc is None:
                return
            dc = np.zeros(dh) if gc is None else gc.copy()
            if gh is not None:
                do = gh * tc
                dc += gh * o * (1.0 - tc * tc)
            else:
                do = np.zeros(dh)
            dz = np.empty(4 * dh)
            dz[:dh] = dc * g * i * (1.0 - i)
            dz[dh:2 * dh] = dc * c.value * f * (1.0 - f)
            dz[2 * dh:3 * dh] = dc * i * (1.0 - g * g)
            dz[3 * dh:] = do * o * (1.0 - o)
            if W.requires_grad:
                W._accumulate(np.outer(dz, xh))
            if b.requires_grad:
                b._accumulate(dz)
            if x.requires_grad or h.requires_grad:
                dxh = W.value.T @ dz
                x._accumulate(dxh[:dx])
                h._accumulate(dxh[dx:])
            c._accumulate(dc * f)
        tape.record(back)
    return h_out, RecurrentState(h_out, c_out)


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=DTYPE)
    e = np.exp(z - z.max())
    return e / e.sum()


def attention_weights(query: np.ndarray, memory: np.ndarray) -> np.ndarray:
    d = query.shape[0]
    return softmax(memory @ query / math.sqrt(d))


def attention(tape: Tape, query: Node, memory: Node) -> Node:
    """Scaled dot-product attention of one query over memory rows.

    ``memory`` is a (K, d) matrix, newest row first. Raises on an empty memory;
    warm-up is the caller's business.
    """
    M = memory.value
    if M.ndim != 2 or M.shape[0] == 0:
        raise ValueError("attention over an empty memory")
    d = query.value.shape[0]
    if M.shape[1] != d:
        raise ShapeError(f"attention: query dim {d} but memory dim {M.shape[1]}")
    scale = 1.0 / math.sqrt(d)
    a = softmax(M @ query.value * scale)
    out = Node(a @ M, _needs(query, memory))
    if out.requires_grad:
        def back():
            g = out.grad
            if g is None:
                return
            da = M @ g
            dz = a * (da - a @ da)
            if query.requires_grad:
                query._accumulate(scale * (M.T @ dz))
            if memory.requires_grad:
                memory._accumulate(np.outer(a, g) + scale * np.outer(dz, query.value))
        tape.record(back)
    return out


def mse(tape: Tape, pred: Node, target: Node) -> Node:
    """Normalized sum-squared error (1/d)·||pred - target||^2."""
    if pred.value.shape != target.value.shape:
        raise ShapeError(f"mse: {pred.value.shape} vs {target.value.shape}")
    diff = pred.value - target.value
    n = diff.shape[0]
    out = Node(math.fsum(diff * diff) / n, _needs(pred, target))
    if out.requires_grad:
        def back():
            if out.grad is None:
                return
            gd = (2.0 / n) * float(out.grad) * diff
            pred._accumulate(gd)
            target._accumulate(-gd)
        tape.record(back)
    return out


def l1(tape: Tape, x: Node) -> Node:
    out = Node(math.fsum(np.abs(x.value)), x.requires_grad)
    if out.requires_grad:
        def back():
            if out.grad is not None:
                x._accumulate(float(out.grad) * np.sign(x.value))
        tape.record(back)
    return out


def weighted_sum(tape: Tape, terms: Sequence[Node], weights: Sequence[float]) -> Node:
    out = Node(math.fsum(float(w) * float(t.value) for t, w in zip(terms, weights)),
               _needs(*terms))
    if out.requires_grad:
        def back():
            if out.grad is None:
                return
            g = float(out.grad)
            for t, w in zip(terms, weights):
                t._accumulate(np.asarray(g * w))
        tape.record(back)
    return out


# ---------------------------------------------------------------------------
# initialisation and gradient checking


def init_lstm_params(rng: np.random.Generator, d_in: int, d_h: int, d_out: int,
                     prefix: str = "") -> Dict[str, np.ndarray]:
    """Uniform(±1/sqrt(d_h)) weights, zero biases except forget bias = 1."""
    bound = 1.0 / math.sqrt(d_h)
    W = rng.uniform(-bound, bound, size=(4 * d_h, d_in + d_h))
    b = np.zeros(4 * d_h)
    b[d_h:2 * d_h] = 1.0
    Wo = rng.uniform(-bound, bound, size=(d_out, d_h))
    bo = np.zeros(d_out)
    return {prefix + "W": W, prefix + "b": b, prefix + "Wo": Wo, prefix + "bo": bo}


def grad_check(f: Callable[[Parameters, Tape], Node], point: Parameters,
               eps: float = 1e-5) -> float:
    """Max relative error between tape gradients and central differences.

    ``f`` builds a scalar on the given tape from the given parameters. The
    relative error per entry is |a - n| / max(|a|, |n|, 1e-12).
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    params = point.copy()
    tape = Tape()
    params.zero_grad()
    out = f(params, tape)
    tape.backward(out)
    analytic = params.grads()

    worst = 0.0
    for name in params.names():
        arr = params[name].value
        flat = arr.reshape(-1)
        ga = analytic[name].reshape(-1)
        for j in range(flat.size):
            old = flat[j]
            flat[j] = old + eps
            fp = float(f(params, Tape()).value)
            flat[j] = old - eps
            fm = float(f(params, Tape()).value)
            flat[j] = old
            num = (fp - fm) / (2.0 * eps)
            err = abs(ga[j] - num) / max(abs(ga[j]), abs(num), 1e-12)
            worst = max(worst, err)
    return worst


def check_finite(arrs: Iterable[np.ndarray]) -> bool:
    return all(np.all(np.isfinite(a)) for a in arrs)
