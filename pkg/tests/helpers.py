"""Shared fixtures and brute-force oracles for the unit and acceptance tests."""

import itertools
import math
from functools import lru_cache

import numpy as np

from parsehier.metrics import Tree
from parsehier.nn_core import Parameters, grad_check
from parsehier.stack import StackConfig, StackState, init_params, step, step_energy_node, step_targets


def warm_state(cfg: StackConfig, params, rng, steps: int = 3) -> StackState:
    """State after a few random frames, so hidden states and memories are non-trivial."""
    state = StackState.zeros(cfg)
    for _ in range(steps):
        _, state = step(rng.normal(size=cfg.feature_dim), rng.normal(size=cfg.feature_dim),
                        state, params, cfg)
    return state.detached()


def random_state(cfg: StackConfig, rng, scale: float = 0.5) -> StackState:
    """Recurrent states and full memories drawn from N(0, scale^2)."""
    from collections import deque
    from parsehier.nn_core import RecurrentState, const

    state = StackState.zeros(cfg)
    state.rec = [RecurrentState(const(scale * rng.normal(size=lv.hidden_dim)),
                                const(scale * rng.normal(size=lv.hidden_dim))) for lv in cfg.levels]
    state.memories = [deque((scale * rng.normal(size=lv.hidden_dim) for _ in range(lv.memory)),
                            maxlen=lv.memory) for lv in cfg.levels]
    return state


def stack_grad_error(seed: int, n_levels=3, d=4, dh=4, K=2, eps=1e-5) -> float:
    """Max relative error of the full-step energy gradient over every parameter."""
    cfg = StackConfig.build(d, n_levels, dh, K)
    params = init_params(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    state = random_state(cfg, rng)
    f_t, f_next = rng.normal(size=d), rng.normal(size=d)
    # lower-level targets are constants of the objective: pin them at the base point
    targets = step_targets(f_t, f_next, state, params, cfg)

    flat = Parameters({f"{i}.{k}": v for i, p in enumerate(params) for k, v in p.values().items()})

    def energy(fp, tape):
        # views onto the flat parameter nodes, regrouped per level
        levels = [Parameters.__new__(Parameters) for _ in range(n_levels)]
        for i, lv in enumerate(levels):
            lv._nodes = {k.split(".", 1)[1]: fp[k] for k in fp.names() if k.startswith(f"{i}.")}
        return step_energy_node(tape, f_t, f_next, state, levels, cfg, targets)

    return grad_check(energy, flat, eps)


# ---------------------------------------------------------------------------
# brute-force oracles


@lru_cache(maxsize=None)
def forests(n):
    """All ordered forests with n nodes, as tuples of trees (a tree is its child forest)."""
    if n == 0:
        return [()]
    out = []
    for k in range(1, n + 1):  # size of the first tree
        for first in forests(k - 1):
            for rest in forests(n - k):
                out.append((first,) + rest)
    return out


def trees(n):
    return list(forests(n - 1))


def to_tree(shape):
    return Tree("", [to_tree(c) for c in shape])



def _deletions(forest):
    """Every forest reachable by deleting a node subset, with its deletion count.

    Deleting a node splices its children into its place.
    """
    if not forest:
        return {(): 0}
    head, tail = forest[0], forest[1:]
    out = {}
    for sub, dc in _deletions(head).items():
        for rest, dr in _deletions(tail).items():
            for f, d in (((sub,) + rest, dc + dr), (sub + rest, dc + dr + 1)):
                if f not in out or d < out[f]:
                    out[f] = d
    return out


@lru_cache(maxsize=None)
def deletion_table(shape):
    return _deletions((shape,))


def brute_ted(a, b):
    """Minimum insert/delete count: delete down to a common forest, then insert back up."""
    da, db = deletion_table(a), deletion_table(b)
    return min(da[f] + db[f] for f in da.keys() & db.keys())


def brute_assignment(M, maximize):
    n, m = M.shape
    best = None
    if n <= m:
        cands = (math.fsum(M[i, c] for i, c in enumerate(p)) for p in itertools.permutations(range(m), n))
    else:
        cands = (math.fsum(M[r, j] for j, r in enumerate(p)) for p in itertools.permutations(range(n), m))
    for v in cands:
        if best is None or (v > best if maximize else v < best):
            best = v
    return best


# ---------------------------------------------------------------------------
# planted error traces


def planted(T, frames, amp=5.0, decay=0.5, noise=0.0, seed=0):
    """Error trace of length T-1 with a rise-then-decay transient entering each frame."""
    rng = np.random.default_rng(seed)
    x = noise * rng.random(T - 1)
    for f in frames:
        for k in range(8):
            if f - 1 + k < T - 1:
                x[f - 1 + k] += amp * decay ** k
    return x


# acceptance lines, echoed by the terminal summary hook in conftest.py
ACCEPTANCE = []
