"""Boundary and structure metrics for predicted partonomies.

* H-GEBD: boundary precision/recall/mIoU/F1 within ±w frames, per level.
* TED / TED-Sim: ordered tree edit distance (Zhang & Shasha) between the
  partonomy trees, normalised by total node count.
* hF1: per-level F1 of IoU-thresholded Hungarian segment matches, averaged.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .partonomy import BoundarySet, Level, Partonomy


def _div(a: float, b: float) -> float:
    return a / b if b else 0.0


def _f1(p: float, r: float) -> float:
    return _div(2 * p * r, p + r)


@dataclass
class HgebdScore:
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    miou: float
    f1: float
    tolerance: int
    mode: str = "literal"


def _score(tp: int, fp: int, fn: int, w: int, mode: str) -> HgebdScore:
    if tp == fp == fn == 0:
        # nothing annotated and nothing predicted
        return HgebdScore(0, 0, 0, 1.0, 1.0, 1.0, 1.0, w, mode)
    p = _div(tp, tp + fp)
    r = _div(tp, tp + fn)
    return HgebdScore(tp, fp, fn, p, r, _div(tp, tp + fp + fn), _f1(p, r), w, mode)


def hgebd(pred, gt, w: int, mode: str = "literal") -> HgebdScore:
    """Boundary detection scores at tolerance ±w frames.

    ``literal`` counts every prediction that lies within w of any ground-truth
    boundary (several predictions may hit the same one; FN is clamped at 0).
    ``one_to_one`` pairs predictions and ground truth greedily by distance,
    each boundary used at most once.
    """
    if w < 0:
        raise ValueError("tolerance must be >= 0")
    P = np.asarray(sorted(set(int(b) for b in pred)), dtype=np.int64)
    G = np.asarray(sorted(set(int(b) for b in gt)), dtype=np.int64)
    if mode == "literal":
        if P.size and G.size:
            dist = np.abs(P[:, None] - G[None, :])
            tp = int(np.sum(dist.min(axis=1) <= w))
        else:
            tp = 0
        return _score(tp, int(P.size) - tp, max(0, int(G.size) - tp), w, mode)
    if mode in ("one_to_one", "one-to-one"):
        pairs = sorted((abs(int(p) - int(g)), int(p), int(g)) for p in P for g in G
                       if abs(int(p) - int(g)) <= w)
        used_p, used_g = set(), set()
        for _, p, g in pairs:
            if p not in used_p and g not in used_g:
                used_p.add(p)
                used_g.add(g)
        tp = len(used_p)
        return _score(tp, int(P.size) - tp, int(G.size) - tp, w, "one_to_one")
    raise ValueError(f"unknown matching mode {mode!r}")


# ---------------------------------------------------------------------------
# tree edit distance


@dataclass
class Tree:
    label: str = ""
    children: List["Tree"] = field(default_factory=list)

    def size(self) -> int:
        return 1 + sum(c.size() for c in self.children)


def partonomy_tree(p: Partonomy) -> Tree:
    """Virtual root over the coarsest level; children in temporal order."""
    if not p.levels:
        raise ValueError("empty partonomy")
    nodes = [[Tree(s.label) for s in lv] for lv in p.levels]
    for i in range(1, len(p.levels)):
        for k, par in enumerate(p.parents(i)):
            if par < 0:
                raise ValueError(f"level {i} segment {k} has no parent; validate first")
            nodes[i][par].children.append(nodes[i - 1][k])
    return Tree("", list(nodes[-1]))


def _postorder(tree: Tree):
    labels: List[str] = []
    lml: List[int] = []

    # iterative postorder keeps deep trees off the Python stack
    stack = [(tree, False)]
    first_leaf: Dict[int, int] = {}
    while stack:
        node, done = stack.pop()
        if done:
            idx = len(labels)
            labels.append(node.label)
            lml.append(first_leaf[id(node.children[0])] if node.children else idx)
            first_leaf[id(node)] = lml[-1]
            continue
        stack.append((node, True))
        for c in reversed(node.children):
            stack.append((c, False))
    keyroots: Dict[int, int] = {}
    for i, l in enumerate(lml):
        keyroots[l] = i
    return labels, lml, sorted(keyroots.values())


def tree_edit_distance(a: Tree, b: Tree, alpha: float = 1.0, beta: float = 0.0) -> float:
    """Zhang-Shasha ordered tree edit distance.

    Insertions and deletions cost ``alpha``; relabelling costs ``beta`` when
    labels differ and nothing otherwise.
    """
    la, l1, kr1 = _postorder(a)
    lb, l2, kr2 = _postorder(b)
    n1, n2 = len(la), len(lb)
    td = np.zeros((n1, n2))
    for i in kr1:
        for j in kr2:
            ioff = l1[i] - 1
            joff = l2[j] - 1
            m = i - ioff + 1
            n = j - joff + 1
            fd = np.zeros((m, n))
            fd[1:, 0] = alpha * np.arange(1, m)
            fd[0, 1:] = alpha * np.arange(1, n)
            for x in range(1, m):
                xi = x + ioff
                lx = l1[xi]
                for y in range(1, n):
                    yj = y + joff
                    ly = l2[yj]
                    best = min(fd[x - 1, y] + alpha, fd[x, y - 1] + alpha)
                    if lx == l1[i] and ly == l2[j]:
                        ren = fd[x - 1, y - 1] + (beta if la[xi] != lb[yj] else 0.0)
                        fd[x, y] = min(best, ren)
                        td[xi, yj] = fd[x, y]
                    else:
                        fd[x, y] = min(best, fd[lx - 1 - ioff, ly - 1 - joff] + td[xi, yj])
    return float(td[n1 - 1, n2 - 1])


@dataclass
class TedResult:
    raw_cost: float
    ted_sim: float
    alpha: float
    beta: float
    n_pred: int
    n_gt: int


def ted(pred: Partonomy, gt: Partonomy, alpha: float = 1.0, beta: float = 0.0) -> TedResult:
    if alpha <= 0 or beta < 0:
        raise ValueError("need alpha > 0 and beta >= 0")
    ta, tb = partonomy_tree(pred), partonomy_tree(gt)
    cost = tree_edit_distance(ta, tb, alpha, beta)
    na, nb = ta.size(), tb.size()
    return TedResult(cost, 1.0 - cost / (alpha * (na + nb)), alpha, beta, na, nb)


# ---------------------------------------------------------------------------
# assignment


def hungarian(cost, maximize: bool = False) -> List[Tuple[int, int]]:
    """Optimal row->column assignment of min(rows, cols) pairs.

    Shortest augmenting path with potentials, O(n^2 m). Returns (row, col)
    pairs sorted by row.
    """
    C = np.asarray(cost, dtype=np.float64)
    if C.size == 0:
        return []
    if C.ndim != 2:
        raise ValueError("cost must be a matrix")
    if not np.all(np.isfinite(C)):
        raise ValueError("cost has non-finite entries")
    if maximize:
        C = -C
    transposed = C.shape[0] > C.shape[1]
    if transposed:
        C = C.T
    n, m = C.shape
    INF = math.inf
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    match = np.zeros(m + 1, dtype=np.int64)  # match[j] = row (1-based) on column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        match[0] = i
        j0 = 0
        minv = np.full(m + 1, INF)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = match[j0]
            free = ~used[1:]
            cur = C[i0 - 1] - u[i0] - v[1:]
            upd = free & (cur < minv[1:])
            minv[1:][upd] = cur[upd]
            way[1:][upd] = j0
            cand = np.where(free, minv[1:], INF)
            j1 = int(np.argmin(cand)) + 1
            delta = cand[j1 - 1]
            used_idx = np.flatnonzero(used)
            u[match[used_idx]] += delta
            v[used_idx] -= delta
            minv[1:][free] -= delta
            j0 = j1
            if match[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            match[j0] = match[j1]
            j0 = j1
    pairs = [(int(match[j]) - 1, j - 1) for j in range(1, m + 1) if match[j] != 0]
    if transposed:
        pairs = [(c, r) for r, c in pairs]
    return sorted(pairs)


# ---------------------------------------------------------------------------
# hierarchical F1


def iou_matrix(gt: Level, pred: Level) -> np.ndarray:
    gs = np.array([[s.start, s.end] for s in gt], dtype=np.float64).reshape(-1, 2)
    ps = np.array([[s.start, s.end] for s in pred], dtype=np.float64).reshape(-1, 2)
    inter = np.clip(np.minimum(gs[:, None, 1], ps[None, :, 1])
                    - np.maximum(gs[:, None, 0], ps[None, :, 0]), 0, None)
    union = (gs[:, 1] - gs[:, 0])[:, None] + (ps[:, 1] - ps[:, 0])[None, :] - inter
    return inter / union


@dataclass
class LevelF1:
    gt_level: int
    pred_level: int
    tp: int
    precision: float
    recall: float
    f1: float


@dataclass
class Hf1Result:
    levels: List[LevelF1]
    hf1: float
    tau: float


def level_f1(gt: Level, pred: Level, tau: float) -> Tuple[int, float, float, float]:
    iou = iou_matrix(gt, pred)
    pairs = hungarian(iou, maximize=True)
    tp = sum(1 for r, c in pairs if iou[r, c] >= tau)
    p = _div(tp, len(pred))
    r = _div(tp, len(gt))
    return tp, p, r, _f1(p, r)


def hf1(pred: Partonomy, gt: Partonomy, tau: float = 0.5,
        level_map: Optional[Sequence[int]] = None, tolerance: Optional[int] = None) -> Hf1Result:
    """Mean over ground-truth levels of the matched-segment F1.

    ``level_map[i]`` names the (1-based) predicted level compared with GT
    level i+1. Without it, levels are paired by index when the counts agree and
    by ``best_level_match`` otherwise.
    """
    if not (0 < tau <= 1):
        raise ValueError("tau must lie in (0, 1]")
    if pred.T != gt.T:
        raise ValueError(f"partonomies span {pred.T} and {gt.T} frames")
    if level_map is None:
        if len(pred) == len(gt):
            level_map = list(range(1, len(gt) + 1))
        else:
            w = tolerance if tolerance is not None else default_tolerance(gt.fps)
            level_map = [best_level_match(pred, lv, w) for lv in gt.levels]
    rows = []
    for i, (lv, j) in enumerate(zip(gt.levels, level_map), start=1):
        tp, p, r, f = level_f1(lv, pred.level(j), tau)
        rows.append(LevelF1(i, int(j), tp, p, r, f))
    return Hf1Result(rows, float(np.mean([r.f1 for r in rows])), tau)


def best_level_match(pred: Partonomy, gt_level: Level, w: int, mode: str = "literal") -> int:
    """Predicted level (1-based) with the highest boundary F1; ties go finer."""
    best, best_f1 = 1, -1.0
    for i, lv in enumerate(pred.levels, start=1):
        f = hgebd(lv.boundaries, gt_level.boundaries, w, mode).f1
        if f > best_f1:
            best, best_f1 = i, f
    return best


def default_tolerance(fps: Optional[float]) -> int:
    return max(1, int(round(fps))) if fps else 30


# ---------------------------------------------------------------------------
# reports


@dataclass
class MetricReport:
    video: str
    boundary: List[dict]       # per GT level: matched pred level + HgebdScore fields
    ted: dict
    hf1: dict
    settings: dict

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, obj: dict) -> "MetricReport":
        return cls(**{k: obj[k] for k in ("video", "boundary", "ted", "hf1", "settings")})

    def flat(self) -> Dict[str, float]:
        """Scalar columns used by the aggregate table."""
        out = {"TED": 100.0 * self.ted["ted_sim"], "hF1": 100.0 * self.hf1["hf1"]}
        for row in self.boundary:
            name = level_name(row["gt_level"], len(self.boundary))
            for key, col in (("precision", "P"), ("recall", "R"), ("miou", "mIoU"), ("f1", "F1")):
                out[f"{name}_{col}"] = 100.0 * row[key]
        return out


def level_name(i: int, n: int) -> str:
    if n == 2:
        return ("fine", "coarse")[i - 1]
    return f"L{i}"


def evaluate(pred: Partonomy, gt: Partonomy, *, tolerance: Optional[int] = None,
             mode: str = "literal", alpha: float = 1.0, beta: float = 0.0,
             tau: float = 0.5, video: str = "") -> MetricReport:
    w = tolerance if tolerance is not None else default_tolerance(gt.fps)
    boundary = []
    best = []
    for i, lv in enumerate(gt.levels, start=1):
        j = best_level_match(pred, lv, w, mode)
        best.append(j)
        sc = hgebd(pred.level(j).boundaries, lv.boundaries, w, mode)
        boundary.append({"gt_level": i, "pred_level": j, **asdict(sc)})
    t = ted(pred, gt, alpha, beta)
    h = hf1(pred, gt, tau, tolerance=w)
    settings = {"tolerance": w, "mode": mode, "alpha": alpha, "beta": beta, "tau": tau}
    return MetricReport(video, boundary, asdict(t), asdict(h), settings)


def aggregate(reports: Sequence[MetricReport]) -> Dict[str, float]:
    """Unweighted mean over videos of every scalar column."""
    if not reports:
        raise ValueError("no reports to aggregate")
    cols: Dict[str, List[float]] = {}
    for r in reports:
        for k, v in r.flat().items():
            cols.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in cols.items()}


def format_table(rows: Dict[str, Dict[str, float]]) -> str:
    """Aligned text table, one row per method/run, columns in a fixed order."""
    if not rows:
        return ""
    cols: List[str] = []
    for r in rows.values():
        for k in r:
            if k not in cols:
                cols.append(k)
    head = ["name"] + cols
    body = [[name] + [f"{r[c]:.2f}" if c in r else "-" for c in cols] for name, r in rows.items()]
    widths = [max(len(x[k]) for x in [head] + body) for k in range(len(head))]
    lines = ["  ".join(x.ljust(wd) if k == 0 else x.rjust(wd) for k, (x, wd) in enumerate(zip(line, widths)))
             for line in [head] + body]
    return "\n".join(lines) + "\n"
