"""Desk-scale synthetic benchmark shared by the scripts and the acceptance tests."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .baselines import BaselineConfig, build_baseline_partonomy, fixed_length
from .boundaries import BoundaryConfig, extract_boundaries
from .datasets import FeatureSequence, SynthConfig, generate_synthetic
from .metrics import MetricReport, aggregate, evaluate
from .partonomy import Partonomy, from_boundaries, validate
from .stack import EnergyTrace, StackConfig, StackParams, infer_stream, train_stream

log = logging.getLogger(__name__)


@dataclass
class BenchmarkConfig:
    n_videos: int = 30
    n_train: int = 20
    durations: Tuple[float, ...] = (20.0, 100.0, 400.0)
    length: int = 2000
    dim: int = 16
    separation: float = 1.0
    noise_ratio: float = 0.5     # noise sigma as a fraction of the separation scale
    fps: float = 15.0
    data_seed: int = 7
    model_seed: int = 0
    hidden: int = 32
    memory: int = 5
    sparsity: float = 0.01
    tolerance: int = 5
    tau: float = 0.5

    radius_fraction: float = 0.25  # peak radius per level, as a fraction of its mean duration
    smoothing: int = 3

    def boundary_config(self) -> BoundaryConfig:
        return BoundaryConfig.from_durations(self.durations, self.radius_fraction, self.smoothing)

    def synth(self, k: int) -> SynthConfig:
        return SynthConfig(durations=self.durations, length=self.length, dim=self.dim,
                           separation=self.separation, noise=self.noise_ratio * self.separation,
                           fps=self.fps, seed=self.data_seed * 1000 + k)


@dataclass
class BenchmarkResult:
    train_trace: EnergyTrace
    params: StackParams
    stack: StackConfig
    test: List[Tuple[FeatureSequence, Partonomy]]
    traces: List[np.ndarray]
    boundary_cfg: BoundaryConfig
    predictions: Dict[str, List[Partonomy]] = field(default_factory=dict)
    reports: Dict[str, List[MetricReport]] = field(default_factory=dict)
    seconds: float = 0.0

    def summary(self) -> Dict[str, Dict[str, float]]:
        return {name: aggregate(r) for name, r in self.reports.items()}

    def energy_drop(self) -> Tuple[float, float]:
        e = self.train_trace.energy
        n = max(1, len(e) // 10)
        return float(e[:n].mean()), float(e[-n:].mean())


def make_dataset(cfg: BenchmarkConfig) -> List[Tuple[FeatureSequence, Partonomy]]:
    return [generate_synthetic(cfg.synth(k)) for k in range(cfg.n_videos)]


def parse_predictions(traces: Sequence[np.ndarray], test, bcfg: BoundaryConfig) -> List[Partonomy]:
    out = []
    for tr, (fs, _) in zip(traces, test):
        out.append(from_boundaries(extract_boundaries(tr, bcfg), fs.T, fs.fps))
    return out


def run_benchmark(cfg: BenchmarkConfig = BenchmarkConfig(),
                  data: Optional[List[Tuple[FeatureSequence, Partonomy]]] = None) -> BenchmarkResult:
    t0 = time.perf_counter()
    data = make_dataset(cfg) if data is None else data
    train, test = data[:cfg.n_train], data[cfg.n_train:]
    stack = StackConfig.build(cfg.dim, 3, cfg.hidden, cfg.memory, sparsity=cfg.sparsity)
    params, trace = train_stream([fs for fs, _ in train], stack, seed=cfg.model_seed)
    log.info("trained on %d videos in %.1fs", len(train), time.perf_counter() - t0)

    traces = [infer_stream(fs, params, stack) for fs, _ in test]
    bcfg = cfg.boundary_config()
    res = BenchmarkResult(trace, params, stack, test, traces, bcfg)
    res.predictions["stack"] = parse_predictions(traces, test, bcfg)

    # baselines configured from the training split's ground truth
    mean_counts = [int(round(np.mean([len(gt.level(i)) for _, gt in train]))) for i in (1, 2, 3)]
    res.predictions["Fixed"] = [fixed_length(fs.T, fs.fps, cfg.durations) for fs, _ in test]
    kcfg = BaselineConfig(counts=tuple(mean_counts), seed=cfg.model_seed)
    res.predictions["K-means"] = [build_baseline_partonomy(fs, kcfg, "kmeans") for fs, _ in test]

    for name, preds in res.predictions.items():
        res.reports[name] = [evaluate(p, gt, tolerance=cfg.tolerance, tau=cfg.tau, video=f"test{k}")
                             for k, (p, (_, gt)) in enumerate(zip(preds, test))]
    res.seconds = time.perf_counter() - t0
    return res


def all_valid(preds: Sequence[Partonomy]) -> bool:
    return all(not validate(p) for p in preds)
