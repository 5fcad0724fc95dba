"""Seeded variant-comparison runs on one synthetic dataset."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .data import GenConfig, build_samples, generate_synthetic, sample_arrays, split
from .model import ModelConfig, SMNModel
from .train import evaluate, train


@dataclass
class AblationConfig:
    scenes: int = 500
    data_seed: int = 0
    seeds: tuple = (0, 1, 2, 3, 4)
    variants: tuple = ("SHA", "SMN", "SMN_IR")
    width: int = 8
    hidden: int = 30
    epochs: int = 5
    lr: float = 3e-3
    accum: int = 16
    patience: int = 10
    ratios: tuple = (0.7, 0.25, 0.05)
    gen: GenConfig = field(default_factory=GenConfig)


@dataclass
class AblationResult:
    test_ade: dict = field(default_factory=dict)  # (variant, seed) -> ADE
    seconds: dict = field(default_factory=dict)
    n_train: int = 0
    n_test: int = 0

    def wins(self, better: str, worse: str) -> int:
        seeds = sorted({s for v, s in self.test_ade if v == better} & {s for v, s in self.test_ade if v == worse})
        return sum(self.test_ade[(better, s)] < self.test_ade[(worse, s)] for s in seeds)


def datasets(cfg: AblationConfig) -> dict:
    """``{with_r: (train, test, val)}`` sample arrays from one generated dataset."""
    gen = GenConfig(**{**cfg.gen.__dict__, "scenes": cfg.scenes})
    scenes = generate_synthetic(gen, cfg.data_seed)
    parts = split(scenes, cfg.ratios, cfg.data_seed)
    out = {}
    for with_r in (False, True):
        out[with_r] = tuple([sample_arrays(s, with_r=with_r) for s in build_samples(p, 20, 20)] for p in parts)
    return out


def run_ablation(cfg: AblationConfig, report=None) -> AblationResult:
    data = datasets(cfg)
    res = AblationResult(n_train=len(data[False][0]), n_test=len(data[False][1]))
    for seed in cfg.seeds:
        for v in cfg.variants:
            mcfg = ModelConfig(variant=v, width=cfg.width, height=cfg.width, hidden=cfg.hidden, seed=seed,
                               epochs=cfg.epochs, lr=cfg.lr, accum=cfg.accum, patience=cfg.patience)
            tr, te, va = data[v.endswith("_IR")]
            t0 = time.perf_counter()
            model = SMNModel(mcfg)
            train(model, tr, va)
            ade = evaluate(model, te).ade
            res.test_ade[(v, seed)] = ade
            res.seconds[(v, seed)] = time.perf_counter() - t0
            if report is not None:
                report(f"seed {seed} {v:<7} test ADE {ade:.4f} ({res.seconds[(v, seed)]:.0f}s)")
    return res
