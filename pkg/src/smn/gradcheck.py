"""Finite-difference check of every parameter gradient on a tiny two-pedestrian sample."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .data import Sample, Scene, Trajectory, sample_arrays, substream
from .model import VARIANTS, Batch, ModelConfig, SMNModel, loss

TOLERANCE = 1e-4
STEP = 1e-5


def micro_sample(seed: int = 1):
    """Two pedestrians over 4 I frames (2 observed, 2 predicted) plus a half-rate R stream."""
    rng = substream(seed, "gradcheck")
    extent = (0.0, 1.0, 0.0, 1.0)
    frames = np.arange(4)
    start = rng.uniform(0.2, 0.8, size=(2, 2))
    vel = rng.uniform(-0.08, 0.08, size=(2, 2))
    bend = rng.uniform(-0.02, 0.02, size=(2, 2))
    tracks = [start[p] + np.outer(frames, vel[p]) + np.outer(frames ** 2, bend[p]) for p in range(2)]
    scene_i = Scene(0, "I", [Trajectory(p, frames, tracks[p]) for p in range(2)], extent, 10.0)
    noise = rng.normal(0.0, 0.01, size=(2, 2, 2))
    scene_r = Scene(0, "R", [Trajectory(p, [0, 1], tracks[p][[0, 2]] + noise[p]) for p in range(2)], extent, 5.0)
    sample = Sample("micro:0:0", 0, 0, frames.copy(), scene_i, scene_r, 2, 2)
    return sample_arrays(sample, with_r=True)


def micro_config(variant: str, seed: int = 1) -> ModelConfig:
    return ModelConfig(variant=variant, hidden=8, width=4, height=4, obs=2, pred=2, seed=seed)


@dataclass
class GradcheckReport:
    variant: str
    tolerance: float
    module_errors: dict = field(default_factory=dict)
    param_errors: dict = field(default_factory=dict)

    @property
    def failing(self) -> list:
        return [m for m, e in self.module_errors.items() if not e <= self.tolerance]

    @property
    def passed(self) -> bool:
        return not self.failing

    @property
    def max_error(self) -> float:
        return max(self.module_errors.values(), default=0.0)

    def lines(self) -> list:
        out = []
        for m, e in self.module_errors.items():
            status = "ok" if e <= self.tolerance else "FAIL"
            out.append(f"{self.variant:<7} {m:<12} max_rel_err {e:.3e} {status}")
        return out


def check_model(model: SMNModel, arrays, tolerance: float = TOLERANCE, step: float = STEP) -> GradcheckReport:
    """Compare analytic and central-difference gradients of the loss for every parameter."""
    batch = Batch([arrays], model.config)

    def f() -> float:
        with ad.no_grad():
            return float(loss(model.forward_batch(batch), batch.gt_pred).data)

    L = loss(model.forward_batch(batch), batch.gt_pred)
    grads = ad.backward(L, accumulate=False)
    report = GradcheckReport(model.config.variant, tolerance)
    for name, t in model.params.items():
        analytic = grads.get(t, np.zeros_like(t.data))
        numeric = ad.numerical_gradient(f, t, step)
        err = ad.relative_error(analytic, numeric)
        report.param_errors[name] = err
        mod = model.params.module_of(name)
        report.module_errors[mod] = max(report.module_errors.get(mod, 0.0), err)
    return report


def gradcheck(variant: str, seed: int = 1, tolerance: float = TOLERANCE, step: float = STEP) -> GradcheckReport:
    cfg = micro_config(variant, seed)
    return check_model(SMNModel(cfg), micro_sample(seed), tolerance, step)


def gradcheck_all(seed: int = 1, variants=VARIANTS, tolerance: float = TOLERANCE) -> list:
    return [gradcheck(v, seed, tolerance) for v in variants]
