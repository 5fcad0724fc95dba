"""Training loop, evaluation over samples, and numeric diagnostics."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .data import denormalize, substream
from .errors import ContractError, NumericError
from .metrics import EvalReport, default_theta
from .model import Batch, SMNModel, loss

log = logging.getLogger(__name__)

LOG_FIELDS = ("epoch", "train_loss", "val_ade", "val_fde", "val_nade", "seconds")


def evaluate(model: SMNModel, samples, normalized: bool = False, theta_factor: float | None = None,
             batch_size: int = 32, predictions: list | None = None) -> EvalReport:
    """Metrics of ``model`` on ``samples`` (``SampleArrays``).

    Distances are in original units unless ``normalized``.  A non-negative
    ``theta_factor`` replaces the default n-ADE threshold factor.
    """
    samples = list(samples)
    preds = model.predict_many(samples, batch_size) if predictions is None else predictions
    report = EvalReport()
    for a, p in zip(samples, preds):
        truth = a.gt_pred
        if not normalized:
            p, truth = denormalize(p, a.extent), denormalize(truth, a.extent)
        theta = None
        if theta_factor is not None and theta_factor >= 0:
            theta = default_theta(truth, theta_factor)
        report.add(a.sample_id, p, truth, theta)
    return report


def module_grad_norms(params, grads: dict) -> dict:
    """L2 norm of the gradient per parameter module (NaN-aware)."""
    out: dict = {}
    for name, t in params.items():
        g = grads.get(t)
        if g is None:
            continue
        mod = params.module_of(name)
        out[mod] = out.get(mod, 0.0) + float(np.sum(g * g))
    return {k: math.sqrt(v) for k, v in out.items()}


@dataclass
class TrainResult:
    model: SMNModel
    log: list = field(default_factory=list)
    best_epoch: int = 0
    best_val_ade: float | None = None
    stopped: str = "epochs"


def _write_log(rows: list, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(LOG_FIELDS)
        for r in rows:
            w.writerow(["" if r[k] is None else (repr(r[k]) if isinstance(r[k], float) else r[k]) for k in LOG_FIELDS])


def train(model: SMNModel, train_samples, val_samples=None, log_path=None, checkpoint_path=None,
          stop_train_ade: float | None = None, max_seconds: float | None = None, on_epoch=None) -> TrainResult:
    """Adam on the mean squared displacement, ``config.accum`` samples per update.

    The samples of one update are run as a single batch; this equals
    accumulating their per-sample gradients.  Each epoch visits the training
    samples in an order drawn from the seed's "shuffle" sub-stream.  With
    validation samples the parameters of the best validation ADE epoch are
    kept and training stops after ``config.patience`` epochs without
    improvement.  ``stop_train_ade`` ends training once the training ADE
    (normalized units) drops below it.
    """
    cfg = model.config
    train_samples = list(train_samples)
    val_samples = list(val_samples or [])
    if not train_samples:
        raise ContractError("training split is empty")
    rng = substream(cfg.seed, "shuffle")
    params = model.params
    plist = params.tensors()
    opt = ad.Adam(plist, lr=cfg.lr)
    result = TrainResult(model)
    best = params.copy_values()
    best_ade = math.inf
    since_best = 0
    start = time.perf_counter()
    n = len(train_samples)

    for epoch in range(1, cfg.epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(n)
        total = 0.0
        for i in range(0, n, cfg.accum):
            chunk = [train_samples[j] for j in order[i:i + cfg.accum]]
            batch = Batch(chunk, cfg)
            try:
                L = loss(model.forward_batch(batch), batch.gt_pred)
            except NumericError as e:
                bad = sorted({params.module_of(k) for k, t in params.items() if not np.all(np.isfinite(t.data))})
                raise NumericError(f"{e} at epoch {epoch}; non-finite parameters in: {', '.join(bad) or 'none'}") from e
            grads = ad.backward(L, accumulate=False)
            value = float(L.data)
            if not math.isfinite(value) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                norms = module_grad_norms(params, grads)
                detail = ", ".join(f"{k}={v:.3g}" for k, v in norms.items())
                raise NumericError(f"non-finite loss {value} at epoch {epoch}; gradient norms: {detail}")
            scale = 1.0
            if cfg.clip_norm > 0:
                gn = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if gn > cfg.clip_norm:
                    scale = cfg.clip_norm / gn
            for p in plist:
                p.grad = grads.get(p)
            opt.step(scale)
            total += value * len(chunk)
        row = {"epoch": epoch, "train_loss": total / n, "val_ade": None, "val_fde": None, "val_nade": None}
        if val_samples:
            rep = evaluate(model, val_samples, theta_factor=cfg.nl_theta)
            row.update(val_ade=rep.ade, val_fde=rep.fde, val_nade=rep.nade)
            if rep.ade < best_ade:
                best_ade, best, since_best = rep.ade, params.copy_values(), 0
                result.best_epoch = epoch
            else:
                since_best += 1
        else:
            best, result.best_epoch = params.copy_values(), epoch
        row["seconds"] = time.perf_counter() - t0
        result.log.append(row)
        log.info("epoch %d train_loss %.6g val_ade %s", epoch, row["train_loss"], row["val_ade"])
        if on_epoch is not None:
            on_epoch(row, model)
        if log_path is not None:
            _write_log(result.log, log_path)
        if val_samples and since_best >= cfg.patience:
            result.stopped = "patience"
            break
        if stop_train_ade is not None and evaluate(model, train_samples, normalized=True).ade < stop_train_ade:
            best, result.best_epoch = params.copy_values(), epoch
            result.stopped = "target"
            break
        if max_seconds is not None and time.perf_counter() - start > max_seconds:
            result.stopped = "time"
            break

    params.load_values(best)
    result.best_val_ade = best_ade if val_samples and math.isfinite(best_ade) else None
    if log_path is not None:
        _write_log(result.log, log_path)
    if checkpoint_path is not None:
        checkpoint.save(model, checkpoint_path, {"best_epoch": result.best_epoch, "stopped": result.stopped})
    return result
