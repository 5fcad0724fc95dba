"""Acceptance suite: one PASS/FAIL line per criterion.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary.  The ablation (criterion 8) takes well over an hour on one
core.
"""

import math
import time

import numpy as np
import pytest

from smn import autodiff as ad
from smn.cli import main
from smn.data import GenConfig, build_samples, generate_synthetic, sample_arrays
from smn.experiments import AblationConfig, run_ablation
from smn.fusion import fuse
from smn.gradcheck import gradcheck_all
from smn.memory import MemoryBlock, WriteState, update, write
from smn.metrics import ade, fde, nade
from smn.model import (
    VARIANTS,
    Batch,
    ModelConfig,
    SMNModel,
    hardwired_path_names,
    init_params,
    memory_path_names,
    nest_params,
    parameter_count,
)
from smn.read import GateStats, ReadHierarchy
from smn.train import evaluate, train

RESULTS: list = []


def report(number: int, name: str, ok: bool, detail: str = "") -> None:
    line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'} {name}" + (f": {detail}" if detail else "")
    RESULTS.append(line)
    print(line)
    assert ok, line


def with_biases(params, seed: int, scale: float = 0.5):
    rng = np.random.default_rng(seed)
    for name, t in params.items():
        if name.endswith(".b") or name.endswith("b_nu") or name.endswith("b_q"):
            t.data[...] = rng.uniform(-scale, scale, size=t.shape)
    return params


@pytest.fixture(scope="module")
def pool():
    scenes = generate_synthetic(GenConfig(scenes=80), seed=21)
    return build_samples(scenes, 20, 20)


# --- 1


def test_gradient_integrity():
    t0 = time.perf_counter()
    reports = gradcheck_all()
    secs = time.perf_counter() - t0
    worst = max(r.max_error for r in reports)
    failing = [f"{r.variant}:{m}" for r in reports for m in r.failing]
    ok = not failing and len(reports) == len(VARIANTS) and secs < 300
    report(1, "gradient integrity", ok, f"{len(reports)} variants, worst rel err {worst:.2e}, {secs:.0f}s"
           + (f", failing {failing}" if failing else ""))


# --- 2


def test_memory_locality():
    rng = np.random.default_rng(2)
    violations = 0
    writes = 0
    for seq in range(1000):
        width = int(rng.choice([2, 4, 8, 16]))
        dim = int(rng.integers(1, 6))
        params = with_biases(init_params(ModelConfig(variant="SMN", hidden=dim, width=width, height=width), seed=seq), seq)
        block = MemoryBlock(width, width, dim)
        state = WriteState(dim)
        with ad.no_grad():
            for _ in range(int(rng.integers(1, 12))):
                cell = tuple(int(v) for v in rng.integers(0, width, size=2))
                beta = write(params, "I", rng.normal(size=2 * dim), block.cell(*cell), state)
                new = update(block, cell, beta)
                changed = np.flatnonzero(np.any(new.cells.data != block.cells.data, axis=1))
                violations += changed.tolist() != [block.index(*cell)]
                writes += 1
                block = new
    report(2, "memory locality", violations == 0, f"{writes} writes in 1000 sequences, {violations} violations")


# --- 3


def test_hierarchy_shape(pool):
    problems = []
    for width in (2, 4, 8, 16, 32):
        levels = int(math.log2(width))
        cfg = ModelConfig(variant="SMN", hidden=8, width=width, height=width, seed=width)
        params = with_biases(init_params(cfg, seed=width), width)
        h = ReadHierarchy(params, "I.read", width, width, cfg.hidden)
        stats = GateStats()
        rng = np.random.default_rng(width)
        with ad.no_grad():
            for step in range(3):
                out = h.read(ad.Tensor(rng.normal(size=(width * width, cfg.hidden))), stats)
                if stats.merges != levels * (step + 1) or out.shape != (1, cfg.hidden):
                    problems.append(f"W={width}: {stats.merges} merges, output {out.shape}")
            model = SMNModel(cfg, params)
            model.forward_batch(Batch([sample_arrays(pool[0])], cfg), stats=stats)
        for key in ("z", "q"):
            if not (0 < stats.lo[key] and stats.hi[key] < 1):
                problems.append(f"W={width}: gate {key} in [{stats.lo[key]}, {stats.hi[key]}]")
        if not (-1 < stats.lo["h_hat"] and stats.hi["h_hat"] < 1):
            problems.append(f"W={width}: h_hat in [{stats.lo['h_hat']}, {stats.hi['h_hat']}]")
    report(3, "hierarchy shape", not problems, "; ".join(problems) or "W in 2..32 ok")


# --- 4


def test_variant_nesting(pool):
    rng = np.random.default_rng(4)
    picks = rng.choice(len(pool), size=100, replace=False)
    arrays = [sample_arrays(pool[i], with_r=True) for i in picks]
    mismatches = []
    for big, small, zeroed in [("SMN", "SHA", memory_path_names), ("SHA", "SA", hardwired_path_names),
                               ("SMN_IR", "SHA_IR", memory_path_names), ("SHA_IR", "SA_IR", hardwired_path_names)]:
        big_model = SMNModel(ModelConfig(variant=big, seed=4))
        with_biases(big_model.params, 4)
        big_model.params.zero(zeroed(big_model.config))
        small_cfg = ModelConfig(variant=small, seed=4)
        small_model = SMNModel(small_cfg, nest_params(small_cfg, big_model.params))
        a, b = big_model.predict_many(arrays), small_model.predict_many(arrays)
        bad = sum(not np.array_equal(x, y) for x, y in zip(a, b))
        if bad:
            mismatches.append(f"{big}->{small}: {bad}/100 differ")
    report(4, "variant nesting", not mismatches, "; ".join(mismatches) or "4 pairs bit-identical on 100 samples")


# --- 5


def test_fusion_convexity():
    rng = np.random.default_rng(5)
    outside = 0
    for draw in range(1000):
        l = int(rng.integers(1, 12))
        params = with_biases(init_params(ModelConfig(variant="SMN_IR", hidden=l, width=2, height=2), seed=draw), draw, 2.0)
        scale = rng.choice([0.1, 1.0, 10.0])
        h, hb_i, hb_r, _ = fuse(params, rng.normal(size=(1, l)) * scale, rng.normal(size=(1, l)) * scale, return_parts=True)
        lo, hi = np.minimum(hb_i.data, hb_r.data), np.maximum(hb_i.data, hb_r.data)
        outside += int(np.sum((h.data < lo) | (h.data > hi)))
    report(5, "fusion convexity", outside == 0, f"1000 draws, {outside} components outside the hull")


# --- 6


def brute_ade(p, t):
    return sum(math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2) for a, b in zip(p, t)) / len(t)


def brute_nade(p, t, theta):
    errs = []
    for i in range(1, len(t) - 1):
        sx, sy = t[i + 1][0] - 2 * t[i][0] + t[i - 1][0], t[i + 1][1] - 2 * t[i][1] + t[i - 1][1]
        if math.sqrt(sx * sx + sy * sy) > theta:
            errs.append(math.sqrt((p[i][0] - t[i][0]) ** 2 + (p[i][1] - t[i][1]) ** 2))
    return sum(errs) / len(errs) if errs else None


def test_metric_oracles():
    rng = np.random.default_rng(6)
    worst = 0.0
    nade_mismatch = 0
    for _ in range(1000):
        n = int(rng.integers(3, 30))
        t = np.cumsum(rng.normal(size=(n, 2)), axis=0)
        p = t + rng.normal(scale=rng.choice([0.01, 1.0, 10.0]), size=(n, 2))
        theta = float(rng.uniform(0, 2))
        worst = max(worst, abs(ade(p, t) - brute_ade(p, t)))
        worst = max(worst, abs(fde(p, t) - math.sqrt((p[-1][0] - t[-1][0]) ** 2 + (p[-1][1] - t[-1][1]) ** 2)))
        got, want = nade(p, t, theta=theta), brute_nade(p, t, theta)
        if (got is None) != (want is None):
            nade_mismatch += 1
        elif got is not None:
            worst = max(worst, abs(got - want))
    zero = np.zeros((20, 2))
    exact = ade(zero + [3.0, 4.0], zero) == 5.0 and fde(zero + [3.0, 4.0], zero) == 5.0
    ok = worst <= 1e-12 and nade_mismatch == 0 and exact
    report(6, "metric oracles", ok, f"max abs diff {worst:.1e}, n-ADE presence mismatches {nade_mismatch}, (3,4) -> 5.0 {exact}")


# --- 7


def test_overfit(pool):
    data = [sample_arrays(s) for s in pool[:10]]
    model = SMNModel(ModelConfig(variant="SMN", width=16, height=16, hidden=30, seed=0, epochs=500, lr=1e-2,
                                 accum=10, patience=10**6))
    t0 = time.perf_counter()
    res = train(model, data, stop_train_ade=0.02, max_seconds=600)
    secs = time.perf_counter() - t0
    final = evaluate(model, data, normalized=True).ade
    ok = final < 0.02 and len(res.log) <= 500 and secs < 600
    report(7, "overfit capability", ok, f"train ADE {final:.4f} after {len(res.log)} epochs, {secs:.0f}s")


# --- 8


def test_directional_ablation():
    cfg = AblationConfig()
    t0 = time.perf_counter()
    res = run_ablation(cfg, report=print)
    secs = time.perf_counter() - t0
    smn_vs_sha = res.wins("SMN", "SHA")
    ir_vs_i = res.wins("SMN_IR", "SMN")
    table = ", ".join(f"{v}/{s}={a:.4f}" for (v, s), a in sorted(res.test_ade.items(), key=lambda kv: (kv[0][1], kv[0][0])))
    ok = smn_vs_sha >= 4 and ir_vs_i >= 3 and secs < 7200
    report(8, "directional ablation", ok,
           f"SMN<SHA {smn_vs_sha}/5, SMN_IR<SMN {ir_vs_i}/5, {secs / 60:.0f} min ({table})")


# --- 9


def test_parameter_count():
    cfg = ModelConfig(variant="SMN", hidden=30, width=128, height=128)
    n = parameter_count(cfg)
    stable = n == parameter_count(ModelConfig(variant="SMN", hidden=30, width=128, height=128)) == SMNModel(cfg).params.count()
    report(9, "parameter count", 5e4 <= n <= 5e5 and stable, f"{n} parameters")


# --- 10


def test_throughput():
    scenes = generate_synthetic(GenConfig(scenes=300), seed=10)
    arrays = [sample_arrays(s) for s in build_samples(scenes, 20, 20)]
    arrays = (arrays * (1000 // len(arrays) + 1))[:1000]
    model = SMNModel(ModelConfig(variant="SMN", width=16, height=16, seed=10))
    t0 = time.perf_counter()
    preds = model.predict_many(arrays, batch_size=100)
    secs = time.perf_counter() - t0
    ok = len(preds) == 1000 and all(p.shape == (20, 2) for p in preds) and secs < 60
    report(10, "throughput", ok, f"1000 x 20-step predictions in {secs:.1f}s")


# --- 11


def test_determinism(tmp_path):
    data = tmp_path / "data"
    assert main(["generate", "--scenes", "8", "--seed", "11", "--out", str(data)]) == 0
    for run in ("a", "b"):
        code = main(["train", "--variant", "smn", "--epochs", "2", "--seed", "11", "--data", str(data),
                     "--out", str(tmp_path / run)])
        assert code == 0
    logs = [(tmp_path / r / "train_log.csv").read_text().splitlines() for r in ("a", "b")]
    same_loss = logs[0][1].split(",")[1] == logs[1][1].split(",")[1]
    same_ckpt = (tmp_path / "a" / "checkpoint.json").read_bytes() == (tmp_path / "b" / "checkpoint.json").read_bytes()
    report(11, "determinism", same_loss and same_ckpt, f"epoch-1 loss equal {same_loss}, checkpoints equal {same_ckpt}")
