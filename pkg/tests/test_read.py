import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smn import autodiff as ad
from smn.errors import ConfigError, ContractError
from smn.model import ModelConfig, init_params
from smn.read import GateStats, ReadHierarchy, cell_step, compose, compose_grid, compose_group, n_levels, read

L = 3


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def make_params(width=4, hidden=L, seed=5, biases=True):
    p = init_params(ModelConfig(variant="SMN", hidden=hidden, width=width, height=width), seed=seed)
    if biases:
        rng = np.random.default_rng(seed)
        for name, t in p.items():
            if ".read." in name and (name.endswith(".b") or name.endswith(".b_q")):
                t.data[...] = rng.uniform(-0.5, 0.5, size=t.shape)
    return p


# --- cell_step


def test_zero_weights_cell_step():
    p = make_params(biases=False)
    p.zero([n for n in p if ".read.0." in n])
    stats = GateStats()
    h = cell_step(p, "I.read.0", ad.Tensor(np.ones((4, L))), ad.Tensor(np.zeros((4, L))), stats)
    assert np.array_equal(h.data, np.zeros((4, L)))
    assert stats.lo["z"] == stats.hi["z"] == 0.5


def test_closed_gate_keeps_previous_state(rng):
    p = make_params()
    p["I.read.0.b"].data[:L] = -1e3
    h_prev = rng.uniform(-0.9, 0.9, size=(2, L))
    h = cell_step(p, "I.read.0", ad.Tensor(rng.normal(size=(2, L))), ad.Tensor(h_prev))
    assert np.array_equal(h.data, h_prev)


def test_scalar_cell_step():
    p = make_params(hidden=1)
    pre = "I.read.0"
    p[f"{pre}.W_m"].data[...] = [[0.7, -0.4]]
    p[f"{pre}.W_h"].data[...] = [[0.2, 0.9]]
    p[f"{pre}.b"].data[...] = [0.1, -0.3]
    m, hp = 0.8, -0.35
    z = 1 / (1 + math.exp(-(0.7 * m + 0.2 * hp + 0.1)))
    o = math.tanh(-0.4 * m + 0.9 * hp - 0.3)
    got = cell_step(p, pre, ad.Tensor([[m]]), ad.Tensor([[hp]])).data[0, 0]
    assert got == pytest.approx(z * o + (1 - z) * hp, abs=1e-15)


# --- composition


def test_compose_zero_groups():
    p = make_params()
    assert np.array_equal(compose_group(p, "I.read.0", *[np.zeros(L)] * 4).data, np.zeros(L))


def test_compose_zero_weights_is_half_tanh_sum(rng):
    p = make_params()
    p.zero(["I.read.0.W_q", "I.read.0.b_q"])
    hs = rng.uniform(-1, 1, size=(4, L))
    assert np.allclose(compose_group(p, "I.read.0", *hs).data, 0.5 * np.tanh(hs).sum(axis=0))


def test_scalar_compose_direct_formula():
    p = make_params(hidden=1)
    wq = np.array([0.3, -0.8, 0.5, 0.2])
    p["I.read.0.W_q"].data[:, 0] = wq
    p["I.read.0.b_q"].data[...] = 0.1
    h = [0.4, -0.6, 0.2, 0.9]  # (x,y), (x+1,y), (x,y+1), (x+1,y+1)
    expect = 0.0
    for pos in range(4):
        # (self, x-neighbour, y-neighbour, diagonal) relative to pos
        ctx = [h[pos], h[pos ^ 1], h[pos ^ 2], h[pos ^ 3]]
        q = 1 / (1 + math.exp(-(float(np.dot(wq, ctx)) + 0.1)))
        expect += math.tanh(h[pos]) * q
    assert compose_group(p, "I.read.0", *[[v] for v in h]).data[0] == pytest.approx(expect, abs=1e-15)


def test_compose_grid_matches_explicit_groups(rng):
    p = make_params(width=8)
    size = 8
    h = rng.uniform(-1, 1, size=(size * size, L))
    grid = compose_grid(p, "I.read.0", ad.Tensor(h), size).data
    half = size // 2
    for gx in range(half):
        for gy in range(half):
            rows = [(2 * gx + dx) * size + (2 * gy + dy) for dx, dy in [(0, 0), (1, 0), (0, 1), (1, 1)]]
            one = compose(p, "I.read.0", ad.Tensor(h[rows][None])).data[0]
            assert np.allclose(grid[gx * half + gy], one, atol=1e-15)


def test_compose_gradients(rng):
    p = make_params()
    G = ad.parameter(rng.uniform(-1, 1, size=(4, 4, L)))
    probe = rng.normal(size=(4, L))

    def f():
        with ad.no_grad():
            return float(np.sum(compose_grid(p, "I.read.0", ad.Tensor(G.data.reshape(16, L)), 4).data * probe))

    loss = ad.tsum(ad.mul(compose_grid(p, "I.read.0", ad.reshape(G, (16, L)), 4), probe))
    grads = ad.backward(loss, accumulate=False)
    for t in (G, p["I.read.0.W_q"], p["I.read.0.b_q"]):
        assert ad.relative_error(grads[t], ad.numerical_gradient(f, t)) < 1e-6


# --- hierarchy


@pytest.mark.parametrize("width, levels", [(2, 1), (4, 2), (8, 3), (16, 4)])
def test_level_count(width, levels):
    assert n_levels(width, width) == levels
    h = ReadHierarchy(make_params(width=width), "I.read", width, width, L)
    assert [s.shape[0] for s in h.states] == [(width >> j) ** 2 for j in range(levels)]
    stats = GateStats()
    out = h.read(ad.Tensor(np.zeros((width * width, L))), stats)
    assert out.shape == (1, L) and stats.merges == levels


@pytest.mark.parametrize("w, h", [(4, 8), (6, 6), (0, 0)])
def test_bad_grids(w, h):
    with pytest.raises(ConfigError):
        n_levels(w, h)


def test_two_by_two_is_one_compose(rng):
    p = make_params(width=2)
    cells = rng.normal(size=(4, L))
    out = read(ad.Tensor(cells), ReadHierarchy(p, "I.read", 2, 2, L)).data
    hat = cell_step(p, "I.read.0", ad.Tensor(cells), ad.Tensor(np.zeros((4, L))))
    # grid rows are x-major: (0,0), (0,1), (1,0), (1,1)
    assert np.allclose(out, compose_group(p, "I.read.0", *hat.data[[0, 2, 1, 3]]).data, atol=1e-15)


def test_zero_memory_closed_form():
    p = make_params(width=4)
    out = read(ad.Tensor(np.zeros((16, L))), ReadHierarchy(p, "I.read", 4, 4, L)).data
    # with zero input and zero state every position of a layer sees the same values
    x = np.zeros(L)
    for j in range(2):
        pre = f"I.read.{j}"
        W_m, b = p[f"{pre}.W_m"].data, p[f"{pre}.b"].data
        a = x @ W_m + b
        hat = sig(a[:L]) * np.tanh(a[L:])
        q = sig(np.tile(hat, 4) @ p[f"{pre}.W_q"].data + p[f"{pre}.b_q"].data)
        x = 4 * np.tanh(hat) * q
    assert np.allclose(out, x, atol=1e-14)
    assert np.all(np.abs(out) < 4)


def test_batched_read_matches_single(rng):
    p = make_params(width=4)
    a, b = rng.normal(size=(16, L)), rng.normal(size=(16, L))
    both = ReadHierarchy(p, "I.read", 4, 4, L, batch=2)
    one_a = ReadHierarchy(p, "I.read", 4, 4, L)
    one_b = ReadHierarchy(p, "I.read", 4, 4, L)
    for _ in range(2):
        out = both.read(ad.Tensor(np.concatenate([a, b]))).data
        assert np.allclose(out[0], read(ad.Tensor(a), one_a).data, atol=1e-15)
        assert np.allclose(out[1], read(ad.Tensor(b), one_b).data, atol=1e-15)


def test_module_read_refuses_batches():
    p = make_params(width=2)
    with pytest.raises(ContractError):
        read(ad.Tensor(np.zeros((8, L))), ReadHierarchy(p, "I.read", 2, 2, L, batch=2))


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 20.0))
def test_activation_ranges(seed, scale):
    rng = np.random.default_rng(seed)
    p = make_params(width=4, seed=seed % 100)
    h = ReadHierarchy(p, "I.read", 4, 4, L)
    stats = GateStats()
    for _ in range(3):
        h.read(ad.Tensor(rng.normal(size=(16, L)) * scale), stats)
    for key in ("z", "q"):
        assert 0 <= stats.lo[key] and stats.hi[key] <= 1
    assert -1 < stats.lo["h_hat"] and stats.hi["h_hat"] < 1
    assert -4 < stats.lo["h_read"] and stats.hi["h_read"] < 4


def test_locality_of_influence(rng):
    p = make_params(width=8)
    cells = rng.normal(size=(64, L))
    base = ReadHierarchy(p, "I.read", 8, 8, L)
    base.read(ad.Tensor(cells))
    x, y = 5, 2
    bumped = cells.copy()
    bumped[x * 8 + y] += 1.0
    other = ReadHierarchy(p, "I.read", 8, 8, L)
    other.read(ad.Tensor(bumped))
    for j in range(3):
        size = 8 >> j
        changed = np.flatnonzero(np.any(base.states[j].data != other.states[j].data, axis=1))
        assert changed.tolist() == [(x >> j) * size + (y >> j)]


def test_gradient_reaches_every_cell(rng):
    p = make_params(width=4)
    cells = ad.parameter(rng.normal(size=(16, L)))
    out = read(cells, ReadHierarchy(p, "I.read", 4, 4, L))
    ad.backward(ad.tsum(out))

    def f():
        with ad.no_grad():
            return float(read(ad.Tensor(cells.data), ReadHierarchy(p, "I.read", 4, 4, L)).data.sum())

    num = ad.numerical_gradient(f, cells)
    assert ad.relative_error(cells.grad, num) < 1e-6
    assert np.all(np.linalg.norm(num, axis=1) > 0)
