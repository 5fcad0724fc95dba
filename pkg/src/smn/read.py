"""Hierarchical memory read with structured LSTM (St-LSTM) cells.

Layer ``j`` holds one recurrent cell per position of a ``(W >> j) x (H >> j)``
grid.  Each cell updates its hidden state from its input, then every 2x2
group is merged through per-position composition gates into one vector of
the next layer's input grid.  After ``log2 W`` merges one vector remains.

Weights are shared within a layer; hidden states are per position.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError
from .memory import is_power_of_two

# Group member p's composition input lists the members p ^ r for r = 0..3,
# i.e. (self, x-neighbour, y-neighbour, diagonal) relative to p.
_GROUP_PERMS = [np.array([p ^ r for p in range(4)]) for r in range(4)]


def n_levels(width: int, height: int) -> int:
    if width != height or not is_power_of_two(width):
        raise ConfigError(f"read hierarchy needs a square power-of-two grid, got {width}x{height}")
    return int(width).bit_length() - 1


def cell_step(params, prefix: str, m: Tensor, h_prev: Tensor, stats=None) -> Tensor:
    """z = sig(W_z[m, h]); o = tanh(W_o[m, h]); h' = z*o + (1-z)*h.  Rows are grid positions."""
    l = h_prev.shape[-1]
    pre = ad.linear([(m, params[f"{prefix}.W_m"]), (h_prev, params[f"{prefix}.W_h"])], params[f"{prefix}.b"])
    h = ad.gated_update(pre, h_prev)
    if stats is not None:
        stats.see("z", ad._sigmoid(pre.data[..., :l]))
        stats.see("h_hat", h.data)
    return h


def _group(a: np.ndarray, size: int) -> np.ndarray:
    l = a.shape[-1]
    half = size // 2
    return a.reshape(-1, 2, half, 2, l).transpose(0, 2, 3, 1, 4).reshape(-1, 4, l)


def _ungroup(g: np.ndarray, size: int) -> np.ndarray:
    l = g.shape[-1]
    half = size // 2
    return g.reshape(-1, half, 2, 2, l).transpose(0, 3, 1, 2, 4).reshape(-1, l)


def _compose_op(x: Tensor, W_q: Tensor, b_q: Tensor, size: int | None, stats=None) -> Tensor:
    """Fused composition gate.  ``x`` is ``(G, 4, l)`` groups, or stacked x-major
    ``(size*size, l)`` grids when ``size`` is given."""
    G = x.data if size is None else _group(x.data, size)
    l = G.shape[-1]
    if W_q.shape != (4 * l, l) or b_q.shape != (l,):
        raise ConfigError(f"composition weights {W_q.shape}/{b_q.shape} do not fit width {l}")
    X = np.concatenate([G[:, perm] for perm in _GROUP_PERMS], axis=-1)
    q = ad._sigmoid(X @ W_q.data + b_q.data)
    th = np.tanh(G)
    out = (th * q).sum(axis=1)
    if stats is not None:
        stats.see("q", q)

    def back(gs):
        g = gs[0][:, None, :]
        dpre = g * th * q * (1.0 - q)
        dX = dpre @ W_q.data.T
        dG = g * q * (1.0 - th * th)
        for r, perm in enumerate(_GROUP_PERMS):
            dG += dX[:, perm, r * l:(r + 1) * l]
        dW = X.reshape(-1, 4 * l).T @ dpre.reshape(-1, l)
        db = dpre.reshape(-1, l).sum(axis=0)
        return (dG if size is None else _ungroup(dG, size)), dW, db

    return ad.record(out, (x, W_q, b_q), back)


def compose(params, prefix: str, groups: Tensor, stats=None) -> Tensor:
    """Merge ``(G, 4, l)`` groups ordered [(x,y), (x+1,y), (x,y+1), (x+1,y+1)] into ``(G, l)``.

    Member p is gated by ``q_p = sig(W_q [g_p, g_(p^1), g_(p^2), g_(p^3)] + b_q)``
    and the merged vector is ``sum_p tanh(g_p) * q_p``.
    """
    return _compose_op(ad.as_tensor(groups), params[f"{prefix}.W_q"], params[f"{prefix}.b_q"], None, stats)


def compose_grid(params, prefix: str, h: Tensor, size: int, stats=None) -> Tensor:
    """:func:`compose` applied to the 2x2 groups of an x-major ``(size*size, l)`` grid."""
    return _compose_op(h, params[f"{prefix}.W_q"], params[f"{prefix}.b_q"], size, stats)


def compose_group(params, prefix: str, h00, h10, h01, h11) -> Tensor:
    """Merged vector of one 2x2 group given its four cell hidden states."""
    G = ad.stack([ad.reshape(ad.as_tensor(h), (-1,)) for h in (h00, h10, h01, h11)], axis=0)
    l = G.shape[-1]
    return ad.reshape(compose(params, prefix, ad.reshape(G, (1, 4, l))), (l,))


def to_groups(h: Tensor, size: int) -> Tensor:
    """``(size*size, l)`` grid rows (x-major) -> ``(size/2 * size/2, 4, l)`` 2x2 groups."""
    l = h.shape[-1]
    half = size // 2
    g = ad.reshape(h, (half, 2, half, 2, l))
    g = ad.transpose(g, (0, 2, 3, 1, 4))
    return ad.reshape(g, (half * half, 4, l))


class GateStats:
    """Running min/max of gate and hidden activations plus merge/layer bookkeeping."""

    def __init__(self):
        self.lo: dict = {}
        self.hi: dict = {}
        self.merges = 0
        self.layer_norms: list = []

    def see(self, key: str, arr: np.ndarray) -> None:
        lo, hi = float(arr.min()), float(arr.max())
        self.lo[key] = min(self.lo.get(key, lo), lo)
        self.hi[key] = max(self.hi.get(key, hi), hi)


class ReadHierarchy:
    """Read state over ``batch`` stacked ``width x width`` memories of ``dim``-vectors."""

    def __init__(self, params, prefix: str, width: int, height: int, dim: int, batch: int = 1):
        self.levels = n_levels(width, height)
        self.params = params
        self.prefix = prefix
        self.width = width
        self.dim = dim
        self.batch = batch
        self.states = [Tensor(np.zeros((batch * (width >> j) ** 2, dim))) for j in range(self.levels)]

    def read(self, cells: Tensor, stats: GateStats | None = None) -> Tensor:
        """Advance every layer one step on ``cells`` ``(batch*W*H, l)``.

        Returns the ``(batch, l)`` summaries.
        """
        x = cells
        size = self.width
        norms = []
        for j in range(self.levels):
            pre = f"{self.prefix}.{j}"
            h = cell_step(self.params, pre, x, self.states[j], stats)
            self.states[j] = h
            if stats is not None:
                norms.append(np.linalg.norm(h.data, axis=-1))
            x = compose_grid(self.params, pre, h, size, stats)
            size //= 2
            if stats is not None:
                stats.merges += 1
        if stats is not None:
            stats.see("h_read", x.data)
            stats.layer_norms.append(norms)
        return x


def read(cells: Tensor, hierarchy: ReadHierarchy, stats=None) -> Tensor:
    """h_t = read(M_t) as an ``(l,)`` vector; advances a single-grid ``hierarchy`` in place."""
    if hierarchy.batch != 1:
        raise ContractError("read: use ReadHierarchy.read for batched memories")
    return ad.reshape(hierarchy.read(cells, stats), (hierarchy.dim,))
