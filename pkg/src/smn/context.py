"""Short-term neighbourhood context: soft attention over the target's own
encoded track, inverse-distance ("hardwired") attention over neighbours, and
their tanh combination.

Parameters live in a flat ``{name: Tensor}`` mapping; every function takes
the mapping plus a name prefix such as ``"I.encoder"``.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ContractError

DEFAULT_EPS_DIST = 1e-3


def lstm_step(params, prefix: str, inputs, h: Tensor, c: Tensor):
    """One LSTM step; ``inputs`` is a list of ``(x, weight_suffix)`` blocks.

    Block contributions are summed left to right before the recurrent term,
    so a block whose weights are all zero leaves the result bit-identical.
    """
    blocks = [(x, params[f"{prefix}.{suffix}"]) for x, suffix in inputs]
    blocks.append((h, params[f"{prefix}.W_h"]))
    pre = ad.linear(blocks, params[f"{prefix}.b"])
    return ad.lstm_cell(pre, c)


def encoder_step(params, prefix: str, offsets: np.ndarray, h: Tensor, c: Tensor, mask=None, scale: float = 1.0):
    """Advance the shared trajectory encoder on ``(n, 2)`` step offsets.

    Rows where ``mask`` is False keep their previous state.
    """
    x = Tensor(np.asarray(offsets, dtype=np.float64) * scale)
    h2, c2 = lstm_step(params, f"{prefix}.encoder", [(x, "W_x")], h, c)
    if mask is None or np.all(mask):
        return h2, c2
    m = Tensor(np.asarray(mask, dtype=np.float64).reshape(-1, 1))
    return ad.affine_combine(m, h2, h), ad.affine_combine(m, c2, c)


def encode_trajectory(params, prefix: str, points, upto: int | None = None, scale: float = 1.0) -> list:
    """Encoder hidden vectors, one per point of ``points[:upto]``.

    The encoder consumes step offsets; the first point has a zero offset.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if upto is not None:
        pts = pts[:upto]
    if len(pts) == 0:
        raise ContractError("encode_trajectory: empty observation window")
    l = params[f"{prefix}.encoder.W_h"].shape[0]
    off = np.zeros_like(pts)
    off[1:] = np.diff(pts, axis=0)
    h = Tensor(np.zeros((1, l)))
    c = Tensor(np.zeros((1, l)))
    out = []
    for t in range(len(pts)):
        h, c = encoder_step(params, prefix, off[t:t + 1], h, c, scale=scale)
        out.append(ad.reshape(h, (l,)))
    return out


def attention_scores(params, prefix: str, proj: Tensor, query: Tensor) -> Tensor:
    """Additive scores ``v . tanh(W_h h_j + W_q q + b)``; ``proj`` holds the ``W_h h_j`` terms.

    ``proj`` is ``(n, t, l)`` and ``query`` ``(n, l)``; returns ``(n, t)``.
    """
    n, t, l = proj.shape
    q = ad.matmul(query, params[f"{prefix}.attn.W_q"])
    q = ad.add(q, params[f"{prefix}.attn.b"])
    act = ad.tanh(ad.add(proj, ad.reshape(q, (n, 1, l))))
    return ad.reshape(ad.matmul(act, params[f"{prefix}.attn.v"]), (n, t))


def attend(params, prefix: str, hiddens: Tensor, proj: Tensor, query: Tensor, mask=None) -> Tensor:
    """Batched soft attention: ``hiddens``/``proj`` ``(n, t, l)``, query ``(n, l)`` -> ``(n, l)``."""
    n, t, l = hiddens.shape
    alpha = ad.softmax(attention_scores(params, prefix, proj, query), axis=-1, mask=mask)
    ctx = ad.matmul(ad.reshape(alpha, (n, 1, t)), hiddens)
    return ad.reshape(ctx, (n, l))


def soft_attention(params, prefix: str, hiddens, query) -> Tensor:
    """c_soft for one pedestrian: ``sum_j softmax(e)_j h_j`` over a list or ``(t, l)`` stack."""
    if isinstance(hiddens, (list, tuple)):
        if not hiddens:
            raise ContractError("soft_attention needs at least one hidden vector")
        H = ad.stack([ad.as_tensor(h).reshape(-1) for h in hiddens], axis=0)
    else:
        H = ad.as_tensor(hiddens)
    t, l = H.shape
    proj = ad.matmul(H, params[f"{prefix}.attn.W_h"])
    q = ad.reshape(ad.as_tensor(query), (1, l))
    out = attend(params, prefix, ad.reshape(H, (1, t, l)), ad.reshape(proj, (1, t, l)), q)
    return ad.reshape(out, (l,))


def hardwired_weights(anchor, positions, mask=None, eps: float = DEFAULT_EPS_DIST) -> np.ndarray:
    """``1 / max(|anchor - p|, eps)`` for every position; masked entries are 0."""
    pos = np.asarray(positions, dtype=np.float64)
    d = np.linalg.norm(np.nan_to_num(pos - np.asarray(anchor, dtype=np.float64)), axis=-1)
    w = 1.0 / np.maximum(d, eps)
    if mask is not None:
        w = np.where(mask, w, 0.0)
    return w


def hardwired_attention(neighbour_hiddens, neighbour_positions, target_position, eps: float = DEFAULT_EPS_DIST, dim=None) -> Tensor:
    """c_hard = sum over neighbours n and observed steps j of ``w_nj h_nj``.

    ``neighbour_hiddens[n]`` is a ``(T_n, l)`` tensor (or list of vectors)
    aligned with ``neighbour_positions[n]`` ``(T_n, 2)``.  Target position may
    be a constant or a Tensor; with a Tensor the weights are differentiable.
    Empty neighbour list gives a zero vector of length ``dim``.
    """
    if not neighbour_hiddens:
        if dim is None:
            raise ContractError("hardwired_attention: empty neighbour list needs dim")
        return Tensor(np.zeros(dim))
    stacks, pts = [], []
    for H, P in zip(neighbour_hiddens, neighbour_positions):
        if isinstance(H, (list, tuple)):
            H = ad.stack([ad.as_tensor(h).reshape(-1) for h in H], axis=0)
        stacks.append(ad.as_tensor(H))
        pts.append(np.asarray(P, dtype=np.float64).reshape(-1, 2))
    pool = ad.concat(stacks, axis=0)
    pts = np.concatenate(pts, axis=0)
    if isinstance(target_position, Tensor):
        w = inverse_distance(pts, ad.reshape(target_position, (1, 2)), eps)
    else:
        w = Tensor(hardwired_weights(target_position, pts, eps=eps))
    l = pool.shape[1]
    return ad.reshape(ad.matmul(ad.reshape(w, (1, -1)), pool), (l,))


def inverse_distance(points: np.ndarray, anchor: Tensor, eps: float) -> Tensor:
    """Differentiable ``1 / max(|anchor - p_m|, eps)`` for constant points ``(..., M, 2)``."""
    diff = ad.sub(Tensor(points), anchor)
    return ad.reciprocal(ad.maximum(ad.norm(diff, axis=-1), eps))


def combine(c_soft: Tensor, c_hard: Tensor | None = None) -> Tensor:
    """C* = tanh([c_soft, c_hard]); with ``c_hard`` absent (SA) just tanh(c_soft)."""
    if c_hard is None:
        return ad.tanh(c_soft)
    return ad.tanh(ad.concat([c_soft, c_hard], axis=-1))
