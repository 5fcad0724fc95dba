"""Gated coupling of per-stream memory read outputs."""

from __future__ import annotations

from . import autodiff as ad


def fuse(params, h_i, h_r, prefix: str = "fusion", return_parts: bool = False):
    """h = nu * tanh(W_I h_I) + (1 - nu) * tanh(W_R h_R), nu = sig(W_nu [.,.] + b).

    ``W_nu`` is stored as its two column blocks ``W_nu_I`` and ``W_nu_R``.
    """
    h_i, h_r = ad.as_tensor(h_i), ad.as_tensor(h_r)
    hb_i = ad.tanh(ad.matmul(h_i, params[f"{prefix}.W_I"]))
    hb_r = ad.tanh(ad.matmul(h_r, params[f"{prefix}.W_R"]))
    gate = ad.add_n([ad.matmul(hb_i, params[f"{prefix}.W_nu_I"]), ad.matmul(hb_r, params[f"{prefix}.W_nu_R"])])
    nu = ad.sigmoid(ad.add(gate, params[f"{prefix}.b_nu"]))
    h = ad.affine_combine(nu, hb_i, hb_r)
    if return_parts:
        return h, hb_i, hb_r, nu
    return h


def fused_context(c_star_i, c_star_r, h):
    """tanh([C*_I, C*_R, h])."""
    return ad.tanh(ad.concat([ad.as_tensor(c_star_i), ad.as_tensor(c_star_r), ad.as_tensor(h)], axis=-1))
