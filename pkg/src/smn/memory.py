"""The W x H grid of content vectors: coordinate mapping, write vector, local update."""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError

UNIT_EXTENT = (0.0, 1.0, 0.0, 1.0)


def is_power_of_two(n: int) -> bool:
    return isinstance(n, (int, np.integer)) and n >= 1 and (n & (n - 1)) == 0


def psi(x: float, y: float, extent=UNIT_EXTENT, W: int = 16, H: int = 16) -> tuple:
    """Grid cell ``(x', y')`` of a point; out-of-extent points clamp to the border cells."""
    x0, x1, y0, y1 = extent
    if not (x1 - x0 > 0 and y1 - y0 > 0):
        raise ConfigError(f"degenerate extent {extent}")
    if not (math.isfinite(x) and math.isfinite(y)):
        raise ContractError(f"psi: non-finite point ({x}, {y})")
    xp = int(math.floor((x - x0) / (x1 - x0) * W))
    yp = int(math.floor((y - y0) / (y1 - y0) * H))
    return min(max(xp, 0), W - 1), min(max(yp, 0), H - 1)


def psi_many(points: np.ndarray, extent=UNIT_EXTENT, W: int = 16, H: int = 16) -> np.ndarray:
    """Vectorised :func:`psi` returning flat cell indices ``x' * H + y'`` (-1 for NaN rows)."""
    x0, x1, y0, y1 = extent
    if not (x1 - x0 > 0 and y1 - y0 > 0):
        raise ConfigError(f"degenerate extent {extent}")
    pts = np.asarray(points, dtype=np.float64)
    bad = ~np.isfinite(pts).all(axis=-1)
    safe = np.nan_to_num(pts)
    xp = np.clip(np.floor((safe[..., 0] - x0) / (x1 - x0) * W), 0, W - 1).astype(np.int64)
    yp = np.clip(np.floor((safe[..., 1] - y0) / (y1 - y0) * H), 0, H - 1).astype(np.int64)
    return np.where(bad, -1, xp * H + yp)


class MemoryBlock:
    """``cells`` is a ``(W * H, dim)`` tensor; cell ``(x', y')`` lives in row ``x' * H + y'``."""

    def __init__(self, width: int, height: int, dim: int, cells: Tensor | None = None, extent=UNIT_EXTENT):
        if not (is_power_of_two(width) and is_power_of_two(height)):
            raise ConfigError(f"memory grid must be powers of two, got {width}x{height}")
        self.width, self.height, self.dim = int(width), int(height), int(dim)
        self.extent = tuple(extent)
        self.cells = Tensor(np.zeros((width * height, dim))) if cells is None else cells
        if self.cells.shape != (width * height, dim):
            raise ConfigError(f"cells shape {self.cells.shape} does not fit {width}x{height}x{dim}")

    def index(self, xp: int, yp: int) -> int:
        if not (0 <= xp < self.width and 0 <= yp < self.height):
            raise ContractError(f"cell ({xp}, {yp}) outside {self.width}x{self.height} grid")
        return xp * self.height + yp

    def cell(self, xp: int, yp: int) -> Tensor:
        i = self.index(xp, yp)
        return ad.getitem(self.cells, slice(i, i + 1))

    def grid(self) -> np.ndarray:
        """Cell contents as a ``(W, H, dim)`` array (no gradient)."""
        return self.cells.data.reshape(self.width, self.height, self.dim)

    def norms(self) -> np.ndarray:
        return np.linalg.norm(self.grid(), axis=-1)


class WriteState:
    """Recurrent state of the write LSTM; one row per sample, zero at sample start."""

    def __init__(self, dim: int, batch: int = 1):
        self.h = Tensor(np.zeros((batch, dim)))
        self.c = Tensor(np.zeros((batch, dim)))


def write_from_projection(params, prefix: str, proj: Tensor, m: Tensor, state: WriteState, active=None) -> Tensor:
    """Write step given the precomputed ``c_star @ W_c`` rows (batched callers).

    Rows where ``active`` is False keep their previous state.
    """
    blocks = [proj, (m, params[f"{prefix}.write.W_m"]), (state.h, params[f"{prefix}.write.W_h"])]
    pre = ad.linear(blocks, params[f"{prefix}.write.b"])
    h, c = ad.lstm_cell(pre, state.c)
    if active is None:
        state.h, state.c = h, c
    else:
        keep = Tensor(np.asarray(active, dtype=np.float64).reshape(-1, 1))
        state.h, state.c = ad.affine_combine(keep, h, state.h), ad.affine_combine(keep, c, state.c)
    return h


def write(params, prefix: str, c_star, m, state: WriteState) -> Tensor:
    """Write vector beta: the write LSTM stepped on ``[c_star, m]``; advances ``state``."""
    c_star = ad.reshape(ad.as_tensor(c_star), (1, -1))
    m = ad.reshape(ad.as_tensor(m), (1, -1))
    proj = ad.matmul(c_star, params[f"{prefix}.write.W_c"])
    beta = write_from_projection(params, prefix, proj, m, state)
    return ad.reshape(beta, (-1,))


def update(block: MemoryBlock, cell, beta) -> MemoryBlock:
    """New block with cell ``(x', y')`` replaced by ``beta``; every other cell is carried over."""
    xp, yp = cell
    i = block.index(xp, yp)
    cells = ad.set_row(block.cells, i, ad.reshape(ad.as_tensor(beta), (block.dim,)))
    return MemoryBlock(block.width, block.height, block.dim, cells, block.extent)
