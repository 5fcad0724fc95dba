"""Trajectory predictor: configuration, parameters, and the per-sample forward pass.

Variants
--------
SA   target soft-attention context only
SHA  soft + hardwired (inverse-distance) neighbour context
SMN  SHA plus the structured memory read
*_IR the same with an R stream alongside I; SMN_IR gates the two memory
     reads together before they reach the decoder.

Every variant feeds the decoder ``tanh`` of the concatenated context, so the
smaller variants are exactly the larger ones with the extra blocks silenced.
"""

from __future__ import annotations

import hashlib
import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .context import DEFAULT_EPS_DIST, attend, encoder_step, hardwired_weights, inverse_distance, lstm_step
from .data import SampleArrays, StreamArrays, substream
from .errors import CheckpointError, ConfigError, ContractError
from .fusion import fuse
from .memory import MemoryBlock, WriteState, is_power_of_two, psi_many, write_from_projection
from .read import GateStats, ReadHierarchy, n_levels

VARIANTS = ("SA", "SHA", "SMN", "SA_IR", "SHA_IR", "SMN_IR")


@dataclass
class ModelConfig:
    variant: str = "SMN"
    hidden: int = 30
    width: int = 16
    height: int = 16
    obs: int = 20
    pred: int = 20
    lr: float = 1e-3
    epochs: int = 50
    seed: int = 0
    accum: int = 16
    patience: int = 10
    offset_scale: float = 100.0
    eps_dist: float = DEFAULT_EPS_DIST
    clip_norm: float = 0.0
    min_track_len: int = 0
    nl_theta: float = -1.0

    def __post_init__(self):
        self.variant = str(self.variant).upper().replace("(I+R)", "_IR").replace("+", "_")
        self.validate()

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if self.hidden < 1:
            raise ConfigError("hidden size must be positive")
        if self.obs < 1 or self.pred < 0:
            raise ConfigError("need obs >= 1 and pred >= 0")
        if self.uses_memory:
            if not (is_power_of_two(self.width) and is_power_of_two(self.height)):
                raise ConfigError(f"memory grid must be powers of two, got {self.width}x{self.height}")
            n_levels(self.width, self.height)
        if self.accum < 1:
            raise ConfigError("accum must be >= 1")

    @property
    def base(self) -> str:
        return self.variant.split("_")[0]

    @property
    def streams(self) -> tuple:
        return ("I", "R") if self.variant.endswith("_IR") else ("I",)

    @property
    def uses_hard(self) -> bool:
        return self.base in ("SHA", "SMN")

    @property
    def uses_memory(self) -> bool:
        return self.base == "SMN"

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


# ---------------------------------------------------------------------------
# parameters


def parameter_layout(cfg: ModelConfig) -> list:
    """``[(name, shape, fan_in)]`` in canonical order; ``fan_in`` 0 marks a bias."""
    l = cfg.hidden
    out = []
    for s in cfg.streams:
        enc = f"{s}.encoder"
        out += [(f"{enc}.W_x", (2, 4 * l), 2 + l), (f"{enc}.W_h", (l, 4 * l), 2 + l), (f"{enc}.b", (4 * l,), 0)]
        att = f"{s}.attn"
        out += [(f"{att}.W_h", (l, l), 2 * l), (f"{att}.W_q", (l, l), 2 * l), (f"{att}.b", (l,), 0), (f"{att}.v", (l, 1), l)]
        if cfg.uses_memory:
            wr = f"{s}.write"
            out += [
                (f"{wr}.W_c", (2 * l, 4 * l), 4 * l),
                (f"{wr}.W_m", (l, 4 * l), 4 * l),
                (f"{wr}.W_h", (l, 4 * l), 4 * l),
                (f"{wr}.b", (4 * l,), 0),
            ]
            for j in range(n_levels(cfg.width, cfg.height)):
                rd = f"{s}.read.{j}"
                out += [
                    (f"{rd}.W_m", (l, 2 * l), 2 * l),
                    (f"{rd}.W_h", (l, 2 * l), 2 * l),
                    (f"{rd}.b", (2 * l,), 0),
                    (f"{rd}.W_q", (4 * l, l), 4 * l),
                    (f"{rd}.b_q", (l,), 0),
                ]
    if cfg.uses_memory and len(cfg.streams) == 2:
        out += [
            ("fusion.W_I", (l, l), l),
            ("fusion.W_R", (l, l), l),
            ("fusion.W_nu_I", (l, l), 2 * l),
            ("fusion.W_nu_R", (l, l), 2 * l),
            ("fusion.b_nu", (l,), 0),
        ]
    blocks = decoder_blocks(cfg)
    dec_fan = 4 + l * len(blocks) + l
    out += [("decoder.W_p", (2, 4 * l), dec_fan), ("decoder.W_y", (2, 4 * l), dec_fan)]
    out += [(f"decoder.{b}", (l, 4 * l), dec_fan) for b in blocks]
    out += [("decoder.W_h", (l, 4 * l), dec_fan), ("decoder.b", (4 * l,), 0)]
    out += [("head.W", (l, 2), l), ("head.b", (2,), 0)]
    return out


def decoder_blocks(cfg: ModelConfig) -> list:
    """Decoder context-weight names in the order their terms are summed."""
    names = []
    for s in cfg.streams:
        names.append(f"W_{s}_soft")
        if cfg.uses_hard:
            names.append(f"W_{s}_hard")
    if cfg.uses_memory:
        names.append("W_mem")
    return names


class ParameterSet(OrderedDict):
    """``name -> Tensor`` with counting, module grouping and (de)serialization."""

    def count(self) -> int:
        return int(sum(t.size for t in self.values()))

    def tensors(self) -> list:
        return list(self.values())

    @staticmethod
    def module_of(name: str) -> str:
        parts = name.split(".")
        return ".".join(parts[:2]) if parts[0] in ("I", "R") else parts[0]

    def modules(self) -> dict:
        groups: dict = OrderedDict()
        for name in self:
            groups.setdefault(self.module_of(name), []).append(name)
        return groups

    def copy_values(self) -> dict:
        return {k: v.data.copy() for k, v in self.items()}

    def load_values(self, values: dict) -> None:
        for k, v in values.items():
            self[k].data[...] = v

    def zero(self, names) -> None:
        for n in names:
            self[n].data[...] = 0.0

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, v in self.items():
            h.update(k.encode())
            h.update(np.ascontiguousarray(v.data).tobytes())
        return h.hexdigest()


def init_params(cfg: ModelConfig, seed: int | None = None) -> ParameterSet:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases, from the "init" sub-stream."""
    rng = substream(cfg.seed if seed is None else seed, "init")
    ps = ParameterSet()
    for name, shape, fan_in in parameter_layout(cfg):
        if fan_in:
            bound = 1.0 / np.sqrt(fan_in)
            data = rng.uniform(-bound, bound, size=shape)
        else:
            data = np.zeros(shape)
        ps[name] = ad.parameter(data, name=name)
    return ps


def parameter_count(cfg: ModelConfig) -> int:
    return int(sum(int(np.prod(shape)) for _, shape, _ in parameter_layout(cfg)))


def memory_path_names(cfg: ModelConfig) -> list:
    return [n for n, _, _ in parameter_layout(cfg) if ".read." in n or ".write." in n or n.startswith("fusion.") or n == "decoder.W_mem"]


def hardwired_path_names(cfg: ModelConfig) -> list:
    return [n for n, _, _ in parameter_layout(cfg) if n.startswith("decoder.") and n.endswith("_hard")]


def nest_params(small_cfg: ModelConfig, big: ParameterSet) -> ParameterSet:
    """Parameters of ``small_cfg`` taken (by name) from a larger variant's set."""
    out = ParameterSet()
    for name, shape, _ in parameter_layout(small_cfg):
        if name not in big or big[name].shape != tuple(shape):
            raise ConfigError(f"{name} is not shared with the larger variant")
        out[name] = ad.parameter(big[name].data.copy(), name=name)
    return out


# ---------------------------------------------------------------------------
# per-stream constants and state over a batch of samples


class _Prep:
    """Constant arrays of one (sample, stream): hardwired weights, write order, cells."""

    def __init__(self, arr: StreamArrays, cfg: ModelConfig):
        T = len(arr.tgt_mask)
        N = arr.nb_pos.shape[0]
        P = N + 1
        eps = cfg.eps_dist
        self.T, self.N = T, N
        self.tgt_cells = psi_many(arr.tgt_pos, W=cfg.width, H=cfg.height)
        self.nb_cells = psi_many(arr.nb_pos, W=cfg.width, H=cfg.height)
        # target's weights over neighbour (n, j <= t)
        self.tgt_w = [hardwired_weights(arr.anchor[t], arr.nb_pos[:, : t + 1], arr.nb_mask[:, : t + 1], eps) for t in range(T)]
        self.writers = []
        self.nb_w = []
        for t in range(T):
            rows = []
            for r in arr.order:
                if r == 0 and arr.tgt_mask[t]:
                    rows.append((0, int(self.tgt_cells[t])))
                elif r > 0 and arr.nb_mask[r - 1, t]:
                    rows.append((r, int(self.nb_cells[r - 1, t])))
            self.writers.append(rows)
            if not cfg.uses_memory or N == 0:
                self.nb_w.append(None)
                continue
            # neighbour n's weights over every other pedestrian (p, j <= t), target first
            pos_all = np.concatenate([arr.tgt_pos[None, : t + 1], arr.nb_pos[:, : t + 1]], axis=0)
            mask_all = np.concatenate([arr.tgt_mask[None, : t + 1], arr.nb_mask[:, : t + 1]], axis=0)
            W = np.zeros((N, P, t + 1))
            for n in range(N):
                if not arr.nb_mask[n, t]:
                    continue
                m = mask_all.copy()
                m[n + 1] = False
                W[n] = hardwired_weights(arr.nb_pos[n, t], pos_all, m, eps)
            self.nb_w.append(W)


def _prep_for(arr: StreamArrays, cfg: ModelConfig) -> _Prep:
    key = (cfg.width, cfg.height, cfg.eps_dist, cfg.uses_memory)
    cache = arr.__dict__.setdefault("_prep_cache", {})
    if key not in cache:
        cache[key] = _Prep(arr, cfg)
    return cache[key]


class StreamBatch:
    """One stream of ``B`` samples padded to a common neighbour count ``N``.

    Padded neighbours are fully masked.  Memory rows of sample ``b`` occupy
    ``b * W * H`` onwards; write steps index writers as ``b * (N + 1) + r``.
    """

    def __init__(self, arrs: list, cfg: ModelConfig):
        preps = [_prep_for(a, cfg) for a in arrs]
        B = len(arrs)
        T = preps[0].T
        N = max(p.N for p in preps)
        P = N + 1
        WH = cfg.width * cfg.height
        self.B, self.T, self.N = B, T, N
        self.tgt_mask = np.stack([a.tgt_mask for a in arrs])
        self.tgt_off = np.stack([a.tgt_off for a in arrs])
        self.nb_mask = np.zeros((B, N, T), dtype=bool)
        self.nb_off = np.zeros((B, N, T, 2))
        pts = np.zeros((B, N, T, 2))
        for b, a in enumerate(arrs):
            n = a.nb_pos.shape[0]
            self.nb_mask[b, :n] = a.nb_mask
            self.nb_off[b, :n] = a.nb_off
            pts[b, :n] = np.nan_to_num(a.nb_pos)
        self.all_tgt = bool(self.tgt_mask.all())
        self.pred_pts = pts.reshape(B, N * T, 2)
        self.pred_mask = self.nb_mask.reshape(B, N * T).astype(np.float64)

        self.tgt_w = []
        self.nb_w = []
        self.steps = []
        for t in range(T):
            w = np.zeros((B, N, t + 1))
            for b, p in enumerate(preps):
                w[b, : p.N] = p.tgt_w[t]
            self.tgt_w.append(w.reshape(B, 1, N * (t + 1)))
            if cfg.uses_memory and N > 0:
                nw = np.zeros((B, N, P, t + 1))
                for b, p in enumerate(preps):
                    if p.nb_w[t] is not None:
                        nw[b, : p.N, : p.N + 1] = p.nb_w[t]
                self.nb_w.append(nw.reshape(B, N, P * (t + 1)))
            else:
                self.nb_w.append(None)
            steps = []
            if cfg.uses_memory:
                for k in range(max(len(p.writers[t]) for p in preps)):
                    active = np.zeros(B, dtype=bool)
                    rows = np.arange(B) * P
                    cells = np.arange(B) * WH
                    for b, p in enumerate(preps):
                        if k < len(p.writers[t]):
                            r, cell = p.writers[t][k]
                            active[b] = True
                            rows[b] += r
                            cells[b] += cell
                    steps.append((active, rows, cells))
            self.steps.append(steps)


class Batch:
    """Collated samples sharing the observation and prediction lengths."""

    def __init__(self, samples: list, cfg: ModelConfig):
        if not samples:
            raise ContractError("empty batch")
        obs, pred = samples[0].obs, samples[0].pred
        for a in samples:
            if (a.obs, a.pred) != (obs, pred):
                raise ContractError(f"sample {a.sample_id}: windows differ within a batch")
            if obs < 1 or len(a.gt) < obs + pred:
                raise ContractError(f"sample {a.sample_id}: windows shorter than obs={obs} + pred={pred}")
        self.samples = samples
        self.obs, self.pred = obs, pred
        self.B = len(samples)
        self.gt = np.stack([a.gt[: obs + pred] for a in samples])
        self.streams = {}
        for s in cfg.streams:
            missing = [a.sample_id for a in samples if s not in a.streams]
            if missing:
                raise ConfigError(f"variant {cfg.variant} needs stream {s} but sample {missing[0]} has none")
            self.streams[s] = StreamBatch([a.streams[s] for a in samples], cfg)

    @property
    def gt_pred(self) -> np.ndarray:
        return self.gt[:, self.obs:]


class StreamRunner:
    """Encoders, attention, memory and read hierarchy of one stream over a batch."""

    def __init__(self, model: "SMNModel", stream: str, sb: StreamBatch, stats: GateStats | None = None, trace=None):
        cfg = model.config
        self.cfg = cfg
        self.params = model.params
        self.s = stream
        self.sb = sb
        self.stats = stats
        self.trace = trace
        l = cfg.hidden
        B, N = sb.B, sb.N
        self.h_t = Tensor(np.zeros((B, l)))
        self.c_t = Tensor(np.zeros((B, l)))
        self.h_n = Tensor(np.zeros((B * N, l)))
        self.c_n = Tensor(np.zeros((B * N, l)))
        self.tgt_hid, self.tgt_proj = [], []
        self.nb_hid, self.nb_proj = [], []
        self._tgt_stack = None
        self._pred_pool = None
        if cfg.uses_memory:
            self.cells = Tensor(np.zeros((B * cfg.width * cfg.height, l)))
            self.wstate = WriteState(l, B)
            self.reader = ReadHierarchy(self.params, f"{stream}.read", cfg.width, cfg.height, l, batch=B)

    def _p(self, name):
        return self.params[f"{self.s}.{name}"]

    def _zeros(self):
        return Tensor(np.zeros((self.sb.B, self.cfg.hidden)))

    def memory_block(self, b: int = 0) -> MemoryBlock:
        """Sample ``b``'s memory as a :class:`MemoryBlock` (values only)."""
        cfg = self.cfg
        wh = cfg.width * cfg.height
        return MemoryBlock(cfg.width, cfg.height, cfg.hidden, Tensor(self.cells.data[b * wh:(b + 1) * wh].copy()))

    def _target_soft(self, query: Tensor) -> Tensor:
        k = len(self.tgt_hid)
        if self._tgt_stack is None or self._tgt_stack[0] != k:
            H = ad.stack(self.tgt_hid, axis=1)
            proj = ad.stack(self.tgt_proj, axis=1)
            self._tgt_stack = (k, H, proj)
        _, H, proj = self._tgt_stack
        mask = None if self.sb.all_tgt else self.sb.tgt_mask[:, :k]
        return attend(self.params, self.s, H, proj, query, mask=mask)

    def _nb_stack(self, t: int) -> Tensor:
        """Neighbour hiddens up to frame ``t`` as ``(B * N, t + 1, l)``."""
        return ad.stack(self.nb_hid, axis=1)

    def observe(self, t: int) -> tuple:
        """Process observed frame ``t``; returns ``(C*_soft, C*_hard, h_mem)`` rows per sample."""
        cfg, sb = self.cfg, self.sb
        scale = cfg.offset_scale
        l = cfg.hidden
        q_t = self.h_t
        self.h_t, self.c_t = encoder_step(
            self.params, self.s, sb.tgt_off[:, t], self.h_t, self.c_t, mask=sb.tgt_mask[:, t], scale=scale
        )
        self.tgt_hid.append(self.h_t)
        self.tgt_proj.append(ad.matmul(self.h_t, self._p("attn.W_h")))
        need_nb = cfg.uses_hard and sb.N > 0
        q_n = self.h_n
        S = None
        if need_nb:
            self.h_n, self.c_n = encoder_step(
                self.params, self.s, sb.nb_off[:, :, t].reshape(-1, 2), self.h_n, self.c_n,
                mask=sb.nb_mask[:, :, t].reshape(-1), scale=scale,
            )
            self.nb_hid.append(self.h_n)
            if cfg.uses_memory:
                self.nb_proj.append(ad.matmul(self.h_n, self._p("attn.W_h")))
            S = self._nb_stack(t)

        c_soft = self._target_soft(q_t)
        hard_star = None
        if cfg.uses_hard:
            if need_nb:
                pool = ad.reshape(S, (sb.B, sb.N * (t + 1), l))
                c_hard = ad.reshape(ad.matmul(Tensor(sb.tgt_w[t]), pool), (sb.B, l))
            else:
                c_hard = self._zeros()
            hard_star = ad.tanh(c_hard)
        soft_star = ad.tanh(c_soft)
        h_mem = None
        if cfg.uses_memory:
            self._write(t, soft_star, hard_star, S, q_n)
            h_mem = self.reader.read(self.cells, self.stats)
        if self.trace is not None:
            self.trace(self.s, t, self)
        return soft_star, hard_star, h_mem

    def _write(self, t, soft_star, hard_star, S, q_n) -> None:
        sb = self.sb
        steps = sb.steps[t]
        if not steps:
            return
        l = self.cfg.hidden
        B, N = sb.B, sb.N
        W_c = self._p("write.W_c")
        proj = ad.matmul(ad.concat([soft_star, hard_star], axis=-1), W_c)
        if N > 0:
            mask = sb.nb_mask[:, :, : t + 1].reshape(B * N, t + 1)
            c_soft_n = attend(self.params, self.s, S, ad.stack(self.nb_proj, axis=1), q_n, mask=mask)
            tgt = ad.reshape(ad.stack(self.tgt_hid, axis=1), (B, 1, t + 1, l))
            pool = ad.concat([tgt, ad.reshape(S, (B, N, t + 1, l))], axis=1)
            pool = ad.reshape(pool, (B, (N + 1) * (t + 1), l))
            c_hard_n = ad.matmul(Tensor(sb.nb_w[t]), pool)
            star_n = ad.tanh(ad.concat([ad.reshape(c_soft_n, (B, N, l)), c_hard_n], axis=-1))
            proj_n = ad.matmul(ad.reshape(star_n, (B * N, 2 * l)), W_c)
            proj = ad.concat([ad.reshape(proj, (B, 1, 4 * l)), ad.reshape(proj_n, (B, N, 4 * l))], axis=1)
            proj = ad.reshape(proj, (B * (N + 1), 4 * l))
        cells = self.cells
        for active, rows, idx in steps:
            p = proj if N == 0 else ad.take(proj, rows, axis=0)
            m = ad.take(cells, idx, axis=0)
            if active.all():
                beta = write_from_projection(self.params, self.s, p, m, self.wstate)
                cells = ad.set_rows(cells, idx, beta)
            else:
                beta = write_from_projection(self.params, self.s, p, m, self.wstate, active)
                on = np.flatnonzero(active)
                cells = ad.set_rows(cells, idx[on], ad.take(beta, on, axis=0))
        self.cells = cells

    def predict_context(self, query: Tensor, anchor: Tensor) -> tuple:
        """Context for a prediction step: memory frozen, targets at ``anchor`` ``(B, 2)``."""
        cfg, sb = self.cfg, self.sb
        l = cfg.hidden
        c_soft = self._target_soft(query)
        hard_star = None
        if cfg.uses_hard:
            if sb.N == 0:
                c_hard = self._zeros()
            else:
                if self._pred_pool is None:
                    self._pred_pool = ad.reshape(ad.stack(self.nb_hid, axis=1), (sb.B, sb.N * sb.T, l))
                w = inverse_distance(sb.pred_pts, ad.reshape(anchor, (sb.B, 1, 2)), cfg.eps_dist)
                w = ad.mul(w, Tensor(sb.pred_mask))
                c_hard = ad.reshape(ad.matmul(ad.reshape(w, (sb.B, 1, -1)), self._pred_pool), (sb.B, l))
            hard_star = ad.tanh(c_hard)
        h_mem = self.reader.read(self.cells, self.stats) if cfg.uses_memory else None
        return ad.tanh(c_soft), hard_star, h_mem


# ---------------------------------------------------------------------------
# decoder and full model


def decode_step(params, p_prev, c_bar_blocks, y_prev, state, offset_scale: float = 1.0, emit: bool = True):
    """Decoder LSTM on ``[p_prev, c_bar, Y_prev]``; ``Y_t = p_prev + head(h) / offset_scale``.

    ``c_bar_blocks`` is a list of ``((1, l) tensor, weight suffix)`` pairs.
    Returns ``(Y_t or None, (h, c))``.
    """
    h, c = state
    p_prev = ad.as_tensor(p_prev)
    y_prev = ad.as_tensor(y_prev)
    inputs = [(p_prev, "W_p"), (y_prev, "W_y")] + list(c_bar_blocks)
    h, c = lstm_step(params, "decoder", inputs, h, c)
    if not emit:
        return None, (h, c)
    off = ad.linear([(h, params["head.W"])], params["head.b"])
    y = ad.add(p_prev, ad.mul(off, 1.0 / offset_scale))
    return y, (h, c)


class SMNModel:
    def __init__(self, config: ModelConfig, params: ParameterSet | None = None):
        config.validate()
        self.config = config
        self.params = init_params(config) if params is None else params
        expected = {n: tuple(s) for n, s, _ in parameter_layout(config)}
        bad = [n for n in expected if n not in self.params or self.params[n].shape != expected[n]]
        extra = [n for n in self.params if n not in expected]
        if bad or extra:
            raise CheckpointError(f"parameters do not match {config.variant}: mismatched {bad}, unexpected {extra}")

    def _c_bar(self, contexts: dict) -> list:
        cfg = self.config
        blocks = []
        reads = {}
        for s in cfg.streams:
            soft_star, hard_star, h_mem = contexts[s]
            blocks.append((ad.tanh(soft_star), f"W_{s}_soft"))
            if cfg.uses_hard:
                blocks.append((ad.tanh(hard_star), f"W_{s}_hard"))
            reads[s] = h_mem
        if cfg.uses_memory:
            if len(cfg.streams) == 2:
                h = fuse(self.params, reads["I"], reads["R"])
            else:
                h = reads["I"]
            blocks.append((ad.tanh(h), "W_mem"))
        return blocks

    def runners(self, batch: Batch, stats=None, trace=None) -> dict:
        return {s: StreamRunner(self, s, batch.streams[s], stats, trace) for s in self.config.streams}

    def batch(self, samples) -> Batch:
        return Batch(list(samples), self.config)

    def forward_batch(self, batch, stats: GateStats | None = None, trace=None, feed=None) -> Tensor:
        """Predicted normalized positions ``(B, T_pred, 2)``.

        ``feed`` (testing hook, ``(B, T_pred - 1, 2)``) replaces the position
        fed back at prediction step ``k`` with ``feed[:, k - 1]``.
        """
        if not isinstance(batch, Batch):
            batch = self.batch(batch)
        cfg = self.config
        B, T_obs, T_pred = batch.B, batch.obs, batch.pred
        if T_pred == 0:
            return Tensor(np.zeros((B, 0, 2)))
        runners = self.runners(batch, stats, trace)
        l = cfg.hidden
        state = (Tensor(np.zeros((B, l))), Tensor(np.zeros((B, l))))
        y = None
        for t in range(T_obs):
            ctx = {s: r.observe(t) for s, r in runners.items()}
            p = Tensor(batch.gt[:, t])
            y, state = decode_step(self.params, p, self._c_bar(ctx), p, state, cfg.offset_scale, emit=t == T_obs - 1)
        preds = [y]
        for k in range(1, T_pred):
            anchor = preds[-1] if feed is None else Tensor(np.asarray(feed, dtype=np.float64).reshape(B, -1, 2)[:, k - 1])
            ctx = {s: r.predict_context(state[0], anchor) for s, r in runners.items()}
            y, state = decode_step(self.params, anchor, self._c_bar(ctx), anchor, state, cfg.offset_scale)
            preds.append(y)
        return ad.stack(preds, axis=1)

    def forward(self, arrays: SampleArrays, stats: GateStats | None = None, trace=None, feed=None) -> Tensor:
        """Predicted normalized positions ``(T_pred, 2)`` for one sample."""
        f = None if feed is None else np.asarray(feed, dtype=np.float64).reshape(1, -1, 2)
        out = self.forward_batch(Batch([arrays], self.config), stats, trace, f)
        return ad.reshape(out, (arrays.pred, 2))

    def predict(self, arrays: SampleArrays) -> np.ndarray:
        with ad.no_grad():
            return self.forward(arrays).data.copy()

    def predict_many(self, samples, batch_size: int = 32) -> list:
        """Predictions ``(T_pred, 2)`` for each sample, evaluated in batches."""
        samples = list(samples)
        out = []
        with ad.no_grad():
            for i in range(0, len(samples), batch_size):
                y = self.forward_batch(Batch(samples[i:i + batch_size], self.config)).data
                out.extend(y[b].copy() for b in range(y.shape[0]))
        return out


def loss(predicted: Tensor, truth) -> Tensor:
    """Mean over samples and steps of the squared Euclidean displacement.

    Accepts ``(T, 2)`` or batched ``(B, T, 2)`` predictions.
    """
    truth = np.asarray(truth, dtype=np.float64)
    predicted = ad.as_tensor(predicted)
    if predicted.shape != truth.shape or truth.shape[-1:] != (2,):
        raise ContractError(f"loss: predicted {predicted.shape} vs truth {truth.shape}")
    n = truth.size // 2
    if n == 0:
        return Tensor(0.0)
    diff = ad.sub(predicted, Tensor(truth))
    return ad.mul(ad.tsum(ad.square(diff)), 1.0 / n)


def replay_scene(model: SMNModel, arrays: SampleArrays, stream: str = "I", upto: int | None = None) -> MemoryBlock:
    """Run the observation-window writes of ``stream`` and return the memory block."""
    if not model.config.uses_memory:
        raise ConfigError(f"variant {model.config.variant} has no memory")
    if stream not in model.config.streams:
        raise ConfigError(f"variant {model.config.variant} has no {stream} stream")
    runner = StreamRunner(model, stream, Batch([arrays], model.config).streams[stream])
    T = arrays.obs if upto is None else min(upto, arrays.obs)
    with ad.no_grad():
        for t in range(T):
            runner.observe(t)
    return runner.memory_block(0)


def config_hash(d: dict) -> str:
    return hashlib.sha256(json.dumps(d, sort_keys=True, separators=(",", ":")).encode()).hexdigest()
