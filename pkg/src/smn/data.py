"""Trajectory data model, JSON Lines I/O, synthetic crowds and splitting."""

from __future__ import annotations

import json
import logging
import math
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, ContractError, DataIOError, IngestionError, ParseError

log = logging.getLogger(__name__)

STREAMS = ("I", "R")


def substream(seed: int, name: str) -> np.random.Generator:
    """Independent generator for a named purpose ("data", "init", "shuffle", ...)."""
    return np.random.default_rng([int(seed), zlib.crc32(name.encode())])


@dataclass
class Trajectory:
    ped_id: int
    frames: np.ndarray
    xy: np.ndarray

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.int64).reshape(-1)
        self.xy = np.asarray(self.xy, dtype=np.float64).reshape(-1, 2)
        if len(self.frames) != len(self.xy):
            raise ContractError(f"ped {self.ped_id}: {len(self.frames)} frames for {len(self.xy)} points")
        if len(self.frames) < 2:
            raise ContractError(f"ped {self.ped_id}: a trajectory needs at least 2 points")
        if np.any(np.diff(self.frames) <= 0):
            raise ContractError(f"ped {self.ped_id}: frames must be strictly increasing")

    def __len__(self):
        return len(self.frames)

    def at(self, frame: int):
        i = np.searchsorted(self.frames, frame)
        if i < len(self.frames) and self.frames[i] == frame:
            return self.xy[i]
        return None


@dataclass
class Scene:
    scene_id: int
    stream: str
    trajectories: list
    extent: tuple
    fps: float
    clamped: int = 0

    def __post_init__(self):
        if self.stream not in STREAMS:
            raise ContractError(f"unknown stream tag {self.stream!r}")
        self.trajectories = sorted(self.trajectories, key=lambda t: t.ped_id)
        self._by_ped = {t.ped_id: t for t in self.trajectories}

    def trajectory(self, ped_id: int) -> Trajectory | None:
        return self._by_ped.get(ped_id)

    @property
    def ped_ids(self) -> list:
        return [t.ped_id for t in self.trajectories]


def normalize(xy: np.ndarray, extent) -> np.ndarray:
    x0, x1, y0, y1 = extent
    out = np.array(xy, dtype=np.float64, copy=True)
    out[..., 0] = (out[..., 0] - x0) / (x1 - x0)
    out[..., 1] = (out[..., 1] - y0) / (y1 - y0)
    return out


def denormalize(xy: np.ndarray, extent) -> np.ndarray:
    x0, x1, y0, y1 = extent
    out = np.array(xy, dtype=np.float64, copy=True)
    out[..., 0] = out[..., 0] * (x1 - x0) + x0
    out[..., 1] = out[..., 1] * (y1 - y0) + y0
    return out


# ---------------------------------------------------------------------------
# JSON Lines

_FIELDS = {"scene": int, "stream": str, "frame": int, "ped": int, "x": float, "y": float}


def _parse_line(line: str, lineno: int) -> dict:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
    if not isinstance(rec, dict):
        raise ParseError("expected a JSON object", lineno)
    missing = [k for k in _FIELDS if k not in rec]
    if missing:
        raise ParseError(f"missing field(s) {', '.join(missing)}", lineno)
    for key in ("scene", "frame", "ped"):
        if isinstance(rec[key], bool) or not isinstance(rec[key], int):
            raise ParseError(f"field {key!r} must be an integer", lineno)
    for key in ("x", "y"):
        if isinstance(rec[key], bool) or not isinstance(rec[key], (int, float)) or not math.isfinite(rec[key]):
            raise ParseError(f"field {key!r} must be a finite number", lineno)
    if rec["stream"] not in STREAMS:
        raise ParseError(f"stream must be one of {STREAMS}, got {rec['stream']!r}", lineno)
    return rec


def _bbox(points: np.ndarray) -> tuple:
    x0, y0 = points.min(axis=0)
    x1, y1 = points.max(axis=0)
    # degenerate boxes get a unit pad so normalization stays defined
    if x1 - x0 <= 0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 - y0 <= 0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    return (float(x0), float(x1), float(y0), float(y1))


def load_jsonl(path, extent=None, fps=None) -> list:
    """Read observations from one file (or a list of files) into scenes grouped by (scene_id, stream).

    ``extent`` may be a single (x_min, x_max, y_min, y_max) tuple or a
    mapping scene_id -> tuple; points outside are clamped and counted in
    ``Scene.clamped``.  Without it each scene's extent is the bounding box of
    both its streams.  ``fps`` maps stream tag -> frame rate.
    """
    fps = {"I": 10.0, "R": 10.0, **(fps or {})}
    paths = list(path) if isinstance(path, (list, tuple)) else [path]
    rows: dict = defaultdict(dict)
    for p in paths:
        try:
            fh = open(p, "r", encoding="utf-8")
        except OSError as exc:
            raise DataIOError(f"cannot read {p}: {exc}") from exc
        with fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                rec = _parse_line(line, lineno)
                key = (rec["scene"], rec["stream"])
                obs_key = (rec["frame"], rec["ped"])
                if obs_key in rows[key]:
                    raise IngestionError(
                        f"{p} line {lineno}: duplicate observation scene={rec['scene']} stream={rec['stream']} "
                        f"frame={rec['frame']} ped={rec['ped']}"
                    )
                rows[key][obs_key] = (float(rec["x"]), float(rec["y"]))

    by_scene: dict = defaultdict(list)
    for (sid, stream), obs in rows.items():
        by_scene[sid].append(np.array(list(obs.values()), dtype=np.float64))

    scenes = []
    for (sid, stream) in sorted(rows):
        obs = rows[(sid, stream)]
        if extent is None:
            ext = _bbox(np.concatenate(by_scene[sid]))
        elif isinstance(extent, dict):
            ext = tuple(extent[sid])
        else:
            ext = tuple(extent)
        per_ped: dict = defaultdict(list)
        for (frame, ped), xy in obs.items():
            per_ped[ped].append((frame, xy))
        trajs, clamped, dropped = [], 0, 0
        for ped, pts in per_ped.items():
            pts.sort(key=lambda p: p[0])
            frames = np.array([p[0] for p in pts], dtype=np.int64)
            xy = np.array([p[1] for p in pts], dtype=np.float64)
            lo = np.array([ext[0], ext[2]])
            hi = np.array([ext[1], ext[3]])
            clipped = np.clip(xy, lo, hi)
            clamped += int(np.any(clipped != xy, axis=1).sum())
            if len(frames) < 2:
                dropped += 1
                continue
            trajs.append(Trajectory(ped, frames, clipped))
        if clamped:
            log.warning("scene %s/%s: clamped %d point(s) into extent", sid, stream, clamped)
        if dropped:
            log.warning("scene %s/%s: skipped %d single-point trajectorie(s)", sid, stream, dropped)
        scenes.append(Scene(sid, stream, trajs, ext, float(fps[stream]), clamped=clamped))
    return scenes


def write_jsonl(scenes: Iterable[Scene], path) -> None:
    lines = []
    for sc in sorted(scenes, key=lambda s: (s.scene_id, s.stream)):
        recs = []
        for tr in sc.trajectories:
            for f, (x, y) in zip(tr.frames, tr.xy):
                recs.append((int(f), tr.ped_id, float(x), float(y)))
        recs.sort()
        for f, ped, x, y in recs:
            lines.append(json.dumps({"scene": sc.scene_id, "stream": sc.stream, "frame": f, "ped": ped, "x": x, "y": y}))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("".join(line + "\n" for line in lines))


# ---------------------------------------------------------------------------
# synthetic crowds

_DEFAULT_OBSTACLES = [[5.0, 6.0, 1.2], [11.0, 10.0, 1.5], [8.0, 13.0, 0.8], [12.5, 4.0, 1.0]]
_DEFAULT_WAYPOINTS = [[0.5, 3.0], [0.5, 12.0], [15.5, 4.5], [15.5, 13.0], [8.0, 0.5], [6.5, 15.5]]


@dataclass
class GenConfig:
    scenes: int = 20
    peds_per_scene: int = 5
    frames: int = 60
    i_rate: int = 10
    r_rate: int = 2
    r_noise: float = 0.1
    r_dropout: float = 0.2
    extent: list = field(default_factory=lambda: [0.0, 16.0, 0.0, 16.0])
    obstacles: list = field(default_factory=lambda: [list(o) for o in _DEFAULT_OBSTACLES])
    waypoints: list = field(default_factory=lambda: [list(w) for w in _DEFAULT_WAYPOINTS])
    desired_speed: float = 1.3
    max_speed: float = 1.8
    relax_time: float = 0.5
    ped_repulsion: float = 2.0
    ped_range: float = 0.3
    obstacle_repulsion: float = 6.0
    obstacle_range: float = 0.25
    ped_radius: float = 0.3
    spawn_window: int = 10
    spawn_jitter: float = 0.4
    goal_radius: float = 0.5

    def validate(self) -> None:
        if self.i_rate <= 0 or self.r_rate <= 0 or self.i_rate % self.r_rate:
            raise ConfigError(f"i_rate ({self.i_rate}) must be a positive multiple of r_rate ({self.r_rate})")
        if not 0.0 <= self.r_dropout <= 1.0:
            raise ConfigError("r_dropout must lie in [0, 1]")
        if self.r_noise < 0:
            raise ConfigError("r_noise must be non-negative")
        if self.scenes < 0 or self.peds_per_scene < 0 or self.frames < 0:
            raise ConfigError("scene, pedestrian and frame counts must be non-negative")
        x0, x1, y0, y1 = self.extent
        if not (x1 > x0 and y1 > y0):
            raise ConfigError(f"degenerate extent {self.extent}")
        if len(self.waypoints) < 2 and self.peds_per_scene:
            raise ConfigError("need at least two waypoints")

    @property
    def ratio(self) -> int:
        return self.i_rate // self.r_rate


def simulate_pedestrians(starts, goals, spawn, cfg: GenConfig, n_frames: int) -> list:
    """Social-force point-mass crowd: goal attraction plus pedestrian and obstacle repulsion.

    Returns one ``(frames, xy)`` pair per pedestrian; a pedestrian is recorded
    from its spawn frame until it reaches its goal or the scene ends.
    """
    dt = 1.0 / cfg.i_rate
    n = len(starts)
    pos = np.array(starts, dtype=np.float64).reshape(n, 2)
    goals = np.array(goals, dtype=np.float64).reshape(n, 2)
    vel = np.zeros((n, 2))
    obstacles = np.array(cfg.obstacles, dtype=np.float64).reshape(-1, 3)
    lo = np.array([cfg.extent[0], cfg.extent[2]])
    hi = np.array([cfg.extent[1], cfg.extent[3]])
    active = np.zeros(n, dtype=bool)
    done = np.zeros(n, dtype=bool)
    tracks = [([], []) for _ in range(n)]
    for f in range(n_frames):
        active |= (np.asarray(spawn) == f) & ~done
        idx = np.flatnonzero(active)
        for i in idx:
            tracks[i][0].append(f)
            tracks[i][1].append(pos[i].copy())
        if idx.size == 0:
            continue
        force = np.zeros((n, 2))
        to_goal = goals[idx] - pos[idx]
        dist_goal = np.linalg.norm(to_goal, axis=1, keepdims=True)
        desired = cfg.desired_speed * to_goal / np.maximum(dist_goal, 1e-9)
        force[idx] = (desired - vel[idx]) / cfg.relax_time
        for i in idx:
            others = idx[idx != i]
            if others.size:
                diff = pos[i] - pos[others]
                d = np.linalg.norm(diff, axis=1)
                nrm = diff / np.maximum(d, 1e-9)[:, None]
                mag = cfg.ped_repulsion * np.exp((2 * cfg.ped_radius - d) / cfg.ped_range)
                force[i] += (mag[:, None] * nrm).sum(axis=0)
            if obstacles.size:
                diff = pos[i] - obstacles[:, :2]
                d = np.linalg.norm(diff, axis=1)
                nrm = diff / np.maximum(d, 1e-9)[:, None]
                gap = obstacles[:, 2] + cfg.ped_radius - d
                mag = cfg.obstacle_repulsion * np.exp(gap / cfg.obstacle_range)
                force[i] += (mag[:, None] * nrm).sum(axis=0)
        vel[idx] += force[idx] * dt
        speed = np.linalg.norm(vel[idx], axis=1, keepdims=True)
        vel[idx] *= np.minimum(1.0, cfg.max_speed / np.maximum(speed, 1e-12))
        pos[idx] = np.clip(pos[idx] + vel[idx] * dt, lo, hi)
        arrived = np.linalg.norm(goals[idx] - pos[idx], axis=1) < cfg.goal_radius
        done[idx[arrived]] = True
        active[idx[arrived]] = False
    return [(np.array(fr, dtype=np.int64), np.array(xy).reshape(-1, 2)) for fr, xy in tracks]


def _generate_scene(cfg: GenConfig, seed: int, scene_id: int) -> tuple:
    rng = substream(seed, f"data/scene/{scene_id}")
    wps = np.array(cfg.waypoints, dtype=np.float64).reshape(-1, 2)
    n = cfg.peds_per_scene
    starts, goals = [], []
    for _ in range(n):
        a, b = rng.choice(len(wps), size=2, replace=False)
        starts.append(wps[a] + rng.normal(0.0, cfg.spawn_jitter, 2))
        goals.append(wps[b] + rng.normal(0.0, cfg.spawn_jitter, 2))
    lo = np.array([cfg.extent[0], cfg.extent[2]])
    hi = np.array([cfg.extent[1], cfg.extent[3]])
    starts = np.clip(np.array(starts).reshape(n, 2), lo, hi)
    goals = np.clip(np.array(goals).reshape(n, 2), lo, hi)
    spawn = rng.integers(0, max(cfg.spawn_window, 0) + 1, size=n)
    tracks = simulate_pedestrians(starts, goals, spawn, cfg, cfg.frames)
    ext = tuple(float(v) for v in cfg.extent)

    i_trajs, r_trajs = [], []
    for ped, (frames, xy) in enumerate(tracks):
        if len(frames) >= 2:
            i_trajs.append(Trajectory(ped, frames, xy))
        keep_r = rng.random() >= cfg.r_dropout
        noise = rng.normal(0.0, 1.0, xy.shape) * cfg.r_noise
        if not keep_r or len(frames) == 0:
            continue
        on_r = frames % cfg.ratio == 0
        r_xy = np.clip(xy[on_r] + noise[on_r], lo, hi)
        if on_r.sum() >= 2:
            r_trajs.append(Trajectory(ped, frames[on_r] // cfg.ratio, r_xy))
    return (
        Scene(scene_id, "I", i_trajs, ext, float(cfg.i_rate)),
        Scene(scene_id, "R", r_trajs, ext, float(cfg.r_rate)),
    )


def generate_synthetic(cfg: GenConfig, seed: int) -> list:
    """Paired I/R scenes over a fixed obstacle layout.

    Stream R is stream I's ground truth subsampled to ``r_rate`` (R frame k is
    I frame ``k * i_rate / r_rate``), with Gaussian noise and per-trajectory
    dropout.
    """
    cfg.validate()
    scenes = []
    for sid in range(cfg.scenes):
        scenes.extend(_generate_scene(cfg, seed, sid))
    return scenes


# ---------------------------------------------------------------------------
# splitting and samples


def split(scenes: Sequence[Scene], ratios=(0.7, 0.25, 0.05), seed: int = 0) -> tuple:
    """Seeded (train, test, validation) partition at scene granularity.

    Both streams of a scene always land in the same part.
    """
    if not scenes:
        raise ContractError("cannot split an empty scene list")
    ratios = [float(r) for r in ratios]
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    ids = sorted({s.scene_id for s in scenes})
    order = substream(seed, "split").permutation(len(ids))
    n = len(ids)
    raw = [r * n for r in ratios]
    counts = [int(math.floor(x + 1e-9)) for x in raw]
    leftovers = sorted(range(3), key=lambda i: -(raw[i] - counts[i]))
    for i in leftovers[: n - sum(counts)]:
        counts[i] += 1
    parts, start = [], 0
    for c in counts:
        chosen = {ids[j] for j in order[start:start + c]}
        parts.append([s for s in scenes if s.scene_id in chosen])
        start += c
    return tuple(parts)


@dataclass
class Sample:
    sample_id: str
    scene_id: int
    ped_id: int
    frames: np.ndarray  # I frames of the observed then predicted window
    scene_i: Scene
    scene_r: Scene | None
    obs: int
    pred: int


def pair_scenes(scenes: Iterable[Scene]) -> list:
    """[(I scene, R scene or None)] ordered by scene id."""
    by_id: dict = defaultdict(dict)
    for s in scenes:
        by_id[s.scene_id][s.stream] = s
    return [(d["I"], d.get("R")) for _, d in sorted(by_id.items()) if "I" in d]


def build_samples(scenes: Iterable[Scene], obs: int = 20, pred: int = 20, min_track_len: int | None = None) -> list:
    """Sliding windows (stride ``obs``) over every stream-I trajectory.

    A window qualifies only if the target has a point at every frame of it
    (consecutive frames at the scene's frame step).  Tracks shorter than
    ``min_track_len`` points (default ``obs + pred``) are skipped.
    """
    need = obs + pred
    min_len = need if min_track_len is None else max(min_track_len, need)
    samples = []
    for sc_i, sc_r in pair_scenes(scenes):
        steps = [np.diff(t.frames).min() for t in sc_i.trajectories]
        if not steps:
            continue
        step = int(min(steps))
        for tr in sc_i.trajectories:
            if len(tr) < min_len or need == 0:
                continue
            start = 0
            while start + need <= len(tr):
                fr = tr.frames[start:start + need]
                if np.all(np.diff(fr) == step):
                    samples.append(
                        Sample(f"{sc_i.scene_id}:{tr.ped_id}:{int(fr[0])}", sc_i.scene_id, tr.ped_id, fr.copy(), sc_i, sc_r, obs, pred)
                    )
                    start += obs if obs > 0 else need
                else:
                    start += 1
    return samples


@dataclass
class StreamArrays:
    """One stream of a sample in normalized coordinates over the observed window.

    Row 0 of the write order refers to the target, row ``i + 1`` to neighbour ``i``.
    """

    tgt_pos: np.ndarray
    tgt_mask: np.ndarray
    tgt_off: np.ndarray
    anchor: np.ndarray
    nb_ids: list
    nb_pos: np.ndarray
    nb_mask: np.ndarray
    nb_off: np.ndarray
    order: list


@dataclass
class SampleArrays:
    sample_id: str
    extent: tuple
    gt: np.ndarray  # (obs + pred, 2), normalized
    streams: dict
    obs: int
    pred: int

    @property
    def gt_obs(self):
        return self.gt[: self.obs]

    @property
    def gt_pred(self):
        return self.gt[self.obs:]


def _offsets(pos: np.ndarray, mask: np.ndarray) -> np.ndarray:
    off = np.zeros_like(pos)
    last = None
    for t in range(len(mask)):
        if mask[t]:
            if last is not None:
                off[t] = pos[t] - pos[last]
            last = t
    return np.nan_to_num(off)


def _track_on_frames(tr: Trajectory, frames: np.ndarray, frame_scale: int) -> tuple:
    """Positions of ``tr`` on I ``frames``; R tracks are linearly interpolated within their span."""
    src = tr.frames * frame_scale
    pos = np.full((len(frames), 2), np.nan)
    if frame_scale == 1:
        idx = np.searchsorted(src, frames)
        idx = np.minimum(idx, len(src) - 1)
        hit = src[idx] == frames
        pos[hit] = tr.xy[idx[hit]]
        return pos, hit
    inside = (frames >= src[0]) & (frames <= src[-1])
    pos[inside, 0] = np.interp(frames[inside], src, tr.xy[:, 0])
    pos[inside, 1] = np.interp(frames[inside], src, tr.xy[:, 1])
    return pos, inside


def _stream_arrays(scene: Scene, target: int, frames_obs: np.ndarray, frame_scale: int, extent, anchor_fallback) -> StreamArrays:
    T = len(frames_obs)
    tgt = scene.trajectory(target)
    if tgt is not None:
        tpos, tmask = _track_on_frames(tgt, frames_obs, frame_scale)
    else:
        tpos, tmask = np.full((T, 2), np.nan), np.zeros(T, dtype=bool)
    tpos = normalize(tpos, extent)
    anchor = np.where(tmask[:, None], tpos, anchor_fallback)
    nb_ids, nb_pos, nb_mask = [], [], []
    for tr in scene.trajectories:
        if tr.ped_id == target:
            continue
        pos, mask = _track_on_frames(tr, frames_obs, frame_scale)
        if mask.any():
            nb_ids.append(tr.ped_id)
            nb_pos.append(normalize(pos, extent))
            nb_mask.append(mask)
    N = len(nb_ids)
    nb_pos_a = np.array(nb_pos).reshape(N, T, 2)
    nb_mask_a = np.array(nb_mask, dtype=bool).reshape(N, T)
    nb_off = np.array([_offsets(nb_pos_a[i], nb_mask_a[i]) for i in range(N)]).reshape(N, T, 2)
    rows = sorted([(target, 0)] + [(pid, i + 1) for i, pid in enumerate(nb_ids)])
    return StreamArrays(
        tgt_pos=tpos,
        tgt_mask=tmask,
        tgt_off=_offsets(tpos, tmask),
        anchor=anchor,
        nb_ids=nb_ids,
        nb_pos=nb_pos_a,
        nb_mask=nb_mask_a,
        nb_off=nb_off,
        order=[r for _, r in rows],
    )


def sample_arrays(sample: Sample, with_r: bool = False) -> SampleArrays:
    sc = sample.scene_i
    extent = sc.extent
    tr = sc.trajectory(sample.ped_id)
    gt_raw = np.array([tr.at(f) for f in sample.frames], dtype=np.float64).reshape(-1, 2)
    gt = normalize(gt_raw, extent)
    frames_obs = sample.frames[: sample.obs]
    streams = {"I": _stream_arrays(sc, sample.ped_id, frames_obs, 1, extent, gt[: sample.obs])}
    if with_r:
        if sample.scene_r is None:
            raise ConfigError(f"sample {sample.sample_id} has no R-stream scene")
        ratio = sc.fps / sample.scene_r.fps
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ConfigError(f"I fps {sc.fps} is not a multiple of R fps {sample.scene_r.fps}")
        streams["R"] = _stream_arrays(sample.scene_r, sample.ped_id, frames_obs, int(round(ratio)), extent, gt[: sample.obs])
    return SampleArrays(sample.sample_id, extent, gt, streams, sample.obs, sample.pred)
