import json
import random

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smn.data import (
    GenConfig,
    Scene,
    Trajectory,
    build_samples,
    denormalize,
    generate_synthetic,
    load_jsonl,
    normalize,
    sample_arrays,
    simulate_pedestrians,
    split,
    write_jsonl,
)
from smn.errors import ConfigError, ContractError, DataIOError, IngestionError, ParseError


def obs(scene, frame, ped, x, y, stream="I"):
    return json.dumps({"scene": scene, "stream": stream, "frame": frame, "ped": ped, "x": x, "y": y})


@pytest.fixture
def write_lines(tmp_path):
    def _write(lines, name="data.jsonl"):
        p = tmp_path / name
        p.write_text("".join(line + "\n" for line in lines))
        return p

    return _write


# --- trajectories


def test_trajectory_requires_two_points():
    with pytest.raises(ContractError):
        Trajectory(0, [1], [[0.0, 0.0]])


def test_trajectory_frames_strictly_increasing():
    with pytest.raises(ContractError):
        Trajectory(0, [1, 1], [[0, 0], [1, 1]])


def test_scene_rejects_unknown_stream():
    with pytest.raises(ContractError):
        Scene(0, "X", [], (0, 1, 0, 1), 10.0)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-5, 20), st.floats(-5, 20)), min_size=1, max_size=10))
def test_normalize_round_trip(points):
    xy = np.array(points)
    ext = (-5.0, 20.0, -5.0, 20.0)
    assert np.allclose(denormalize(normalize(xy, ext), ext), xy)


# --- load_jsonl


def test_load_empty_file(write_lines):
    assert load_jsonl(write_lines([])) == []


def test_load_two_lines(write_lines):
    scenes = load_jsonl(write_lines([obs(0, 1, 7, 1.0, 2.0), obs(0, 2, 7, 1.5, 2.5)]))
    assert len(scenes) == 1
    (tr,) = scenes[0].trajectories
    assert tr.ped_id == 7 and tr.frames.tolist() == [1, 2]
    assert tr.xy.tolist() == [[1.0, 2.0], [1.5, 2.5]]


def test_shuffled_file_loads_like_sorted(write_lines, small_scenes, tmp_path):
    sorted_path = tmp_path / "sorted.jsonl"
    write_jsonl(small_scenes, sorted_path)
    lines = sorted_path.read_text().splitlines()
    random.Random(0).shuffle(lines)
    a = load_jsonl(sorted_path)
    b = load_jsonl(write_lines(lines, "shuffled.jsonl"))
    assert [(s.scene_id, s.stream) for s in a] == [(s.scene_id, s.stream) for s in b]
    for sa, sb in zip(a, b):
        assert sa.extent == sb.extent
        for ta, tb in zip(sa.trajectories, sb.trajectories):
            assert np.array_equal(ta.frames, tb.frames) and np.array_equal(ta.xy, tb.xy)


def test_round_trip_is_byte_identical(small_scenes, tmp_path):
    first, second = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    write_jsonl(small_scenes, first)
    write_jsonl(load_jsonl(first), second)
    assert first.read_bytes() == second.read_bytes()


@pytest.mark.parametrize(
    "bad",
    [
        "{not json",
        "[1, 2]",
        '{"scene": 0, "stream": "I", "frame": 1, "ped": 0, "x": 1.0}',
        '{"scene": 0, "stream": "I", "frame": 1.5, "ped": 0, "x": 1.0, "y": 1.0}',
        '{"scene": 0, "stream": "Q", "frame": 1, "ped": 0, "x": 1.0, "y": 1.0}',
        '{"scene": 0, "stream": "I", "frame": 1, "ped": 0, "x": NaN, "y": 1.0}',
    ],
)
def test_malformed_line_reports_line_number(write_lines, bad):
    with pytest.raises(ParseError) as err:
        load_jsonl(write_lines([obs(0, 1, 0, 0, 0), bad]))
    assert err.value.lineno == 2
    assert "line 2" in str(err.value)


def test_duplicate_observation(write_lines):
    with pytest.raises(IngestionError, match="duplicate"):
        load_jsonl(write_lines([obs(0, 1, 0, 0, 0), obs(0, 1, 0, 1, 1)]))


def test_same_frame_in_other_stream_is_not_duplicate(write_lines):
    lines = [obs(0, 1, 0, 0, 0), obs(0, 2, 0, 1, 1), obs(0, 1, 0, 0, 0, "R"), obs(0, 2, 0, 1, 1, "R")]
    assert [s.stream for s in load_jsonl(write_lines(lines))] == ["I", "R"]


def test_missing_file():
    with pytest.raises(DataIOError):
        load_jsonl("/nonexistent/trajectories.jsonl")


def test_points_outside_extent_are_clamped(write_lines):
    (sc,) = load_jsonl(write_lines([obs(0, 1, 0, -1.0, 0.5), obs(0, 2, 0, 0.5, 2.0)]), extent=(0, 1, 0, 1))
    assert sc.clamped == 2
    assert sc.trajectories[0].xy.tolist() == [[0.0, 0.5], [0.5, 1.0]]


# --- generation


def test_generation_is_deterministic():
    cfg = GenConfig(scenes=2)
    a, b = generate_synthetic(cfg, 5), generate_synthetic(cfg, 5)
    for sa, sb in zip(a, b):
        for ta, tb in zip(sa.trajectories, sb.trajectories):
            assert np.array_equal(ta.xy, tb.xy)


def test_rates_must_divide():
    with pytest.raises(ConfigError):
        generate_synthetic(GenConfig(scenes=1, i_rate=10, r_rate=3), 0)


def test_full_dropout_empties_r():
    scenes = generate_synthetic(GenConfig(scenes=3, r_dropout=1.0), 0)
    assert all(not s.trajectories for s in scenes if s.stream == "R")


def test_clean_r_matches_i_on_shared_frames():
    cfg = GenConfig(scenes=2, r_noise=0.0, r_dropout=0.0)
    scenes = generate_synthetic(cfg, 1)
    checked = 0
    for sc_i, sc_r in zip(scenes[::2], scenes[1::2]):
        for tr in sc_r.trajectories:
            ti = sc_i.trajectory(tr.ped_id)
            for f, xy in zip(tr.frames, tr.xy):
                assert np.array_equal(ti.at(f * cfg.ratio), xy)
                checked += 1
    assert checked > 0


def test_r_frames_map_onto_i_frames(small_scenes):
    ratio = GenConfig().ratio
    for sc_i, sc_r in zip(small_scenes[::2], small_scenes[1::2]):
        for tr in sc_r.trajectories:
            ti = sc_i.trajectory(tr.ped_id)
            assert set((tr.frames * ratio).tolist()) <= set(ti.frames.tolist())


def test_lone_pedestrian_walks_straight_to_goal():
    cfg = GenConfig(obstacles=[], extent=[0.0, 20.0, 0.0, 20.0])
    ((frames, xy),) = simulate_pedestrians([[2.0, 5.0]], [[18.0, 5.0]], [0], cfg, 200)
    step = np.linalg.norm(np.diff(xy, axis=0), axis=1)
    assert np.all(step <= cfg.max_speed / cfg.i_rate + 1e-12)
    assert np.all(np.diff(xy[:, 0]) > 0)
    assert np.allclose(xy[:, 1], 5.0)
    assert np.linalg.norm(xy[-1] - [18.0, 5.0]) < cfg.goal_radius + cfg.max_speed / cfg.i_rate


# --- split


def _fake_scenes(n):
    return [Scene(i, "I", [], (0, 1, 0, 1), 10.0) for i in range(n)]


def test_split_all_train():
    train, test, val = split(_fake_scenes(10), (1, 0, 0), 0)
    assert len(train) == 10 and not test and not val


def test_split_counts():
    assert [len(p) for p in split(_fake_scenes(100), (0.7, 0.25, 0.05), 3)] == [70, 25, 5]


def test_split_deterministic_and_disjoint(small_scenes):
    a = split(small_scenes, (0.5, 0.25, 0.25), 9)
    b = split(small_scenes, (0.5, 0.25, 0.25), 9)
    ids = [{s.scene_id for s in p} for p in a]
    assert ids == [{s.scene_id for s in p} for p in b]
    assert not (ids[0] & ids[1]) and not (ids[0] & ids[2]) and not (ids[1] & ids[2])


def test_split_empty():
    with pytest.raises(ContractError):
        split([], (0.7, 0.25, 0.05))


def test_split_bad_ratios():
    with pytest.raises(ConfigError):
        split(_fake_scenes(3), (0.5, 0.5, 0.5))


# --- samples


def test_samples_cover_both_windows(small_samples):
    assert small_samples
    for s in small_samples:
        assert len(s.frames) == 40
        assert np.all(np.diff(s.frames) == 1)
        tr = s.scene_i.trajectory(s.ped_id)
        assert all(tr.at(f) is not None for f in s.frames)


def test_short_tracks_skipped(small_scenes):
    assert build_samples(small_scenes, 20, 20, min_track_len=10_000) == []


def test_sample_arrays_shapes(sample_ir):
    assert sample_ir.gt.shape == (40, 2)
    assert set(sample_ir.streams) == {"I", "R"}
    s = sample_ir.streams["I"]
    assert s.tgt_pos.shape == (20, 2) and s.tgt_mask.all()
    assert sorted(s.order) == list(range(len(s.nb_ids) + 1))


def test_missing_r_scene_is_config_error(small_samples):
    s = small_samples[0]
    s_no_r = type(s)(**{**s.__dict__, "scene_r": None})
    with pytest.raises(ConfigError):
        sample_arrays(s_no_r, with_r=True)
