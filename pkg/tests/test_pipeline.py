import numpy as np
import pytest

from aad.detector import DetectorConfig
from aad.errors import ConfigError, ShapeError
from aad.fields import FrameBuffer
from aad.frame_io import save_flow_cache
from aad.object_map import DEFAULT_CLASSES, DetectionRecord
from aad.optical_flow import FlowParams
from aad.pipeline import RunArtifacts, cached_flow, flow_cache_path, object_flag_sequence, run_blocks, run_frames
from aad.synthetic import Intruder, SceneSpec, render_sequence

CFG = DetectorConfig(warmup=5)


@pytest.fixture(scope="module")
def scene():
    return render_sequence(SceneSpec(width=64, height=48, frames=16, walkers=3, intruder=Intruder(10, 13, 4.0), seed=1))


def test_run_frames_shapes(scene):
    frames, _ = scene
    res = run_frames(frames, CFG)
    assert len(res.maps) == 14
    assert [m.frame_index for m in res.maps] == list(range(2, 16))
    assert res.grid.shape == (12, 16)
    assert res.artifacts.num_frames == 16
    assert res.recomputed == 14


def test_run_blocks_reproduces_run(scene):
    frames, _ = scene
    res = run_frames(frames, CFG)
    maps, grid = run_blocks(res.artifacts.blocks, CFG, None, res.artifacts.frame_indices)
    assert grid.identical(res.grid)
    assert [m.labels.tobytes() for m in maps] == [m.labels.tobytes() for m in res.maps]


def test_cache_transparency(scene, tmp_path):
    frames, _ = scene
    plain = run_frames(frames, CFG)
    first = run_frames(frames, CFG, cache_dir=tmp_path)
    second = run_frames(frames, CFG, cache_dir=tmp_path)
    assert first.recomputed == 14 and second.recomputed == 0
    for r in (first, second):
        assert r.grid.identical(plain.grid)
        assert r.frame_table() == plain.frame_table()


def test_corrupt_cache_recomputed(scene, tmp_path, caplog):
    frames, _ = scene
    flow, computed = cached_flow(frames[0], frames[2], FlowParams(), tmp_path)
    assert computed
    path = flow_cache_path(tmp_path, 0, 2)
    path.write_bytes(path.read_bytes()[:-3])
    again, computed = cached_flow(frames[0], frames[2], FlowParams(), tmp_path)
    assert computed and again.identical(flow)
    assert "recomputing" in caplog.text


def test_mismatched_cache_entry_recomputed(scene, tmp_path):
    frames, _ = scene
    flow, _ = cached_flow(frames[0], frames[2], FlowParams(), None)
    save_flow_cache(flow_cache_path(tmp_path, 0, 2), flow, (5, 7))
    _, computed = cached_flow(frames[0], frames[2], FlowParams(), tmp_path)
    assert computed


def test_mixed_shapes_rejected():
    frames = [FrameBuffer(np.zeros((16, 16)), 0), FrameBuffer(np.zeros((16, 16)), 1), FrameBuffer(np.zeros((16, 20)), 2)]
    with pytest.raises(ShapeError):
        run_frames(frames, CFG)


def test_use_objects_needs_records(scene):
    with pytest.raises(ConfigError):
        run_frames(scene[0], DetectorConfig(use_objects=True))


def test_object_flags_use_history_before_frame():
    person, car = DEFAULT_CLASSES.index("person"), DEFAULT_CLASSES.index("car")
    recs = [DetectionRecord(t, person, 0.9, (0, 0, 16, 16)) for t in range(25)]
    recs.append(DetectionRecord(25, car, 0.9, (0, 0, 8, 8)))
    # a car at the same frame as the 21st person must not see its own frame's counts
    flags, omap = object_flag_sequence(recs, [19, 20, 25], (16, 16), (4, 4), DetectorConfig())
    assert not flags[0].any() and not flags[1].any()
    assert flags[2][:2, :2].all() and flags[2].sum() == 4
    assert omap.total[0, 0] == 26


def test_artifacts_roundtrip(scene, tmp_path):
    frames, _ = scene
    art = run_frames(frames, CFG).artifacts
    art.save(tmp_path / "a.npz")
    back = RunArtifacts.load(tmp_path / "a.npz")
    assert back.num_frames == art.num_frames and back.objflags is None
    assert (back.frame_indices == art.frame_indices).all()
    assert all(np.array_equal(a.vx, b.vx) and np.array_equal(a.vy, b.vy) for a, b in zip(art.blocks, back.blocks))
