import numpy as np
import pytest

from aad.errors import ConfigError, InputError
from aad.frame_io import load_sequence
from aad.synthetic import Intruder, SceneSpec, render_sequence, scene_from_config, write_sequence
from aad.evaluation import load_frame_labels


def small(**kw):
    base = dict(width=48, height=32, frames=12, walkers=3, seed=7)
    base.update(kw)
    return SceneSpec(**base)


def test_no_intruder_all_normal():
    frames, truth = render_sequence(small())
    assert len(frames) == 12 and not truth.any()


def test_intruder_interval():
    _, truth = render_sequence(SceneSpec(width=32, height=24, frames=200, walkers=1, intruder=Intruder(150, 180, 3.0)))
    assert truth.sum() == 31
    assert truth[150] == 1 and truth[180] == 1 and truth[149] == 0 and truth[181] == 0


def test_deterministic():
    a, ta = render_sequence(small(intruder=Intruder(3, 8, 4.0)))
    b, tb = render_sequence(small(intruder=Intruder(3, 8, 4.0)))
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a, b))
    assert (ta == tb).all()
    c, _ = render_sequence(small(seed=8))
    assert any(x.data.tobytes() != y.data.tobytes() for x, y in zip(a, c))


def test_frames_integral_and_in_range():
    frames, _ = render_sequence(small(noise_sigma=30.0))
    for f in frames:
        assert f.data.min() >= 0 and f.data.max() <= 255
        assert (f.data == np.rint(f.data)).all()


def test_intruder_moves_only_inside_interval():
    spec = small(frames=20, walkers=0, noise_sigma=0.0, intruder=Intruder(5, 10, 3.0))
    frames, _ = render_sequence(spec)
    diffs = [np.abs(frames[t].data - frames[t - 1].data).max() for t in range(1, 20)]
    moving = [t for t, d in zip(range(1, 20), diffs) if d > 0]
    assert moving == list(range(6, 11))


def test_validation():
    with pytest.raises(InputError):
        small(frames=2)
    with pytest.raises(InputError):
        small(intruder=Intruder(1, 5, 0.5))
    with pytest.raises(InputError):
        small(intruder=Intruder(5, 50, 4.0))


def test_write_roundtrip(tmp_path):
    frames, truth = render_sequence(small(intruder=Intruder(4, 6, 3.0)))
    write_sequence(frames, truth, tmp_path)
    back = load_sequence(tmp_path)
    assert all(np.array_equal(a.data, b.data) for a, b in zip(frames, back))
    assert load_frame_labels(tmp_path / "truth.txt").tolist() == truth.tolist()


def test_config(tmp_path):
    p = tmp_path / "scene.ini"
    p.write_text(
        "[scene]\nwidth = 64\nheight = 48\nframes = 10\nwalkers = 2\nseed = 3\n"
        "intruder_entry = 2\nintruder_exit = 5\nintruder_speed = 4\nintruder_direction = 90\n"
    )
    spec = scene_from_config(p)
    assert (spec.width, spec.height, spec.frames, spec.seed) == (64, 48, 10, 3)
    assert spec.intruder == Intruder(2, 5, 4.0, 90.0)
    p.write_text("[scene]\nwidth = wide\n")
    with pytest.raises(ConfigError):
        scene_from_config(p)
    p.write_text("[other]\n")
    with pytest.raises(ConfigError):
        scene_from_config(p)
