import dataclasses

import numpy as np
import pytest

from inceptext import geometry as geo
from inceptext import synth
from inceptext.synth import SceneConfig, generate_scene


def _angle(quad):
    e = quad[1] - quad[0]
    if np.hypot(*e) < np.hypot(*(quad[2] - quad[1])):
        e = quad[2] - quad[1]
    a = np.degrees(np.arctan2(e[1], e[0]))
    # fold a direction into (-90, 90]
    while a <= -90:
        a += 180
    while a > 90:
        a -= 180
    return a


def _pixel_mask(quad, H, W):
    ys, xs = np.mgrid[0:H, 0:W] + 0.5
    pts = np.stack([xs.ravel(), ys.ravel()], axis=1)
    return geo.point_in_convex(pts, quad).reshape(H, W)


def test_same_seed_index_identical():
    cfg = SceneConfig(seed=5)
    a, b = generate_scene(cfg, 17), generate_scene(cfg, 17)
    assert a.image.tobytes() == b.image.tobytes()
    assert all(np.array_equal(p, q) for p, q in zip(a.quads, b.quads))
    c = generate_scene(cfg, 18)
    assert a.image.tobytes() != c.image.tobytes()


def test_scene_types_and_range():
    s = generate_scene(SceneConfig(), 0)
    assert s.image.shape == (3, 320, 320) and s.image.dtype == np.float32
    assert 0 <= s.image.min() and s.image.max() <= 1
    assert 1 <= len(s.quads) <= 4
    assert synth.scene_is_valid(s)


def test_fixed_zero_angle_axis_aligned():
    cfg = SceneConfig(min_angle=0.0, max_angle=0.0, height=160, width=160, max_short=30)
    for i in range(20):
        for q in generate_scene(cfg, i).quads:
            e1, e2 = q[1] - q[0], q[2] - q[1]
            assert min(abs(e1[0]), abs(e1[1])) < 1e-9
            assert min(abs(e2[0]), abs(e2[1])) < 1e-9


@pytest.mark.slow
def test_orientation_histogram_covers_bins():
    cfg = SceneConfig(height=96, width=96, max_short=20, max_boxes=1, seed=3)
    angles = [_angle(generate_scene(cfg, i).quads[0]) for i in range(1000)]
    hist, _ = np.histogram(angles, bins=12, range=(-90, 90))
    assert np.count_nonzero(hist) >= 8


def test_margin_and_overlap_invariants():
    cfg = SceneConfig(seed=11)
    for i in range(25):
        s = generate_scene(cfg, i)
        for q in s.quads:
            assert geo.polygon_area(q) > 0
            assert q.min() >= 2 and q[:, 0].max() <= 318 and q[:, 1].max() <= 318
            assert geo.signed_area(q) > 0  # clockwise on screen
            e1, e2 = q[1] - q[0], q[2] - q[1]
            assert abs(e1 @ e2) < 1e-6 * np.hypot(*e1) * np.hypot(*e2)
        for a in range(len(s.quads)):
            for b in range(a + 1, len(s.quads)):
                assert geo.polygon_iou(s.quads[a], s.quads[b]) <= 0.05


def test_contrast_gap_per_box():
    cfg = SceneConfig(seed=2, contrast=0.3)
    for i in range(8):
        s = generate_scene(cfg, i)
        gray = s.image[0]
        masks = [_pixel_mask(q, 320, 320) for q in s.quads]
        background = ~np.any(masks, axis=0)
        for m in masks:
            if m.sum() == 0:
                continue
            assert gray[m].mean() - gray[background].mean() >= cfg.contrast


def test_overcrowded_config_errors():
    cfg = SceneConfig(height=32, width=32, min_boxes=4, max_boxes=4, min_short=12, max_short=14)
    with pytest.raises(RuntimeError):
        generate_scene(cfg, 0)


@pytest.mark.parametrize("bad", [dict(min_boxes=0), dict(min_short=50, max_short=20),
                                 dict(min_aspect=0.5), dict(max_angle=100.0), dict(contrast=0.0),
                                 dict(height=8), dict(seed=-1)])
def test_invalid_configs(bad):
    with pytest.raises(ValueError):
        generate_scene(dataclasses.replace(SceneConfig(), **bad), 0)


def test_config_dict_round_trip():
    cfg = SceneConfig(height=64, width=96, max_boxes=2, contrast=0.25, seed=9)
    assert SceneConfig.from_dict({k: str(v) for k, v in cfg.to_dict().items()}) == cfg


def test_write_dataset_counts_and_round_trip(tmp_path):
    cfg = SceneConfig(height=96, width=112, max_boxes=2, max_short=16, seed=4)
    manifest = synth.write_dataset(cfg, 10, tmp_path, start=3)
    files = sorted(p.name for p in tmp_path.iterdir())
    assert len([f for f in files if f.endswith(".ppm")]) == 10
    assert len([f for f in files if f.startswith("gt_")]) == 10
    assert manifest.name == "manifest.txt" and manifest.exists()
    assert len(files) == 21
    back_cfg, pairs = synth.read_manifest(tmp_path)
    assert back_cfg == cfg
    assert [p[0].name for p in pairs] == [f"img_{i}.ppm" for i in range(3, 13)]
    for i, scene in zip(range(3, 13), synth.load_dataset(manifest)):
        ref = generate_scene(cfg, i)
        assert scene.image.tobytes() == ref.image.tobytes()
        assert len(scene.quads) == len(ref.quads)
        for q, r in zip(scene.quads, ref.quads):
            np.testing.assert_array_equal(q, r)


def test_dataset_reproducible_bytes(tmp_path):
    cfg = SceneConfig(height=64, width=64, max_boxes=1, max_short=16, seed=1)
    synth.write_dataset(cfg, 3, tmp_path / "a")
    synth.write_dataset(cfg, 3, tmp_path / "b")
    for name in ("img_0.ppm", "img_2.ppm", "gt_1.txt", "manifest.txt"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_ppm_header(tmp_path):
    img = np.random.default_rng(0).integers(0, 256, (3, 5, 7)).astype(np.float32) / 255
    synth.write_ppm(tmp_path / "x.ppm", img)
    data = (tmp_path / "x.ppm").read_bytes()
    assert data.startswith(b"P6\n7 5\n255\n")
    assert len(data) == len(b"P6\n7 5\n255\n") + 105
    np.testing.assert_array_equal(synth.read_ppm(tmp_path / "x.ppm"), img)


def test_read_ppm_rejects_garbage(tmp_path):
    (tmp_path / "bad.ppm").write_bytes(b"P3\n1 1\n255\n0 0 0\n")
    with pytest.raises(ValueError):
        synth.read_ppm(tmp_path / "bad.ppm")
    (tmp_path / "short.ppm").write_bytes(b"P6\n4 4\n255\n\x00\x00")
    with pytest.raises(ValueError):
        synth.read_ppm(tmp_path / "short.ppm")


def test_annotation_parser():
    q = synth.parse_quad_line("1,2,3,2,3,4,1,4")
    np.testing.assert_array_equal(q, [[1, 2], [3, 2], [3, 4], [1, 4]])
    with pytest.raises(ValueError):
        synth.parse_quad_line("1,2,3,2,3,4,1")
    line = synth.format_quad_line(np.array([[0.1, 0.2], [1 / 3, 0], [2, 2], [0, 2]]))
    np.testing.assert_array_equal(synth.parse_quad_line(line),
                                  [[0.1, 0.2], [1 / 3, 0], [2, 2], [0, 2]])
