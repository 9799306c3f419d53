import json

import numpy as np
import pytest

from epimatch.errors import EpimatchError, InfeasibleCameraConfig
from epimatch.geometry import epipolar_lines, project
from epimatch.harness import matching_recall
from epimatch.io import (
    read_camera,
    read_keypoints,
    read_matches,
    read_pair,
    read_scene,
    write_keypoints,
    write_matches,
    write_scene,
)
from epimatch.matching import KeypointSet, MatchConfig, MatchPair, match_guided
from epimatch import synth
from epimatch.synth import border_distance, classify_epipole, synth_scene

W, H = synth.WIDTH, synth.HEIGHT


@pytest.mark.parametrize("regime", ["inside", "outside", "near-border"])
def test_regimes_are_hit(regime):
    for seed in range(5):
        s = synth_scene(200, 10, camera_config="epipole-" + regime, seed=seed)
        ex, ey = s.epipole.pixel
        assert classify_epipole(ex, ey, W, H) == regime
        if regime == "inside":
            assert 0 <= ex <= W and 0 <= ey <= H


def test_border_distance():
    assert border_distance(10, 10, 100, 100) == -10
    assert border_distance(-5, 50, 100, 100) == 5
    assert border_distance(103, 104, 100, 100) == 5


def test_unknown_regime():
    with pytest.raises(ValueError):
        synth_scene(10, camera_config="sideways")


def test_infeasible_regime(monkeypatch):
    monkeypatch.setattr(synth, "classify_epipole", lambda *a: None)
    with pytest.raises(InfeasibleCameraConfig):
        synth.synth_scene(10, seed=0)


def test_perfect_data_recall():
    s = synth_scene(1000, 0, descriptor_noise=0.0, pixel_noise_sigma=0.0, seed=1)
    for eps in (1.0, 50.0):
        m, _ = match_guided(s.keypoints1, s.keypoints2, s.fundamental,
                            MatchConfig(epsilon=eps, image_size=s.image_size, threads=1))
        assert matching_recall(m, s) == 1.0


def test_noise_keeps_true_pairs_near_lines():
    s = synth_scene(5000, 0, pixel_noise_sigma=2.0, seed=2)
    gt = s.ground_truth
    lines = epipolar_lines(s.fundamental, s.keypoints1.positions[gt[:, 0]])
    p = s.keypoints2.positions[gt[:, 1]]
    d = np.abs(lines[:, 0] * p[:, 0] + lines[:, 1] * p[:, 1] + lines[:, 2]) / np.hypot(lines[:, 0], lines[:, 1])
    assert np.mean(d <= 50.0) >= 0.99


def test_noise_is_truncated():
    sigma = 3.0
    s = synth_scene(3000, 0, pixel_noise_sigma=sigma, seed=3)
    gt = s.ground_truth
    X = s.points3d[gt[:, 2]]
    for cam, kps, col in ((s.camera1, s.keypoints1, 0), (s.camera2, s.keypoints2, 1)):
        uv, _ = project(cam.intrinsics, cam.r, cam.t, X)
        off = np.linalg.norm(kps.positions[gt[:, col]] - uv, axis=1)
        assert off.max() <= 3 * sigma + 0.5


def test_clutter_and_ground_truth_layout():
    s = synth_scene(500, 120, seed=4)
    assert len(s.keypoints1) == len(s.keypoints2) == 620
    assert s.ground_truth.shape == (500, 3)
    assert sorted(s.ground_truth[:, 2].tolist()) == list(range(500))
    p1, p2 = s.point_ids()
    assert (p1 < 0).sum() == (p2 < 0).sum() == 120
    assert s.clutter_fraction == pytest.approx(120 / 620)


def test_deterministic_and_camera_independent_of_n():
    a = synth_scene(300, 30, seed=5, pixel_noise_sigma=1.0)
    b = synth_scene(300, 30, seed=5, pixel_noise_sigma=1.0)
    c = synth_scene(900, 30, seed=5, pixel_noise_sigma=1.0)
    assert np.array_equal(a.keypoints1.positions, b.keypoints1.positions)
    assert np.array_equal(a.keypoints2.descriptors, b.keypoints2.descriptors)
    assert np.array_equal(a.ground_truth, b.ground_truth)
    assert np.array_equal(a.camera2.r, c.camera2.r) and np.array_equal(a.camera2.t, c.camera2.t)


def test_empty_scene():
    s = synth_scene(0, 0, seed=6)
    assert len(s.keypoints1) == 0 and s.ground_truth.shape == (0, 3)


def test_validation():
    with pytest.raises(ValueError):
        synth_scene(-1)
    with pytest.raises(ValueError):
        synth_scene(10, pixel_noise_sigma=-1)


# ---------------------------------------------------------------- files


def test_scene_round_trip(tmp_path):
    s = synth_scene(400, 40, pixel_noise_sigma=1.0, seed=7)
    write_scene(s, tmp_path / "scene")
    assert sorted(p.name for p in (tmp_path / "scene").iterdir()) == sorted(
        ["camera1.json", "camera2.json", "keypoints1.csv", "keypoints2.csv", "ground_truth.csv"])
    r = read_scene(tmp_path / "scene")
    assert np.array_equal(r.keypoints1.positions, s.keypoints1.positions)
    assert np.array_equal(r.keypoints2.descriptors, s.keypoints2.descriptors)
    assert np.array_equal(r.keypoints1.responses, s.keypoints1.responses)
    assert np.array_equal(r.ground_truth, s.ground_truth)
    assert np.array_equal(r.fundamental.f, s.fundamental.f)


def test_camera_json_layout(tmp_path):
    s = synth_scene(10, seed=8)
    write_scene(s, tmp_path)
    doc = json.loads((tmp_path / "camera2.json").read_text())
    assert set(doc) == {"K", "R", "t", "width", "height"}
    assert len(doc["K"]) == 9 and len(doc["R"]) == 9 and len(doc["t"]) == 3
    (tmp_path / "pair.json").write_text(json.dumps({"camera1": "camera1.json", "camera2": doc}))
    c1, c2 = read_pair(tmp_path / "pair.json")
    assert np.array_equal(c2.t, read_camera(tmp_path / "camera2.json").t)


def test_keypoint_csv_header_and_empty(tmp_path):
    ks = KeypointSet(np.empty((0, 2)), np.empty((0, 3)))
    write_keypoints(tmp_path / "k.csv", ks)
    assert (tmp_path / "k.csv").read_text() == "x,y,response,d0,d1,d2\n"
    back = read_keypoints(tmp_path / "k.csv")
    assert len(back) == 0 and back.dim == 3


def test_keypoint_csv_errors(tmp_path):
    (tmp_path / "bad.csv").write_text("a,b,c\n1,2,3\n")
    with pytest.raises(EpimatchError):
        read_keypoints(tmp_path / "bad.csv")
    with pytest.raises(EpimatchError):
        read_scene(tmp_path)


def test_match_csv_round_trip(tmp_path):
    ms = [MatchPair(0, 5, 0.125), MatchPair(3, 1, 1 / 3)]
    write_matches(tmp_path / "m.csv", ms)
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "query_index,train_index,distance"
    assert read_matches(tmp_path / "m.csv") == ms
