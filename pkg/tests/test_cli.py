import csv
import dataclasses
import json

import numpy as np
import pytest

from epimatch import cli
from epimatch.io import read_matches, read_scene, write_scene
from epimatch.synth import synth_scene


def run(*argv):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def scene_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("scene")
    assert cli.main(["synth", "--n", "3000", "--clutter", "300", "--seed", "3", str(d)]) == 0
    return d


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_synth_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run("synth", "--n", 500, "--clutter", 50, "--seed", 11, tmp_path / name) == 0
    for f in ("camera1.json", "camera2.json", "keypoints1.csv", "keypoints2.csv", "ground_truth.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_synth_empty(tmp_path):
    assert run("synth", "--n", 0, "--clutter", 0, tmp_path / "e") == 0
    lines = (tmp_path / "e" / "keypoints1.csv").read_text().splitlines()
    assert len(lines) == 1 and lines[0].startswith("x,y,response,d0")
    assert (tmp_path / "e" / "ground_truth.csv").read_text().splitlines() == ["index1,index2,point3d_index"]


def test_synth_regime_reported(tmp_path, capsys):
    assert run("synth", "--n", 50, "--epipole", "outside", tmp_path / "o") == 0
    assert "regime outside" in capsys.readouterr().out


def test_angular_and_brute_agree(scene_dir, tmp_path):
    assert run("match", scene_dir, "--method", "angular", "--out", tmp_path / "a.csv") == 0
    assert run("match", scene_dir, "--method", "brute", "--out", tmp_path / "b.csv") == 0
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert len(read_matches(tmp_path / "a.csv")) > 0


def test_match_default_output(scene_dir, capsys):
    assert run("match", scene_dir, "--method", "grid") == 0
    assert (scene_dir / "matches_grid.csv").is_file()
    assert "matching_recall" in capsys.readouterr().out


def test_thread_count_does_not_change_output(scene_dir, tmp_path):
    assert run("match", scene_dir, "--threads", 1, "--out", tmp_path / "t1.csv") == 0
    assert run("match", scene_dir, "--threads", 2, "--out", tmp_path / "t2.csv") == 0
    assert (tmp_path / "t1.csv").read_bytes() == (tmp_path / "t2.csv").read_bytes()


@pytest.mark.parametrize("argv", [
    ["--epsilon", "-1"], ["--epsilon", "0"], ["--tau", "1.5"], ["--method", "kdtree"],
    ["--bins", "0"], ["--neighbor-width", "-1"], ["--threads", "0"],
])
def test_bad_arguments_exit_2(scene_dir, argv, capsys):
    with pytest.raises(SystemExit) as exc:
        run("match", scene_dir, *argv)
    assert exc.value.code == 2


def test_hash_options(scene_dir, tmp_path, capsys):
    assert run("match", scene_dir, "--method", "hash", "--bins", 4, "--neighbor-width", 2,
               "--candidate-recall", "--out", tmp_path / "h.csv") == 0
    out = capsys.readouterr().out
    # 2*2+1 >= 4 bins: every bin is searched
    assert float(out.split("candidate_recall")[1].split()[0]) == 1.0
    assert run("match", scene_dir, "--method", "hash", "--bins", 64, "--neighbor-width", 0,
               "--candidate-recall", "--out", tmp_path / "h2.csv") == 0
    out = capsys.readouterr().out
    assert float(out.split("candidate_recall")[1].split()[0]) < 1.0


def test_missing_scene_exits_1(tmp_path, capsys):
    assert run("match", tmp_path / "nothing") == 1
    assert "error" in capsys.readouterr().err


def test_epipole_at_infinity_hint(tmp_path, capsys):
    s = synth_scene(200, 0, seed=1)
    cam2 = dataclasses.replace(s.camera2, r=np.eye(3), t=np.array([1.0, 0.0, 0.0]))
    write_scene(dataclasses.replace(s, camera2=cam2), tmp_path / "inf")
    assert run("match", tmp_path / "inf", "--method", "angular") == 1
    err = capsys.readouterr().err
    assert "grid" in err and "brute" in err
    assert run("match", tmp_path / "inf", "--method", "grid", "--out", tmp_path / "g.csv") == 0


def test_sweep_tolerance(scene_dir, tmp_path):
    out = tmp_path / "tol.csv"
    assert run("sweep", "tolerance", "--scene", scene_dir, "--epsilons", "10,50,200", "--out", out) == 0
    r = rows(out)
    assert len(r) == 3 * 4
    assert {x["method"] for x in r} == {"angular", "hash", "grid", "brute"}
    assert all(float(x["candidate_recall"]) == 1.0 for x in r if x["method"] in ("angular", "brute"))


def test_sweep_noise_keeps_level_order(scene_dir, tmp_path):
    out = tmp_path / "noise.csv"
    assert run("sweep", "noise", "--scene", scene_dir, "--levels", "2,0,1",
               "--methods", "angular,unguided", "--out", out) == 0
    r = rows(out)
    assert [float(x["parameter"]) for x in r if x["method"] == "angular"] == [2.0, 0.0, 1.0]


def test_sweep_scale_small(tmp_path):
    out = tmp_path / "scale.csv"
    assert run("sweep", "scale", "--n", "500,1000", "--methods", "angular,brute",
               "--batches", 2, "--out", out) == 0
    r = rows(out)
    assert [(x["method"], float(x["parameter"])) for x in r] == [
        ("angular", 500.0), ("brute", 500.0), ("angular", 1000.0), ("brute", 1000.0)]


def test_sweep_defaults():
    ap = cli.build_parser()
    args = ap.parse_args(["sweep", "scale"])
    cli._sweep_defaults(args, ap)
    assert args.n == [5000, 10000, 25000, 50000]
    assert args.epipole == "outside" and args.epsilon == 50.0
    args = ap.parse_args(["sweep", "noise"])
    cli._sweep_defaults(args, ap)
    assert args.epsilon == 200.0 and "unguided" in args.methods


def test_bench(scene_dir, tmp_path, capsys):
    out = tmp_path / "bench.csv"
    assert run("bench", "--scene", scene_dir, "--methods", "angular,hash", "--batches", 2, "--out", out) == 0
    assert [x["experiment"] for x in rows(out)] == ["bench", "bench"]


def test_dump_tree(scene_dir, tmp_path):
    out = tmp_path / "tree.json"
    assert run("dump-tree", scene_dir, "--epsilon", 25, "--out", out) == 0
    doc = json.loads(out.read_text())
    assert doc["audit"] == "ok"
    s = read_scene(scene_dir)
    assert doc["keypoint_count"] == len(s.keypoints2)
