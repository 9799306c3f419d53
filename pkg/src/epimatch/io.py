"""Scene, camera, keypoint and match files."""

from __future__ import annotations

import csv
import json
import warnings
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, EpimatchError
from .geometry import CameraIntrinsics
from .matching import KeypointSet, MatchPair
from .synth import Camera, SyntheticScene

SCENE_FILES = ("camera1.json", "camera2.json", "keypoints1.csv", "keypoints2.csv", "ground_truth.csv")
FLOAT_FMT = "%.17g"


def _loadtxt(src, **kw) -> np.ndarray:
    # header-only files are valid (empty scenes); numpy warns about them
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UserWarning)
        return np.loadtxt(src, delimiter=",", ndmin=2, **kw)


def camera_to_dict(cam: Camera) -> dict:
    k = cam.intrinsics
    return {
        "K": [float(v) for v in k.k.ravel()],
        "R": [float(v) for v in np.asarray(cam.r).ravel()],
        "t": [float(v) for v in np.asarray(cam.t).ravel()],
        "width": int(k.width),
        "height": int(k.height),
    }


def camera_from_dict(obj: dict) -> Camera:
    try:
        k = CameraIntrinsics(np.reshape(obj["K"], (3, 3)), int(obj["width"]), int(obj["height"]))
        r = np.reshape(np.asarray(obj["R"], float), (3, 3))
        t = np.reshape(np.asarray(obj["t"], float), (3,))
    except (KeyError, ValueError, TypeError) as exc:
        raise EpimatchError(f"malformed camera record: {exc}") from exc
    return Camera(k, r, t)


def write_camera(path, cam: Camera) -> None:
    Path(path).write_text(json.dumps(camera_to_dict(cam), indent=2) + "\n")


def read_camera(path) -> Camera:
    return camera_from_dict(json.loads(Path(path).read_text()))


def read_pair(path) -> tuple[Camera, Camera]:
    """Pair file: {"camera1": <file name or inline camera>, "camera2": ...}."""
    path = Path(path)
    obj = json.loads(path.read_text())
    cams = []
    for key in ("camera1", "camera2"):
        ref = obj[key]
        cams.append(read_camera(path.parent / ref) if isinstance(ref, str) else camera_from_dict(ref))
    return cams[0], cams[1]


def write_keypoints(path, kps: KeypointSet) -> None:
    dim = kps.dim if len(kps) else kps.descriptors.shape[1]
    header = ",".join(["x", "y", "response"] + [f"d{i}" for i in range(dim)])
    data = np.column_stack([kps.positions, kps.responses, kps.descriptors]) if len(kps) else np.empty((0, 3 + dim))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        np.savetxt(fh, data, fmt=FLOAT_FMT, delimiter=",")


def read_keypoints(path) -> KeypointSet:
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        if header[:3] != ["x", "y", "response"]:
            raise EpimatchError(f"{path}: header must start with x,y,response")
        dim = len(header) - 3
        if header[3:] != [f"d{i}" for i in range(dim)]:
            raise EpimatchError(f"{path}: descriptor columns must be d0..d{dim - 1}")
        data = _loadtxt(fh)
    if data.size == 0:
        data = np.empty((0, 3 + dim))
    if data.shape[1] != 3 + dim:
        raise DimensionMismatch(f"{path}: rows have {data.shape[1]} columns, header has {3 + dim}")
    return KeypointSet(data[:, :2], data[:, 3:], data[:, 2])


def write_matches(path, matches) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["query_index", "train_index", "distance"])
        for m in matches:
            w.writerow([m.query_index, m.train_index, FLOAT_FMT % m.distance])


def read_matches(path) -> list[MatchPair]:
    with open(path, newline="") as fh:
        return [MatchPair(int(r["query_index"]), int(r["train_index"]), float(r["distance"]))
                for r in csv.DictReader(fh)]


def write_scene(scene: SyntheticScene, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_camera(d / "camera1.json", scene.camera1)
    write_camera(d / "camera2.json", scene.camera2)
    write_keypoints(d / "keypoints1.csv", scene.keypoints1)
    write_keypoints(d / "keypoints2.csv", scene.keypoints2)
    with open(d / "ground_truth.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index1", "index2", "point3d_index"])
        w.writerows(scene.ground_truth.tolist())
    return d


def read_scene(directory) -> SyntheticScene:
    d = Path(directory)
    missing = [f for f in SCENE_FILES if not (d / f).is_file()]
    if missing:
        raise EpimatchError(f"{d}: missing scene files {', '.join(missing)}")
    gt = _loadtxt(d / "ground_truth.csv", skiprows=1, dtype=np.int64)
    if gt.size == 0:
        gt = np.empty((0, 3), np.int64)
    kp1 = read_keypoints(d / "keypoints1.csv")
    kp2 = read_keypoints(d / "keypoints2.csv")
    if len(kp1) and len(kp2) and kp1.dim != kp2.dim:
        raise DimensionMismatch("descriptor dimensions differ between the two images")
    n_clutter = len(kp1) - gt.shape[0]
    return SyntheticScene(
        points3d=None,
        camera1=read_camera(d / "camera1.json"),
        camera2=read_camera(d / "camera2.json"),
        keypoints1=kp1,
        keypoints2=kp2,
        ground_truth=gt.reshape(-1, 3),
        clutter_fraction=(n_clutter / len(kp1)) if len(kp1) else 0.0,
    )
