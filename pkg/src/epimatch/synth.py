"""Synthetic two-view scenes with exact ground truth.

Camera 1 sits at the world origin looking down +z.  Camera 2 looks at the
centre of a box of 3D points from a position chosen so the right epipole
(camera 1's centre seen by camera 2) lands in the requested regime.

Descriptors model repeated texture: points come in groups sharing one base
descriptor, so a true match competes with look-alike "twins" elsewhere in the
image; each point adds a small offset of its own (twin_spread) and each view
adds its own Gaussian perturbation (descriptor_noise).  Clutter keypoints get
independent random descriptors and no ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleCameraConfig
from .geometry import (
    CameraIntrinsics,
    Epipole,
    FundamentalMatrix,
    RelativePose,
    epipole_of,
    fundamental_from_pose,
    project,
)
from .matching import KeypointSet

WIDTH = 6048
HEIGHT = 4032
FOCAL = 4000.0
DESCRIPTOR_DIM = 128
DEPTH_RANGE = (10.0, 30.0)
BASELINE_RANGE = (1.0, 3.0)
MAX_ATTEMPTS = 1000

REGIMES = ("inside", "outside", "near-border")


@dataclass(frozen=True)
class Camera:
    """Intrinsics plus world-to-camera pose: x_cam = r @ x_world + t."""

    intrinsics: CameraIntrinsics
    r: np.ndarray
    t: np.ndarray

    @property
    def center(self) -> np.ndarray:
        return -self.r.T @ self.t


@dataclass
class SyntheticScene:
    points3d: np.ndarray | None
    camera1: Camera
    camera2: Camera
    keypoints1: KeypointSet
    keypoints2: KeypointSet
    ground_truth: np.ndarray  # (g, 3) int: index1, index2, point3d_index
    pixel_noise_sigma: float | None = None
    clutter_fraction: float | None = None
    regime: str | None = None

    @property
    def pose(self) -> RelativePose:
        r1, t1 = self.camera1.r, self.camera1.t
        r2, t2 = self.camera2.r, self.camera2.t
        r = r2 @ r1.T
        return RelativePose(r, t2 - r @ t1)

    @property
    def fundamental(self) -> FundamentalMatrix:
        return fundamental_from_pose(self.camera1.intrinsics, self.camera2.intrinsics, self.pose)

    @property
    def epipole(self) -> Epipole:
        return epipole_of(self.fundamental)

    @property
    def image_size(self) -> tuple[int, int]:
        k = self.camera2.intrinsics
        return k.width, k.height

    def point_ids(self) -> tuple[np.ndarray, np.ndarray]:
        """Generating 3D point per keypoint in each image, -1 for clutter."""
        p1 = np.full(len(self.keypoints1), -1, np.int64)
        p2 = np.full(len(self.keypoints2), -1, np.int64)
        gt = self.ground_truth
        p1[gt[:, 0]] = gt[:, 2]
        p2[gt[:, 1]] = gt[:, 2]
        return p1, p2


def normalize_regime(name: str) -> str:
    key = name.lower().removeprefix("epipole-").replace("_", "-")
    if key not in REGIMES:
        raise ValueError(f"unknown epipole regime {name!r}; choose from {REGIMES}")
    return key


def border_distance(x: float, y: float, width: float, height: float) -> float:
    """Signed distance to the image border: negative inside, positive outside."""
    dx = max(-x, x - width)
    dy = max(-y, y - height)
    if dx <= 0 and dy <= 0:
        return max(dx, dy)
    return math.hypot(max(dx, 0.0), max(dy, 0.0))


def classify_epipole(x: float, y: float, width: float, height: float) -> str | None:
    """Regime of an epipole position, or None if it falls between regimes.

    inside: within the central 80% of both axes; near-border: within 10% of
    the image height of the border on either side; outside: more than two
    image widths beyond the border (clear lateral motion).
    """
    if 0.1 * width <= x <= 0.9 * width and 0.1 * height <= y <= 0.9 * height:
        return "inside"
    d = border_distance(x, y, width, height)
    if abs(d) <= 0.1 * height:
        return "near-border"
    if d >= 2.0 * width:
        return "outside"
    return None


def look_at(center, target, roll: float = 0.0) -> np.ndarray:
    """World-to-camera rotation for a camera at center looking at target (y down)."""
    z = np.asarray(target, float) - np.asarray(center, float)
    z /= np.linalg.norm(z)
    x = np.cross([0.0, 1.0, 0.0], z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    r = np.stack([x, y, z])
    c, s = math.cos(roll), math.sin(roll)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]) @ r


def _target_epipole(rng, regime, width, height):
    if regime == "inside":
        return rng.uniform([0.1 * width, 0.1 * height], [0.9 * width, 0.9 * height])
    if regime == "near-border":
        side = rng.integers(4)
        off = rng.uniform(-0.1 * height, 0.1 * height)
        if side == 0:
            return np.array([off, rng.uniform(0, height)])
        if side == 1:
            return np.array([width + off, rng.uniform(0, height)])
        if side == 2:
            return np.array([rng.uniform(0, width), off])
        return np.array([rng.uniform(0, width), height + off])
    # outside: mostly sideways motion
    phi = rng.uniform(0, 2 * math.pi)
    radius = rng.uniform(4.0, 12.0) * width
    return np.array([width / 2 + radius * math.cos(phi), height / 2 + radius * math.sin(phi)])


def sample_cameras(regime: str, rng, width=WIDTH, height=HEIGHT, focal=FOCAL):
    """Return (camera1, camera2) whose right epipole lies in the regime."""
    regime = normalize_regime(regime)
    k = CameraIntrinsics.from_focal(focal, width, height)
    cam1 = Camera(k, np.eye(3), np.zeros(3))
    target = np.array([0.0, 0.0, np.mean(DEPTH_RANGE)])
    k_inv = np.linalg.inv(k.k)
    for _ in range(MAX_ATTEMPTS):
        e_star = _target_epipole(rng, regime, width, height)
        ray = k_inv @ np.array([e_star[0], e_star[1], 1.0])
        sign = 1.0 if rng.random() < 0.5 else -1.0
        baseline = rng.uniform(*BASELINE_RANGE)
        c2 = sign * baseline * ray / np.linalg.norm(ray)
        roll = math.radians(rng.uniform(-5.0, 5.0))
        r2 = look_at(c2, target, roll)
        t2 = -r2 @ c2
        cam2 = Camera(k, r2, t2)
        h = k.k @ t2  # camera 1's centre projected into camera 2
        if abs(h[2]) <= 1e-9 * np.linalg.norm(h):
            continue
        if classify_epipole(h[0] / h[2], h[1] / h[2], width, height) == regime:
            return cam1, cam2
    raise InfeasibleCameraConfig(f"could not place camera 2 for regime {regime!r} in {MAX_ATTEMPTS} attempts")


def _visible(uv, z, width, height):
    return (z > 0.1) & (uv[:, 0] >= 0) & (uv[:, 0] <= width) & (uv[:, 1] >= 0) & (uv[:, 1] <= height)


def sample_points(n, cam1: Camera, cam2: Camera, rng) -> np.ndarray:
    """n world points visible in both images: uniform pixels in image 1, uniform depth."""
    k = cam1.intrinsics
    w, h = k.width, k.height
    k_inv = np.linalg.inv(k.k)
    out = []
    have = 0
    rounds = 0
    while have < n:
        rounds += 1
        if rounds > MAX_ATTEMPTS:
            raise InfeasibleCameraConfig("camera 2 sees too few of the sampled points")
        m = max(64, 2 * (n - have))
        px = rng.uniform([0, 0], [w, h], (m, 2))
        depth = rng.uniform(*DEPTH_RANGE, m)
        rays = np.column_stack([px, np.ones(m)]) @ k_inv.T
        X = rays * depth[:, None]
        uv, z = project(cam2.intrinsics, cam2.r, cam2.t, X)
        X = X[_visible(uv, z, cam2.intrinsics.width, cam2.intrinsics.height)]
        out.append(X)
        have += X.shape[0]
    return np.concatenate(out)[:n] if n else np.empty((0, 3))


def _unit_rows(g):
    nrm = np.linalg.norm(g, axis=1, keepdims=True)
    return g / np.where(nrm > 0, nrm, 1.0)


def _truncated_noise(rng, n, sigma):
    if sigma == 0 or n == 0:
        return np.zeros((n, 2))
    g = rng.normal(0.0, sigma, (n, 2))
    r = np.linalg.norm(g, axis=1, keepdims=True)
    lim = 3.0 * sigma
    return np.where(r > lim, g * (lim / np.where(r > 0, r, 1.0)), g)


def synth_scene(n_points: int, n_clutter: int = 0, descriptor_noise: float = 0.15,
                pixel_noise_sigma: float = 0.0, camera_config: str = "inside", seed: int = 0,
                repetition: int = 4, twin_spread: float = 0.1,
                dim: int = DESCRIPTOR_DIM) -> SyntheticScene:
    """Generate a scene; the camera pair depends on seed and regime only."""
    if n_points < 0 or n_clutter < 0:
        raise ValueError("counts must be non-negative")
    if pixel_noise_sigma < 0 or descriptor_noise < 0:
        raise ValueError("noise levels must be non-negative")
    if twin_spread < 0:
        raise ValueError("twin spread must be non-negative")
    if repetition < 1:
        raise ValueError("repetition must be >= 1")
    regime = normalize_regime(camera_config)
    cam_rng, pts_rng, desc_rng, noise_rng, clutter_rng, perm_rng = (
        np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(6)
    )
    cam1, cam2 = sample_cameras(regime, cam_rng)
    X = sample_points(n_points, cam1, cam2, pts_rng)
    w, h = cam1.intrinsics.width, cam1.intrinsics.height

    uv1, _ = project(cam1.intrinsics, cam1.r, cam1.t, X)
    uv2, _ = project(cam2.intrinsics, cam2.r, cam2.t, X)
    uv1 = uv1 + _truncated_noise(noise_rng, n_points, pixel_noise_sigma)
    uv2 = uv2 + _truncated_noise(noise_rng, n_points, pixel_noise_sigma)

    n_groups = max(1, math.ceil(n_points / repetition))
    base = _unit_rows(desc_rng.normal(size=(n_groups, dim)))
    group = desc_rng.permutation(np.arange(n_points) % n_groups)
    own = base[group] + (twin_spread / math.sqrt(dim)) * desc_rng.normal(size=(n_points, dim))
    scale = descriptor_noise / math.sqrt(dim)
    d1 = _unit_rows(own + scale * desc_rng.normal(size=(n_points, dim)))
    d2 = _unit_rows(own + scale * desc_rng.normal(size=(n_points, dim)))

    c1 = clutter_rng.uniform([0, 0], [w, h], (n_clutter, 2))
    c2 = clutter_rng.uniform([0, 0], [w, h], (n_clutter, 2))
    cd1 = _unit_rows(clutter_rng.normal(size=(n_clutter, dim)))
    cd2 = _unit_rows(clutter_rng.normal(size=(n_clutter, dim)))

    total = n_points + n_clutter
    perm1 = perm_rng.permutation(total)
    perm2 = perm_rng.permutation(total)
    resp = perm_rng.uniform(0.0, 1.0, (2, total))

    def assemble(uv, d, cu, cd, perm, r):
        pos = np.concatenate([uv, cu])[perm]
        desc = np.concatenate([d, cd])[perm] if total else np.empty((0, dim))
        return KeypointSet(pos, desc, r)

    kp1 = assemble(uv1, d1, c1, cd1, perm1, resp[0])
    kp2 = assemble(uv2, d2, c2, cd2, perm2, resp[1])
    # perm maps new index -> old; invert to place the true points
    inv1 = np.argsort(perm1)
    inv2 = np.argsort(perm2)
    ids = np.arange(n_points)
    gt = np.column_stack([inv1[ids], inv2[ids], ids]).astype(np.int64).reshape(-1, 3)
    gt = gt[np.argsort(gt[:, 0], kind="stable")]
    return SyntheticScene(
        points3d=X,
        camera1=cam1,
        camera2=cam2,
        keypoints1=kp1,
        keypoints2=kp2,
        ground_truth=gt,
        pixel_noise_sigma=float(pixel_noise_sigma),
        clutter_fraction=(n_clutter / total) if total else 0.0,
        regime=regime,
    )
