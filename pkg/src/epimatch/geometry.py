"""Two-view epipolar geometry.

Conventions: a point X1 in camera-1 coordinates maps to camera 2 as
``X2 = R @ X1 + t``.  Pixel coordinates are real valued and homogeneous
points are lifted as ``(x, y, 1)``.  Epipolar lines ``(a, b, c)`` describe
``a*x + b*y + c = 0`` in image 2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    DegenerateLine,
    DegenerateTranslation,
    EpimatchError,
    EpipoleAtInfinity,
)

ROTATION_TOL = 1e-9
RANK_TOL = 1e-9
INFINITY_TOL = 1e-12
DEGENERATE_LINE_TOL = 1e-12

# Per unit of noise level: degrees per rotation axis, metres per translation axis.
ROTATION_STEP_DEG = 1.0
TRANSLATION_STEP_M = 0.25


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=float).reshape(shape)
    arr.setflags(write=False)
    return arr


class ImagePoint(NamedTuple):
    x: float
    y: float


@dataclass(frozen=True)
class CameraIntrinsics:
    k: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        k = _frozen(self.k, (3, 3))
        object.__setattr__(self, "k", k)
        if not np.all(np.isfinite(k)):
            raise EpimatchError("intrinsics must be finite")
        if k[2, 2] != 1.0 or k[0, 0] <= 0 or k[1, 1] <= 0:
            raise EpimatchError("intrinsics need k[2,2] = 1 and positive focal lengths")
        if k[1, 0] != 0 or k[2, 0] != 0 or k[2, 1] != 0:
            raise EpimatchError("intrinsics must be upper triangular")
        if self.width <= 0 or self.height <= 0:
            raise EpimatchError("image size must be positive")

    @classmethod
    def from_focal(cls, focal: float, width: int, height: int, cx=None, cy=None):
        cx = width / 2.0 if cx is None else cx
        cy = height / 2.0 if cy is None else cy
        return cls(np.array([[focal, 0, cx], [0, focal, cy], [0, 0, 1.0]]), width, height)

    @property
    def center(self) -> ImagePoint:
        return ImagePoint(self.width / 2.0, self.height / 2.0)


@dataclass(frozen=True)
class RelativePose:
    r: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        r = _frozen(self.r, (3, 3))
        t = _frozen(self.t, (3,))
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "t", t)
        if np.abs(r.T @ r - np.eye(3)).max() > ROTATION_TOL:
            raise EpimatchError("rotation is not orthonormal")
        if abs(np.linalg.det(r) - 1.0) > ROTATION_TOL:
            raise EpimatchError("rotation must have determinant +1")


@dataclass(frozen=True)
class FundamentalMatrix:
    f: np.ndarray

    def __post_init__(self):
        f = _frozen(self.f, (3, 3))
        object.__setattr__(self, "f", f)
        if not np.all(np.isfinite(f)):
            raise EpimatchError("fundamental matrix must be finite")
        s = np.linalg.svd(f, compute_uv=False)
        if s[0] == 0:
            raise EpimatchError("fundamental matrix is zero")
        if s[2] > RANK_TOL * s[0]:
            raise EpimatchError(f"fundamental matrix is not rank 2 (s3/s1 = {s[2] / s[0]:.3g})")

    @property
    def transpose(self) -> "FundamentalMatrix":
        return FundamentalMatrix(self.f.T)


@dataclass(frozen=True)
class EpipolarLine:
    a: float
    b: float
    c: float

    def __post_init__(self):
        if not self.a * self.a + self.b * self.b > 0:
            raise DegenerateLine("line needs a^2 + b^2 > 0")

    def scaled(self, s: float) -> "EpipolarLine":
        return EpipolarLine(s * self.a, s * self.b, s * self.c)

    def as_array(self) -> np.ndarray:
        return np.array([self.a, self.b, self.c])


@dataclass(frozen=True)
class Epipole:
    homogeneous: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "homogeneous", _frozen(self.homogeneous, (3,)))

    @property
    def is_finite(self) -> bool:
        h = self.homogeneous
        return abs(h[2]) > INFINITY_TOL * np.linalg.norm(h)

    @property
    def pixel(self) -> ImagePoint:
        if not self.is_finite:
            raise EpipoleAtInfinity("epipole is at infinity; no pixel position")
        h = self.homogeneous
        return ImagePoint(h[0] / h[2], h[1] / h[2])


def skew(v) -> np.ndarray:
    """Cross-product matrix: ``skew(v) @ w == np.cross(v, w)``."""
    x, y, z = np.asarray(v, dtype=float)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def fundamental_from_pose(
    k1: CameraIntrinsics, k2: CameraIntrinsics, pose: RelativePose
) -> FundamentalMatrix:
    if np.linalg.norm(pose.t) <= 1e-12:
        raise DegenerateTranslation("translation is zero; epipolar geometry is undefined")
    k1_inv = np.linalg.inv(k1.k)
    k2_inv = np.linalg.inv(k2.k)
    return FundamentalMatrix(k2_inv.T @ skew(pose.t) @ pose.r @ k1_inv)


def epipolar_line(f: FundamentalMatrix, p) -> EpipolarLine:
    x, y = float(p[0]), float(p[1])
    a, b, c = f.f @ np.array([x, y, 1.0])
    scale = np.linalg.norm(f.f) * np.sqrt(x * x + y * y + 1.0)
    if np.hypot(a, b) <= DEGENERATE_LINE_TOL * scale:
        raise DegenerateLine(f"point ({x}, {y}) coincides with the left epipole")
    return EpipolarLine(float(a), float(b), float(c))


def epipolar_lines(f: FundamentalMatrix, points) -> np.ndarray:
    """Vectorised ``F @ (x, y, 1)`` for an (n, 2) array; returns (n, 3) coefficients."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    F = f.f
    a = F[0, 0] * pts[:, 0] + F[0, 1] * pts[:, 1] + F[0, 2]
    b = F[1, 0] * pts[:, 0] + F[1, 1] * pts[:, 1] + F[1, 2]
    c = F[2, 0] * pts[:, 0] + F[2, 1] * pts[:, 1] + F[2, 2]
    return np.stack([a, b, c], axis=1)


def _pixel_scale(F: np.ndarray) -> float:
    # Ratio of the linear to the quadratic block: the typical pixel magnitude
    # implied by F.  Used to balance F before extracting its null vector.
    quad = np.linalg.norm(F[:2, :2])
    lin = np.linalg.norm(F[:2, 2]) + np.linalg.norm(F[2, :2])
    if quad == 0 or lin == 0:
        return 1.0
    return lin / (2.0 * quad)


def epipole_of(f: FundamentalMatrix) -> Epipole:
    """Right epipole: the null vector of F^T (all lines F p pass through it).

    Raises EpipoleAtInfinity when the null vector has a vanishing last
    component.
    """
    s = _pixel_scale(f.f)
    T = np.diag([s, s, 1.0])
    balanced = T @ f.f @ T
    u, _, _ = np.linalg.svd(balanced)
    e = T @ u[:, 2]
    e = e / np.linalg.norm(e)
    if e[np.argmax(np.abs(e))] < 0:
        e = -e
    epipole = Epipole(e)
    if not epipole.is_finite:
        raise EpipoleAtInfinity(
            "epipole is at infinity (homogeneous w = %.3g); the angular index "
            "needs a finite epipole" % e[2]
        )
    return epipole


def point_line_distance(l: EpipolarLine, p) -> float:
    return abs(l.a * p[0] + l.b * p[1] + l.c) / np.sqrt(l.a * l.a + l.b * l.b)


def point_line_distances(line, points) -> np.ndarray:
    """Distances from an (n, 2) point array to one line given as (a, b, c)."""
    a, b, c = (float(v) for v in line)
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.abs(a * pts[:, 0] + b * pts[:, 1] + c) / np.sqrt(a * a + b * b)


def orthonormalize(r) -> np.ndarray:
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=float))
    out = u @ vt
    if np.linalg.det(out) < 0:
        u[:, -1] = -u[:, -1]
        out = u @ vt
    return out


def perturb_pose(pose: RelativePose, level: float, seed: int) -> RelativePose:
    """Random pose error of the given noise level.

    Each rotation axis is perturbed uniformly within +-level degrees
    (intrinsic X-Y-Z composition, applied on the left) and each translation
    component is offset uniformly within +-0.25*level metres.
    """
    if level < 0:
        raise ValueError("noise level must be non-negative")
    if level == 0:
        return RelativePose(pose.r.copy(), pose.t.copy())
    rng = np.random.default_rng(seed)
    angles = rng.uniform(-level * ROTATION_STEP_DEG, level * ROTATION_STEP_DEG, size=3)
    offsets = rng.uniform(-level * TRANSLATION_STEP_M, level * TRANSLATION_STEP_M, size=3)
    delta = Rotation.from_euler("XYZ", angles, degrees=True).as_matrix()
    return RelativePose(orthonormalize(delta @ pose.r), pose.t + offsets)


def project(k: CameraIntrinsics, r, t, points3d) -> tuple[np.ndarray, np.ndarray]:
    """Pinhole projection of world points; returns (pixels (n, 2), depth (n,))."""
    X = np.asarray(points3d, dtype=float).reshape(-1, 3) @ np.asarray(r).T + np.asarray(t)
    z = X[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = (X @ k.k.T)[:, :2] / z[:, None]
    return uv, z
