"""Core mesh and camera types plus world->pixel projection.

Coordinate conventions (fixed for the whole system, both endpoints):
  - World and camera frames are right-handed; the camera looks down -Z,
    +X right, +Y up.  Viewing-axis depth of a camera-space point is -z.
  - Pixel origin is the top-left corner, x right, y down.  A continuous
    pixel coordinate (x, y) is inside the image iff 0 <= x < width and
    0 <= y < height; flooring gives the integer pixel index (a pixel
    covers [x, x+1)).
  - 4x4 matrices are stored row-major and applied to column vectors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, InvalidCameraError

UNKNOWN_NAME = "Unknown"


@dataclass(frozen=True)
class ClassSet:
    """Ordered set of class names with a designated Unknown class."""

    names: tuple[str, ...]

    def __post_init__(self):
        names = tuple(self.names)
        object.__setattr__(self, "names", names)
        if len(set(names)) != len(names):
            raise ContractError(f"duplicate class names: {names}")
        if names.count(UNKNOWN_NAME) != 1:
            raise ContractError(f"class set must contain {UNKNOWN_NAME!r} exactly once")

    @property
    def unknown_index(self) -> int:
        return self.names.index(UNKNOWN_NAME)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ContractError(f"unknown class name {name!r}") from None

    def __len__(self) -> int:
        return len(self.names)

    def __iter__(self):
        return iter(self.names)


DEFAULT_CLASSES = ClassSet(("Lamp", "Chair", UNKNOWN_NAME))


def uniform_distribution(n_classes: int) -> np.ndarray:
    if n_classes < 1:
        raise ContractError("class set must be non-empty")
    return np.full(n_classes, 1.0 / n_classes, dtype=np.float64)


@dataclass
class SemanticMesh:
    """Triangle mesh whose vertices may carry class distributions and/or
    ground-truth labels.

    vertices:      (V, 3) float64, meters, world frame
    triangles:     (T, 3) integer vertex indices
    distributions: (V, L) float64 rows summing to 1, or None
    labels:        (V,) integer ground-truth class indices, or None
    """

    vertices: np.ndarray
    triangles: np.ndarray
    distributions: np.ndarray | None = None
    labels: np.ndarray | None = None

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3))
        self.triangles = np.ascontiguousarray(np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3))
        if self.distributions is not None:
            self.distributions = np.asarray(self.distributions, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def validate(self) -> "SemanticMesh":
        if self.n_triangles and (self.triangles.min() < 0 or self.triangles.max() >= self.n_vertices):
            raise ContractError("triangle index out of range")
        t = self.triangles
        if self.n_triangles and np.any((t[:, 0] == t[:, 1]) & (t[:, 1] == t[:, 2])):
            raise ContractError("degenerate triangle (three identical indices)")
        if self.distributions is not None:
            if self.distributions.ndim != 2 or len(self.distributions) != self.n_vertices:
                raise ContractError("distribution array must be (V, L)")
            sums = self.distributions.sum(axis=1)
            if self.n_vertices and np.abs(sums - 1.0).max() > 1e-9:
                raise ContractError("vertex distributions must sum to 1 within 1e-9")
        if self.labels is not None and len(self.labels) != self.n_vertices:
            raise ContractError("label list length must equal vertex count")
        return self

    def copy(self) -> "SemanticMesh":
        return SemanticMesh(
            self.vertices.copy(),
            self.triangles.copy(),
            None if self.distributions is None else self.distributions.copy(),
            None if self.labels is None else self.labels.copy(),
        )


@dataclass(frozen=True)
class CameraFrame:
    """One capture pose: image size, camera-to-world transform and projection."""

    width: int
    height: int
    camera_to_world: np.ndarray
    projection: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        c2w = np.asarray(self.camera_to_world, dtype=np.float64).reshape(4, 4).copy()
        proj = np.asarray(self.projection, dtype=np.float64).reshape(4, 4).copy()
        c2w.flags.writeable = False
        proj.flags.writeable = False
        object.__setattr__(self, "camera_to_world", c2w)
        object.__setattr__(self, "projection", proj)
        if self.width <= 0 or self.height <= 0:
            raise ContractError("image dimensions must be positive")
        if self.frame_index < 0:
            raise ContractError("frame_index must be non-negative")
        r = c2w[:3, :3]
        if np.abs(r @ r.T - np.eye(3)).max() > 1e-6:
            raise InvalidCameraError("camera_to_world upper-left 3x3 is not orthonormal")
        if np.abs(c2w[3] - np.array([0.0, 0.0, 0.0, 1.0])).max() > 1e-9:
            raise InvalidCameraError("camera_to_world bottom row must be [0 0 0 1]")

    def world_to_camera_matrix(self) -> np.ndarray:
        """Rigid inverse of camera_to_world."""
        r = self.camera_to_world[:3, :3]
        t = self.camera_to_world[:3, 3]
        inv = np.eye(4)
        inv[:3, :3] = r.T
        inv[:3, 3] = -r.T @ t
        return inv


def world_to_camera(point, frame: CameraFrame):
    """Map a world point into the camera frame.

    Returns (camera_point, depth) with depth = -z_cam (camera looks down -Z).
    """
    p = np.asarray(point, dtype=np.float64).reshape(3)
    cam = frame.world_to_camera_matrix() @ np.append(p, 1.0)
    return cam[:3], -cam[2]


def points_to_camera(points: np.ndarray, frame: CameraFrame):
    """Vectorized world_to_camera for an (N, 3) array."""
    p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    w2c = frame.world_to_camera_matrix()
    cam = p @ w2c[:3, :3].T + w2c[:3, 3]
    return cam, -cam[:, 2]


def project_to_pixel(point, frame: CameraFrame):
    """Project a world point to a continuous pixel coordinate.

    Returns (pixel_x, pixel_y, depth) or None when the point is at or
    behind the camera (depth <= 0).
    """
    cam, depth = world_to_camera(point, frame)
    if depth <= 0.0:
        return None
    clip = frame.projection @ np.append(cam, 1.0)
    w = clip[3]
    if w <= 0.0:
        return None
    ndc = clip[:3] / w
    px = (ndc[0] + 1.0) * 0.5 * frame.width
    py = (1.0 - ndc[1]) * 0.5 * frame.height
    return px, py, depth


def project_points(points: np.ndarray, frame: CameraFrame):
    """Vectorized projection of (N, 3) world points.

    Returns (pixel_xy (N,2), depth (N,), valid (N,) bool); pixel values of
    invalid rows are undefined.
    """
    cam, depth = points_to_camera(points, frame)
    clip = cam @ frame.projection[:3, :3].T + frame.projection[:3, 3]
    w = cam @ frame.projection[3, :3] + frame.projection[3, 3]
    valid = (depth > 0.0) & (w > 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        ndc = clip / w[:, None]
    pix = np.empty((len(cam), 2))
    pix[:, 0] = (ndc[:, 0] + 1.0) * 0.5 * frame.width
    pix[:, 1] = (1.0 - ndc[:, 1]) * 0.5 * frame.height
    return pix, depth, valid


def make_perspective(fov_y: float, aspect: float, near: float, far: float) -> np.ndarray:
    """Standard symmetric-frustum perspective matrix for the conventions above.

    NDC z runs from -1 at the near plane to +1 at the far plane.
    """
    if not (0.0 < fov_y < math.pi):
        raise ContractError("fov_y must be in (0, pi)")
    if not (0.0 < near < far):
        raise ContractError("require 0 < near < far")
    if aspect <= 0.0:
        raise ContractError("aspect must be positive")
    f = 1.0 / math.tan(fov_y / 2.0)
    m = np.zeros((4, 4))
    m[0, 0] = f / aspect
    m[1, 1] = f
    m[2, 2] = (far + near) / (near - far)
    m[2, 3] = 2.0 * far * near / (near - far)
    m[3, 2] = -1.0
    return m


def load_matrix(path) -> np.ndarray:
    """Read a 4x4 matrix from a sidecar file: 16 whitespace-separated decimals, row-major."""
    values = np.loadtxt(path, dtype=np.float64).reshape(-1)
    if values.size != 16:
        raise ContractError(f"matrix file {path} must hold exactly 16 numbers")
    return values.reshape(4, 4)


def save_matrix(path, matrix: np.ndarray) -> None:
    m = np.asarray(matrix, dtype=np.float64).reshape(16)
    with open(path, "w") as fh:
        fh.write(" ".join("%.17g" % v for v in m) + "\n")
