import math

import numpy as np
import pytest

from semfuse.geometry import CameraFrame, SemanticMesh, make_perspective


def random_rotation(rng):
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_rigid(rng, t_scale=2.0):
    m = np.eye(4)
    m[:3, :3] = random_rotation(rng)
    m[:3, 3] = rng.uniform(-t_scale, t_scale, size=3)
    return m


def unproject(px, py, depth, frame: CameraFrame):
    """Invert project_to_pixel at a known depth (test helper only).

    Assumes a diagonal-x/y projection as produced by make_perspective.
    """
    ndc_x = 2.0 * px / frame.width - 1.0
    ndc_y = 1.0 - 2.0 * py / frame.height
    p = frame.projection
    cam = np.array([ndc_x * depth / p[0, 0], ndc_y * depth / p[1, 1], -depth, 1.0])
    return (frame.camera_to_world @ cam)[:3]


def _moller_trumbore(origin, direction, v0, v1, v2):
    """Scalar both-sided ray/triangle test, written independently of the
    package's intersection code."""
    e1 = v1 - v0
    e2 = v2 - v0
    pvec = np.cross(direction, e2)
    det = e1 @ pvec
    if abs(det) < 1e-12:
        return None
    inv = 1.0 / det
    tvec = origin - v0
    u = (tvec @ pvec) * inv
    if u < 0.0 or u > 1.0:
        return None
    qvec = np.cross(tvec, e1)
    v = (direction @ qvec) * inv
    if v < 0.0 or u + v > 1.0:
        return None
    t = (e2 @ qvec) * inv
    return t if t > 0.0 else None


def raycast_depth_oracle(mesh: SemanticMesh, frame: CameraFrame, near=0.05):
    """Brute-force depth map: one camera ray per pixel center, nearest hit."""
    p = frame.projection
    depth = np.full((frame.height, frame.width), np.inf)
    c2w = frame.camera_to_world
    world_tris = [(mesh.vertices[a], mesh.vertices[b], mesh.vertices[c])
                  for a, b, c in mesh.triangles]
    for iy in range(frame.height):
        for ix in range(frame.width):
            ndc_x = 2.0 * (ix + 0.5) / frame.width - 1.0
            ndc_y = 1.0 - 2.0 * (iy + 0.5) / frame.height
            # direction with unit viewing-axis depth: t equals depth along -z
            d_cam = np.array([ndc_x / p[0, 0], ndc_y / p[1, 1], -1.0])
            d_world = c2w[:3, :3] @ d_cam
            origin = c2w[:3, 3]
            best = np.inf
            for v0, v1, v2 in world_tris:
                t = _moller_trumbore(origin, d_world, v0, v1, v2)
                if t is not None and near <= t < best:
                    best = t
            depth[iy, ix] = best
    return depth


def simple_frame(width=64, height=64, fov_y=math.pi / 2, c2w=None, frame_index=0):
    proj = make_perspective(fov_y, width / height, 0.05, 100.0)
    return CameraFrame(width, height, np.eye(4) if c2w is None else c2w, proj,
                       frame_index=frame_index)


def quad_mesh(z=-3.0, half=5.0):
    """Fronto-parallel square (two triangles) at camera depth -z."""
    v = np.array([[-half, -half, z], [half, -half, z],
                  [half, half, z], [-half, half, z]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    return SemanticMesh(v, t)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
