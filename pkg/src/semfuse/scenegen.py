"""Deterministic synthetic indoor scenes with exact ground-truth labels, and
camera trajectories standing in for a head-mounted scan.

The room is an axis-aligned box shell (labeled Unknown); chairs are box
assemblies (seat, back, four legs) and lamps a cone-on-cylinder primitive
sized like a small table lamp (shade diameter 0.22 m).  Surfaces are grid
triangulated to approximately the configured density; parts of one object
are joined by snapping a contact vertex so each object forms one connected
component.  Everything is a pure function of the seed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .errors import ContractError, SceneSpecError
from .geometry import (ClassSet, CameraFrame, DEFAULT_CLASSES, SemanticMesh,
                       make_perspective)

log = logging.getLogger(__name__)

DEFAULT_ROOM_M = 4.0
DEFAULT_DENSITY = 800.0  # triangles per m^3 of scan volume
DEFAULT_MIN_RANGE_M = 0.85
DEFAULT_IMAGE_SIZE = (896, 504)
DEFAULT_FOV_Y = math.radians(70.0)
# Objects sit slightly above the visibility tolerance (0.01 m) so that base
# vertices never pass the depth test against the floor surface behind them;
# otherwise contact vertices systematically observe floor pixels and fuse
# toward Unknown.
OBJECT_FLOOR_LIFT = 0.012
ORBIT_EYE_HEIGHT = 1.5  # camera height above the floor (head height)
ORBIT_HEIGHT_AMP = 0.6  # sinusoidal sweep amplitude around that height
ORBIT_TARGET_HEIGHT = 0.6  # aim point above the floor (typical object height)


@dataclass
class ObjectSpec:
    class_name: str
    shape: str  # "chair" | "lamp"
    position: tuple  # (x, z) on the floor, room centered at origin
    yaw: float = 0.0
    scale: float = 1.0


@dataclass
class SceneSpec:
    room: float = DEFAULT_ROOM_M  # cubic room edge length, centered at origin
    objects: list = field(default_factory=list)
    density: float = DEFAULT_DENSITY
    seed: int = 0
    class_set: ClassSet = DEFAULT_CLASSES

    def __post_init__(self):
        if self.density <= 0:
            raise SceneSpecError("density must be > 0")
        half = self.room / 2.0
        for obj in self.objects:
            x, z = obj.position
            if abs(x) >= half or abs(z) >= half:
                raise SceneSpecError(f"object at {obj.position} outside room")

    def area_density(self) -> float:
        """Triangles per m^2: volumetric target spread over the room surface.

        density [tri/m^3] * volume / shell_area, so the default room realizes
        approximately density * volume triangles in total.
        """
        volume = self.room ** 3
        shell_area = 6.0 * self.room ** 2
        return self.density * volume / shell_area


def _grid_cell(area_density: float) -> float:
    # two triangles per square cell
    return math.sqrt(2.0 / area_density)


def _grid_quad(origin, du, dv, nu, nv):
    """Rectangle origin + s*du + t*dv triangulated into an nu x nv grid."""
    origin = np.asarray(origin, dtype=np.float64)
    du = np.asarray(du, dtype=np.float64)
    dv = np.asarray(dv, dtype=np.float64)
    s = np.linspace(0.0, 1.0, nu + 1)
    t = np.linspace(0.0, 1.0, nv + 1)
    verts = (origin[None, None, :] + s[:, None, None] * du[None, None, :]
             + t[None, :, None] * dv[None, None, :]).reshape(-1, 3)
    i, j = np.meshgrid(np.arange(nu), np.arange(nv), indexing="ij")
    a = (i * (nv + 1) + j).ravel()
    b = a + (nv + 1)
    tris = np.concatenate([np.stack([a, b, a + 1], axis=1),
                           np.stack([b, b + 1, a + 1], axis=1)])
    return verts, tris


def _merge(parts):
    verts = []
    tris = []
    off = 0
    for v, t in parts:
        verts.append(v)
        tris.append(t + off)
        off += len(v)
    return np.concatenate(verts), np.concatenate(tris)


def _box(lo, hi, cell):
    """Axis-aligned box shell; adjacent faces share edge coordinates exactly."""
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    size = hi - lo
    n = [max(1, int(round(size[i] / cell))) for i in range(3)]
    ex = np.array([size[0], 0, 0])
    ey = np.array([0, size[1], 0])
    ez = np.array([0, 0, size[2]])
    faces = [
        (lo, ex, ez, n[0], n[2]),            # bottom (y = lo)
        (lo + ey, ex, ez, n[0], n[2]),       # top
        (lo, ex, ey, n[0], n[1]),            # front (z = lo)
        (lo + ez, ex, ey, n[0], n[1]),       # back
        (lo, ey, ez, n[1], n[2]),            # left (x = lo)
        (lo + ex, ey, ez, n[1], n[2]),       # right
    ]
    return _weld(_merge([_grid_quad(*f) for f in faces]))


def _weld(part):
    """Merge exactly coincident vertices (grid seams are bit-identical)."""
    verts, tris = part
    view = np.ascontiguousarray(verts).view([("", verts.dtype)] * 3).ravel()
    _, first, inverse = np.unique(view, return_index=True, return_inverse=True)
    return verts[first], inverse[tris]


def _attach(parts):
    """Snap one vertex of each later part onto the nearest earlier vertex so
    the welded assembly is a single connected component."""
    base_v, base_t = parts[0]
    acc = [(base_v, base_t)]
    pool = base_v
    for v, t in parts[1:]:
        v = v.copy()
        tree = cKDTree(pool)
        dist, nearest = tree.query(v)
        snap = int(np.argmin(dist))
        v[snap] = pool[nearest[snap]]
        acc.append((v, t))
        pool = np.concatenate([pool, v])
    return _weld(_merge(acc))


def _transform(part, yaw, translate):
    v, t = part
    c, s = math.cos(yaw), math.sin(yaw)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return v @ rot.T + np.asarray(translate, dtype=np.float64), t


def chair_mesh(cell, scale: float = 1.0):
    """Box-assembly chair: seat, back and four legs, one connected component."""
    s = scale
    seat_h, seat_w, seat_t = 0.42 * s, 0.45 * s, 0.05 * s
    leg = 0.05 * s
    back_h = 0.45 * s
    parts = [
        _box((-seat_w / 2, seat_h - seat_t, -seat_w / 2),
             (seat_w / 2, seat_h, seat_w / 2), cell),
        _box((-seat_w / 2, seat_h, seat_w / 2 - seat_t),
             (seat_w / 2, seat_h + back_h, seat_w / 2), cell),
    ]
    for sx in (-1, 1):
        for sz in (-1, 1):
            x = sx * (seat_w / 2 - leg / 2)
            z = sz * (seat_w / 2 - leg / 2)
            parts.append(_box((x - leg / 2, 0.0, z - leg / 2),
                              (x + leg / 2, seat_h - seat_t, z + leg / 2), cell))
    return _attach(parts)


def _ring(radius, y, n_seg):
    ang = np.linspace(0.0, 2.0 * math.pi, n_seg, endpoint=False)
    return np.stack([radius * np.cos(ang), np.full(n_seg, float(y)),
                     radius * np.sin(ang)], axis=1)


def _tube(r0, y0, r1, y1, n_seg):
    """Open frustum between two rings."""
    verts = np.concatenate([_ring(r0, y0, n_seg), _ring(r1, y1, n_seg)])
    i = np.arange(n_seg)
    j = (i + 1) % n_seg
    tris = np.concatenate([np.stack([i, n_seg + i, j], axis=1),
                           np.stack([n_seg + i, n_seg + j, j], axis=1)])
    return verts, tris


def _disk(radius, y, n_seg):
    rim = _ring(radius, y, n_seg)
    verts = np.concatenate([rim, [[0.0, y, 0.0]]])
    i = np.arange(n_seg)
    tris = np.stack([i, (i + 1) % n_seg, np.full(n_seg, n_seg)], axis=1)
    return verts, tris


def lamp_mesh(cell, scale: float = 1.0):
    """Table lamp: base disk, cylindrical pole, conical shade (0.22 m across)."""
    s = scale
    shade_r, shade_top_r = 0.11 * s, 0.035 * s
    shade_h = 0.22 * s
    pole_r, base_r = 0.015 * s, 0.08 * s
    pole_h = 0.24 * s
    n_seg = max(12, int(round(2.0 * math.pi * shade_r / cell)))
    parts = [
        _disk(base_r, 0.0, n_seg),
        _tube(pole_r, 0.0, pole_r, pole_h, max(8, n_seg // 2)),
        _tube(shade_r, pole_h, shade_top_r, pole_h + shade_h, n_seg),
    ]
    return _attach(parts)


def room_shell(room: float, cell):
    half = room / 2.0
    return _box((-half, -half, -half), (half, half, half), cell)


def generate_scene(spec: SceneSpec) -> SemanticMesh:
    """Build the labeled scene mesh; deterministic given the spec."""
    cell = _grid_cell(spec.area_density())
    cs = spec.class_set
    parts = []
    labels = []
    rv, rt = room_shell(spec.room, cell)
    parts.append((rv, rt))
    labels.append(np.full(len(rv), cs.unknown_index, dtype=np.int64))
    half = spec.room / 2.0
    for obj in spec.objects:
        if obj.shape == "chair":
            part = chair_mesh(cell, obj.scale)
        elif obj.shape == "lamp":
            part = lamp_mesh(cell, obj.scale)
        else:
            raise SceneSpecError(f"unknown shape {obj.shape!r}")
        x, z = obj.position
        v, t = _transform(part, obj.yaw, (x, -half + OBJECT_FLOOR_LIFT, z))
        if np.abs(v[:, [0, 2]]).max() >= half or v[:, 1].max() >= half:
            raise SceneSpecError(f"object at {obj.position} does not fit in the room")
        parts.append((v, t))
        labels.append(np.full(len(v), cs.index(obj.class_name), dtype=np.int64))
    verts, tris = _merge(parts)
    mesh = SemanticMesh(verts, tris, labels=np.concatenate(labels))
    return mesh.validate()


def default_scene(seed: int = 0, chairs: int = 2, lamps: int = 1,
                  room: float = DEFAULT_ROOM_M, density: float = DEFAULT_DENSITY,
                  class_set: ClassSet = DEFAULT_CLASSES) -> SceneSpec:
    """Place objects at seeded, mutually separated floor positions."""
    rng = np.random.default_rng([abs(int(seed)), 0xC5])
    placed = []
    objects = []
    half = room / 2.0
    margin = 0.7
    todo = [("Chair", "chair")] * chairs + [("Lamp", "lamp")] * lamps
    for class_name, shape in todo:
        for _ in range(200):
            pos = tuple(rng.uniform(-half + margin, half - margin, size=2))
            if all(math.hypot(pos[0] - p[0], pos[1] - p[1]) > 1.0 for p in placed):
                break
        else:
            raise SceneSpecError("could not place objects without overlap")
        placed.append(pos)
        objects.append(ObjectSpec(class_name, shape, pos,
                                  yaw=float(rng.uniform(0.0, 2.0 * math.pi))))
    return SceneSpec(room=room, objects=objects, density=density, seed=seed,
                     class_set=class_set)


@dataclass
class Trajectory:
    frames: list
    min_range: float = DEFAULT_MIN_RANGE_M

    def __len__(self):
        return len(self.frames)

    def __iter__(self):
        return iter(self.frames)


def look_at(eye, target, up=(0.0, 1.0, 0.0)) -> np.ndarray:
    """camera_to_world with the camera at eye looking toward target (-Z forward)."""
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    n = np.linalg.norm(forward)
    if n == 0.0:
        raise ContractError("look_at target coincides with eye")
    z = -forward / n
    up = np.asarray(up, dtype=np.float64)
    x = np.cross(up, z)
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(np.array([0.0, 0.0, 1.0]), z)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    c2w = np.eye(4)
    c2w[:3, 0], c2w[:3, 1], c2w[:3, 2], c2w[:3, 3] = x, y, z, eye
    return c2w


def _check_min_range(positions, scene: SemanticMesh | None, min_range: float):
    if scene is None or scene.n_vertices == 0:
        return
    tree = cKDTree(scene.vertices)
    dists, _ = tree.query(np.asarray(positions))
    bad = int((dists < min_range).sum())
    if bad:
        log.warning("%d/%d trajectory poses closer than %.2f m to the scene "
                    "(nearest %.2f m)", bad, len(positions), min_range, dists.min())


def generate_trajectory(scene: SemanticMesh | None, style: str = "orbit",
                        n_frames: int = 24, seed: int = 0, radius: float = 1.5,
                        height_amp: float | None = None,
                        image_size=DEFAULT_IMAGE_SIZE, fov_y: float = DEFAULT_FOV_Y,
                        near: float = 0.05, far: float = 100.0,
                        min_range: float = DEFAULT_MIN_RANGE_M,
                        waypoints=None) -> Trajectory:
    """Camera poses for a scan pass.

    orbit: poses on a circle around the scene's horizontal center at head
    height above the floor, aimed at object height, with the camera height
    swept sinusoidally (three vertical cycles per revolution) so floor and
    upper walls get covered.  waypoints: piecewise-linear interpolation of
    (eye, target) pairs.
    """
    if n_frames < 1:
        raise ContractError("n_frames must be >= 1")
    width, height = image_size
    proj = make_perspective(fov_y, width / height, near, far)

    if scene is not None and scene.n_vertices:
        center = 0.5 * (scene.vertices.min(axis=0) + scene.vertices.max(axis=0))
        floor_y = float(scene.vertices[:, 1].min())
    else:
        center = np.zeros(3)
        floor_y = -DEFAULT_ROOM_M / 2.0
    if height_amp is None:
        height_amp = ORBIT_HEIGHT_AMP

    eyes = []
    targets = []
    if style == "orbit":
        eye_y = floor_y + ORBIT_EYE_HEIGHT
        target = np.array([center[0], floor_y + ORBIT_TARGET_HEIGHT, center[2]])
        for i in range(n_frames):
            theta = 2.0 * math.pi * i / n_frames
            y = eye_y + height_amp * math.sin(3.0 * theta)
            eyes.append(np.array([center[0] + radius * math.cos(theta), y,
                                  center[2] + radius * math.sin(theta)]))
            targets.append(target)
    elif style == "waypoints":
        if not waypoints or len(waypoints) < 2:
            raise ContractError("waypoints style needs >= 2 (eye, target) pairs")
        wp_e = np.asarray([w[0] for w in waypoints], dtype=np.float64)
        wp_t = np.asarray([w[1] for w in waypoints], dtype=np.float64)
        s = np.linspace(0.0, len(waypoints) - 1.0, n_frames)
        lo = np.clip(s.astype(int), 0, len(waypoints) - 2)
        frac = (s - lo)[:, None]
        eyes = list(wp_e[lo] * (1 - frac) + wp_e[lo + 1] * frac)
        targets = list(wp_t[lo] * (1 - frac) + wp_t[lo + 1] * frac)
    else:
        raise ContractError(f"unknown trajectory style {style!r}")

    if scene is not None and scene.n_vertices:
        tree = cKDTree(scene.vertices)
        for i, eye in enumerate(eyes):
            d, _ = tree.query(eye)
            if d < 0.05:  # inside geometry: push back toward the orbit center
                log.warning("pose %d inside geometry; pushing out", i)
                away = eye - center
                away /= max(np.linalg.norm(away), 1e-12)
                eyes[i] = eye - 0.3 * away

    _check_min_range(eyes, scene, min_range)
    frames = [CameraFrame(width, height, look_at(e, t), proj, frame_index=i)
              for i, (e, t) in enumerate(zip(eyes, targets))]
    return Trajectory(frames=frames, min_range=min_range)


def save_trajectory(path, trajectory: Trajectory) -> None:
    """One pose per line: 16 row-major camera_to_world decimals."""
    with open(path, "w") as fh:
        for frame in trajectory:
            fh.write(" ".join("%.17g" % v for v in frame.camera_to_world.ravel()) + "\n")


def load_trajectory(path, image_size=DEFAULT_IMAGE_SIZE, fov_y: float = DEFAULT_FOV_Y,
                    near: float = 0.05, far: float = 100.0) -> Trajectory:
    width, height = image_size
    proj = make_perspective(fov_y, width / height, near, far)
    frames = []
    with open(path) as fh:
        for i, line in enumerate(fh):
            if not line.strip():
                continue
            vals = np.asarray(line.split(), dtype=np.float64)
            if vals.size != 16:
                raise ContractError(f"{path}:{i + 1}: expected 16 values per pose")
            frames.append(CameraFrame(width, height, vals.reshape(4, 4), proj,
                                      frame_index=len(frames)))
    return Trajectory(frames=frames)
