"""Gaze-ray selection of labeled components and the lamp actuator state
machine that replaces the microcontroller-driven lamp."""

from __future__ import annotations

import os
import subprocess
import time
from dataclasses import dataclass, replace

import numpy as np

from .errors import ContractError

RAY_EPSILON = 1e-9  # determinant cutoff; grazing hits below this are misses


@dataclass(frozen=True)
class GazeRay:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        o = np.asarray(self.origin, dtype=np.float64).reshape(3)
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(d) - 1.0) > 1e-9:
            raise ContractError("gaze direction must be a unit vector")
        object.__setattr__(self, "origin", o)
        object.__setattr__(self, "direction", d)

    @classmethod
    def toward(cls, origin, target) -> "GazeRay":
        o = np.asarray(origin, dtype=np.float64).reshape(3)
        d = np.asarray(target, dtype=np.float64).reshape(3) - o
        n = np.linalg.norm(d)
        if n == 0.0:
            raise ContractError("ray target coincides with origin")
        return cls(o, d / n)


@dataclass(frozen=True)
class RayHit:
    component_id: int
    class_name: str
    point: np.ndarray
    distance: float


def intersect_triangles(origin, direction, vertices, triangles,
                        eps: float = RAY_EPSILON):
    """Moller-Trumbore over all triangles, both-sided.

    Returns (distances, hit_mask) with distances for non-hits set to inf.
    """
    v0 = vertices[triangles[:, 0]]
    e1 = vertices[triangles[:, 1]] - v0
    e2 = vertices[triangles[:, 2]] - v0
    d = np.asarray(direction, dtype=np.float64).reshape(3)
    o = np.asarray(origin, dtype=np.float64).reshape(3)
    pvec = np.cross(d, e2)
    det = np.einsum("ij,ij->i", e1, pvec)
    ok = np.abs(det) > eps
    inv_det = np.where(ok, 1.0 / np.where(ok, det, 1.0), 0.0)
    tvec = o - v0
    u = np.einsum("ij,ij->i", tvec, pvec) * inv_det
    qvec = np.cross(tvec, e1)
    v = qvec @ d * inv_det
    t = np.einsum("ij,ij->i", e2, qvec) * inv_det
    hit = ok & (u >= 0.0) & (v >= 0.0) & (u + v <= 1.0) & (t > 0.0)
    return np.where(hit, t, np.inf), hit


def raycast(ray: GazeRay, components) -> RayHit | None:
    """Nearest positive-distance intersection across all component triangles."""
    best = None
    for comp in components:
        if comp.triangle_count == 0:
            continue
        t, hit = intersect_triangles(ray.origin, ray.direction,
                                     comp.vertices, comp.triangles)
        if not hit.any():
            continue
        dist = float(t.min())
        if best is None or dist < best.distance:
            best = RayHit(component_id=comp.component_id,
                          class_name=comp.class_name,
                          point=ray.origin + dist * ray.direction,
                          distance=dist)
    return best


@dataclass(frozen=True)
class ActuatorState:
    lamp_on: bool = False
    toggle_count: int = 0
    last_selection: tuple | None = None  # (world point tuple, class_name)


@dataclass(frozen=True)
class ActionReport:
    timestamp: float
    class_name: str
    point: tuple
    lamp_on: bool
    selected: bool = True
    actuated: bool = False


def handle_selection(class_name: str, point, state: ActuatorState,
                     timestamp: float | None = None):
    """Apply one accepted selection; only Lamp selections actuate.

    Returns (new_state, report).
    """
    pt = tuple(float(v) for v in np.asarray(point, dtype=np.float64).reshape(3))
    actuate = class_name == "Lamp"
    new_state = replace(
        state,
        lamp_on=(not state.lamp_on) if actuate else state.lamp_on,
        toggle_count=state.toggle_count + (1 if actuate else 0),
        last_selection=(pt, class_name),
    )
    report = ActionReport(
        timestamp=time.time() if timestamp is None else timestamp,
        class_name=class_name,
        point=pt,
        lamp_on=new_state.lamp_on,
        actuated=actuate,
    )
    return new_state, report


def format_action_line(report: ActionReport) -> str:
    x, y, z = report.point
    return (f"{report.timestamp:.3f} class={report.class_name} "
            f"point=({x:.4f},{y:.4f},{z:.4f}) lamp_on={report.lamp_on}")


def run_toggle_hook(command: str, lamp_on: bool) -> int:
    """Execute the configured external actuation command; returns its exit code.

    The new lamp state is exposed as $SEMFUSE_LAMP_ON (0/1).
    """
    env = dict(os.environ, SEMFUSE_LAMP_ON="1" if lamp_on else "0")
    result = subprocess.run(command, shell=True, env=env,
                            capture_output=True, timeout=10)
    return result.returncode
