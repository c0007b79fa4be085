"""Recursive Bayesian per-vertex label fusion of segmented frames onto the mesh.

Each fused frame multiplies every visible vertex's class distribution by the
per-pixel likelihood it projects onto, floors the product at a small epsilon
(so no class is ever permanently killed by a single zero) and renormalizes.
Observations whose pixel argmax is Unknown are skipped for vertices closer
than the near-skip distance, protecting fused labels from partial-view false
negatives.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .geometry import ClassSet, SemanticMesh, uniform_distribution
from .plyio import read_ply, write_ply
from .rasterizer import (DEFAULT_NEAR_CLIP, DEFAULT_VISIBILITY_TOLERANCE,
                         render_depth, visible_vertices)

DEFAULT_NEAR_SKIP_M = 2.0
DEFAULT_EPSILON_FLOOR = 1e-6


@dataclass
class ScoreMap:
    """Per-pixel class distribution image: probs is (height, width, L)."""

    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 3:
            raise ContractError("score map must be (height, width, n_classes)")

    @property
    def width(self) -> int:
        return self.probs.shape[1]

    @property
    def height(self) -> int:
        return self.probs.shape[0]

    @property
    def n_classes(self) -> int:
        return self.probs.shape[2]

    def validate(self) -> "ScoreMap":
        if not np.isfinite(self.probs).all() or (self.probs < 0).any():
            raise ContractError("score map entries must be finite and non-negative")
        if np.abs(self.probs.sum(axis=2) - 1.0).max() > 1e-6:
            raise ContractError("score map pixels must sum to 1 within 1e-6")
        return self


@dataclass
class FuseReport:
    frame_index: int
    updated: int
    skipped_near: int
    invisible: int


@dataclass
class FusionState:
    """Mutable fusion state: the mesh's per-vertex distributions plus tunables.

    Single-writer: fuse_frame calls must run in frame arrival order.
    """

    mesh: SemanticMesh
    class_set: ClassSet
    frames_fused: int = 0
    near_skip_distance: float = DEFAULT_NEAR_SKIP_M
    epsilon_floor: float = DEFAULT_EPSILON_FLOOR
    visibility_tolerance: float = DEFAULT_VISIBILITY_TOLERANCE
    near_clip: float = DEFAULT_NEAR_CLIP


def init_state(mesh: SemanticMesh, class_set: ClassSet, **tunables) -> FusionState:
    """Attach a uniform distribution to every vertex (no a-priori knowledge)."""
    mesh.validate()
    uniform = uniform_distribution(len(class_set))
    mesh.distributions = np.tile(uniform, (mesh.n_vertices, 1))
    return FusionState(mesh=mesh, class_set=class_set, **tunables)


def bayes_update(prior: np.ndarray, likelihood: np.ndarray,
                 epsilon_floor: float = DEFAULT_EPSILON_FLOOR) -> np.ndarray:
    """One recursive-filter step: normalized elementwise product, floored."""
    p = np.asarray(prior, dtype=np.float64)
    l = np.asarray(likelihood, dtype=np.float64)
    if p.shape != l.shape:
        raise ContractError("prior/likelihood shape mismatch")
    if not (np.isfinite(p).all() and np.isfinite(l).all()) or (p < 0).any() or (l < 0).any():
        raise ContractError("distributions must be finite and non-negative")
    post = np.maximum(p * l, epsilon_floor)
    return post / post.sum()


def fuse_frame(state: FusionState, frame, score_map: ScoreMap) -> FuseReport:
    """Fuse one segmented frame into the mesh distributions.

    Renders a depth map, gates vertices by the visibility test, then applies
    the Bayesian update per visible vertex unless the near-skip rule holds
    (pixel argmax Unknown and vertex depth below near_skip_distance).
    """
    if (score_map.width, score_map.height) != (frame.width, frame.height):
        raise ContractError("score map dimensions do not match frame")
    mesh = state.mesh
    if mesh.distributions is None:
        raise ContractError("fusion state not initialized")

    dmap = render_depth(mesh, frame, near_clip=state.near_clip)
    idx, pix, depths = visible_vertices(mesh, frame, dmap,
                                        tolerance=state.visibility_tolerance)
    if len(idx) == 0:
        state.frames_fused += 1
        return FuseReport(frame.frame_index, 0, 0, mesh.n_vertices)

    ix = np.floor(pix[:, 0]).astype(np.int64)
    iy = np.floor(pix[:, 1]).astype(np.int64)
    rows = score_map.probs[iy, ix]  # (N, L)

    uidx = state.class_set.unknown_index
    unknown_argmax = rows[:, uidx] >= rows.max(axis=1)  # tie counts as Unknown
    skip = unknown_argmax & (depths < state.near_skip_distance)

    upd = idx[~skip]
    post = np.maximum(mesh.distributions[upd] * rows[~skip], state.epsilon_floor)
    post /= post.sum(axis=1, keepdims=True)
    mesh.distributions[upd] = post

    state.frames_fused += 1
    return FuseReport(frame_index=frame.frame_index,
                      updated=len(upd),
                      skipped_near=int(skip.sum()),
                      invisible=mesh.n_vertices - len(idx))


def argmax_labels(state: FusionState) -> np.ndarray:
    """Per-vertex argmax class; ties go to Unknown, then to the lowest index."""
    d = state.mesh.distributions
    if d is None:
        raise ContractError("fusion state not initialized")
    best = np.argmax(d, axis=1)  # lowest index on ties
    uidx = state.class_set.unknown_index
    unknown_tie = d[:, uidx] >= d[np.arange(len(d)), best]
    return np.where(unknown_tie, uidx, best).astype(np.int64)


def save_checkpoint(state: FusionState, path, binary: bool = True) -> None:
    """Write the mesh with per-class probability columns (and argmax labels)."""
    mesh = state.mesh.copy()
    mesh.labels = argmax_labels(state)
    write_ply(path, mesh, binary=binary, class_names=state.class_set.names,
              frames_fused=state.frames_fused)


def load_checkpoint(path, class_set: ClassSet, **tunables) -> FusionState:
    mesh, prob_names, frames_fused = read_ply(path)
    if tuple(prob_names) != class_set.names:
        raise ContractError(
            f"checkpoint classes {prob_names} do not match {class_set.names}")
    mesh.labels = None
    # float32 storage: renormalize back to the 1e-9 invariant
    mesh.distributions /= mesh.distributions.sum(axis=1, keepdims=True)
    return FusionState(mesh=mesh, class_set=class_set,
                       frames_fused=frames_fused or 0, **tunables)
