"""Pluggable per-frame score-map sources.

The oracle source renders the ground-truth class of the nearest triangle per
pixel and corrupts it through a configurable confusion matrix, standing in
for a trained dense segmentation network.  The file source replays score
maps recorded offline in the SMAP binary format.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, LoadError
from .fusion import ScoreMap
from .geometry import CameraFrame, ClassSet, SemanticMesh
from .rasterizer import render_depth

SMAP_MAGIC = b"SMAP"


@dataclass
class NoiseModel:
    """Controls oracle corruption.

    confusion:     (L, L) row-stochastic matrix; row = true class, column =
                   emitted argmax class.
    concentration: peakedness of emitted distributions; the emitted class
                   gets mass c/(c + L - 1), the rest is uniform.  May be inf.
    seed:          base seed; sampling is deterministic per (seed, frame).
    """

    confusion: np.ndarray
    concentration: float = np.inf
    seed: int = 0

    def __post_init__(self):
        self.confusion = np.asarray(self.confusion, dtype=np.float64)
        n = self.confusion.shape[0]
        if self.confusion.shape != (n, n):
            raise ContractError("confusion matrix must be square")
        if (self.confusion < 0).any() or np.abs(self.confusion.sum(axis=1) - 1.0).max() > 1e-9:
            raise ContractError("confusion rows must be non-negative and sum to 1 within 1e-9")
        if not self.concentration > 0:
            raise ContractError("concentration must be > 0")

    @classmethod
    def identity(cls, n_classes: int, concentration: float = np.inf, seed: int = 0):
        return cls(np.eye(n_classes), concentration, seed)

    @classmethod
    def uniform_flip(cls, n_classes: int, flip_rate: float,
                     concentration: float = np.inf, seed: int = 0):
        """Identity with flip_rate total off-diagonal mass, spread uniformly."""
        off = flip_rate / (n_classes - 1) if n_classes > 1 else 0.0
        m = np.full((n_classes, n_classes), off)
        np.fill_diagonal(m, 1.0 - flip_rate)
        return cls(m, concentration, seed)


class SegmentationSource:
    """Produces a ScoreMap over a fixed class set for each requested frame."""

    def __init__(self, class_set: ClassSet):
        self.class_set = class_set

    def score_map(self, frame: CameraFrame) -> ScoreMap:
        raise NotImplementedError


def true_class_image(scene: SemanticMesh, frame: CameraFrame,
                     unknown_index: int, dmap=None) -> np.ndarray:
    """Ground-truth class index per pixel from the nearest triangle.

    Pixel class is the majority label of the triangle's three vertices; a
    three-way tie and uncovered pixels map to Unknown.
    """
    if scene.labels is None:
        raise ContractError("scene has no ground-truth labels")
    if dmap is None:
        dmap = render_depth(scene, frame)
    tid = dmap.triangle_ids
    covered = tid >= 0
    tri_verts = scene.triangles[np.where(covered, tid, 0)]
    a = scene.labels[tri_verts[..., 0]]
    b = scene.labels[tri_verts[..., 1]]
    c = scene.labels[tri_verts[..., 2]]
    maj = np.where(a == b, a, np.where(a == c, a, np.where(b == c, b, unknown_index)))
    return np.where(covered, maj, unknown_index)


def _peaked_scores(emitted: np.ndarray, n_classes: int, concentration: float) -> np.ndarray:
    if n_classes == 1:
        return np.ones(emitted.shape + (1,))
    p = 1.0 if np.isinf(concentration) else concentration / (concentration + n_classes - 1)
    probs = np.full(emitted.shape + (n_classes,), (1.0 - p) / (n_classes - 1))
    np.put_along_axis(probs, emitted[..., None], p, axis=-1)
    return probs


def oracle_segment(scene: SemanticMesh, frame: CameraFrame, noise: NoiseModel,
                   class_set: ClassSet) -> ScoreMap:
    """Ground-truth segmentation corrupted by the noise model.

    Deterministic given (scene, frame, noise.seed, frame.frame_index).
    Uncovered pixels emit an Unknown-argmax distribution directly.
    """
    n = len(class_set)
    if noise.confusion.shape[0] != n:
        raise ContractError("noise model size does not match class set")
    uidx = class_set.unknown_index
    dmap = render_depth(scene, frame)
    truth = true_class_image(scene, frame, uidx, dmap=dmap)
    covered = dmap.triangle_ids >= 0

    rng = np.random.default_rng([abs(int(noise.seed)), int(frame.frame_index)])
    u = rng.random(truth.shape)
    cum = np.cumsum(noise.confusion, axis=1)
    emitted = np.minimum((u[..., None] >= cum[truth]).sum(axis=-1), n - 1)
    emitted = np.where(covered, emitted, uidx)
    return ScoreMap(_peaked_scores(emitted, n, noise.concentration))


class OracleSource(SegmentationSource):
    def __init__(self, scene: SemanticMesh, noise: NoiseModel, class_set: ClassSet):
        super().__init__(class_set)
        if scene.labels is None:
            raise ContractError("oracle source requires a ground-truth-labeled scene")
        self.scene = scene
        self.noise = noise

    def score_map(self, frame: CameraFrame) -> ScoreMap:
        return oracle_segment(self.scene, frame, self.noise, self.class_set)


def write_smap(path, score_map: ScoreMap) -> None:
    """SMAP binary: magic, u32 width/height/classes, float32 row-major data (LE)."""
    with open(path, "wb") as fh:
        fh.write(SMAP_MAGIC)
        fh.write(struct.pack("<III", score_map.width, score_map.height,
                             score_map.n_classes))
        fh.write(score_map.probs.astype("<f4").tobytes())


def read_smap(path) -> ScoreMap:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:4] != SMAP_MAGIC:
        raise LoadError(f"{path}: bad SMAP magic")
    if len(data) < 16:
        raise LoadError(f"{path}: truncated SMAP header")
    w, h, n = struct.unpack("<III", data[4:16])
    expected = 16 + w * h * n * 4
    if len(data) != expected:
        raise LoadError(f"{path}: SMAP payload size mismatch "
                        f"(got {len(data)}, expected {expected})")
    probs = np.frombuffer(data, dtype="<f4", offset=16).astype(np.float64).reshape(h, w, n)
    if not np.isfinite(probs).all() or (probs < 0).any():
        raise LoadError(f"{path}: invalid probabilities")
    sums = probs.sum(axis=2)
    if np.abs(sums - 1.0).max() > 1e-3:
        raise LoadError(f"{path}: pixel distributions off by more than 1e-3")
    probs = probs / sums[..., None]
    return ScoreMap(probs)


def file_segment(path, frame_index: int = 0) -> ScoreMap:
    """Load a stored score map; directories resolve frame_<index>.smap."""
    if os.path.isdir(path):
        path = os.path.join(path, f"frame_{frame_index:06d}.smap")
    if not os.path.exists(path):
        raise LoadError(f"{path}: no such score-map file")
    return read_smap(path)


class FileSource(SegmentationSource):
    def __init__(self, directory, class_set: ClassSet):
        super().__init__(class_set)
        self.directory = directory

    def score_map(self, frame: CameraFrame) -> ScoreMap:
        sm = file_segment(self.directory, frame.frame_index)
        if (sm.width, sm.height) != (frame.width, frame.height):
            raise LoadError("stored score map dimensions do not match frame")
        if sm.n_classes != len(self.class_set):
            raise LoadError("stored score map class count does not match class set")
        return sm
