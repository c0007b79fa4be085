"""Object extraction: drop Unknown vertices, split into connected components,
filter by per-class triangle thresholds.

Only triangles whose three vertices agree on a single non-Unknown label are
kept (mixed triangles are excluded entirely to prevent class bleed across
boundaries).  Connectivity is through shared vertices among kept triangles.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components as _cc

from .errors import ConfigurationError, ContractError
from .geometry import ClassSet, SemanticMesh
from .plyio import write_ply

DEFAULT_BATCH_SIZE = 5


@dataclass
class LabeledComponent:
    """Edge-connected submesh of one non-Unknown class, re-indexed locally."""

    vertices: np.ndarray
    triangles: np.ndarray
    class_name: str
    component_id: int

    @property
    def triangle_count(self) -> int:
        return len(self.triangles)

    def to_mesh(self) -> SemanticMesh:
        return SemanticMesh(self.vertices, self.triangles)


@dataclass
class ThresholdTable:
    """Per-class minimum triangle counts, strictly-greater-than semantics."""

    minimums: dict[str, int] = field(default_factory=lambda: {"Chair": 30, "Lamp": 5})

    def __post_init__(self):
        for name, value in self.minimums.items():
            if value < 0:
                raise ConfigurationError(f"threshold for {name!r} must be >= 0")

    def get(self, class_name: str) -> int:
        if class_name not in self.minimums:
            raise ConfigurationError(f"no triangle threshold configured for class {class_name!r}")
        return self.minimums[class_name]


def extract_components(mesh: SemanticMesh, labels: np.ndarray,
                       class_set: ClassSet) -> list[LabeledComponent]:
    """All unfiltered single-class connected components.

    Components are ordered by the smallest original vertex index they contain
    and re-indexed without altering vertex positions.
    """
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if len(labels) != mesh.n_vertices:
        raise ContractError("labels length must equal vertex count")
    uidx = class_set.unknown_index
    tl = labels[mesh.triangles]
    kept = np.nonzero((tl[:, 0] == tl[:, 1]) & (tl[:, 1] == tl[:, 2]) & (tl[:, 0] != uidx))[0]
    if len(kept) == 0:
        return []

    tris = mesh.triangles[kept]
    nv = mesh.n_vertices
    # union vertices of each kept triangle; all of a vertex's kept triangles
    # share its label, so cross-class merges cannot happen
    rows = np.concatenate([tris[:, 0], tris[:, 1]])
    cols = np.concatenate([tris[:, 1], tris[:, 2]])
    graph = coo_matrix((np.ones(len(rows), dtype=np.int8), (rows, cols)), shape=(nv, nv))
    _, vertex_comp = _cc(graph, directed=False)

    tri_comp = vertex_comp[tris[:, 0]]
    components = []
    for comp in np.unique(tri_comp):
        ctris = tris[tri_comp == comp]
        used = np.unique(ctris)  # ascending original indices
        remap = np.full(nv, -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        components.append((int(used[0]), used, remap[ctris], labels[used[0]]))
    components.sort(key=lambda item: item[0])

    out = []
    for cid, (_, used, ctris, label) in enumerate(components):
        out.append(LabeledComponent(vertices=mesh.vertices[used].copy(),
                                    triangles=ctris,
                                    class_name=class_set.names[label],
                                    component_id=cid))
    return out


def filter_components(components, thresholds: ThresholdTable) -> list[LabeledComponent]:
    """Keep components with strictly more triangles than their class threshold."""
    return [c for c in components if c.triangle_count > thresholds.get(c.class_name)]


def batch_trigger(frames_since_last_send: int, batch_size: int = DEFAULT_BATCH_SIZE) -> bool:
    """True once enough frames accumulated since the last component send."""
    if frames_since_last_send < 0 or batch_size < 0:
        raise ContractError("counters must be non-negative")
    return frames_since_last_send >= batch_size


def export_component_plys(components, out_dir, binary: bool = True) -> list[str]:
    """Write each component as component_<id>_<class>.ply; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for c in components:
        path = os.path.join(out_dir, f"component_{c.component_id}_{c.class_name}.ply")
        write_ply(path, c.to_mesh(), binary=binary)
        paths.append(path)
    return paths
