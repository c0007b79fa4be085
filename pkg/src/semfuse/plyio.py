"""PLY mesh I/O (ASCII and binary little-endian).

Supported per-vertex properties: x, y, z (float or double), an optional
uchar `label` with the ground-truth class index, and optional float
`prob_<class>` columns carrying a fused class distribution.  Faces must be
triangles.  A `comment frames_fused N` line carries the fusion frame count
for checkpoints.
"""

from __future__ import annotations

import numpy as np

from .errors import LoadError
from .geometry import SemanticMesh

_PLY_SCALARS = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


def read_ply(path):
    """Parse a PLY mesh file.

    Returns (mesh, prob_class_names, frames_fused).  prob_class_names is the
    ordered list of classes recovered from prob_* columns (empty when absent);
    frames_fused is None unless a checkpoint comment is present.
    """
    with open(path, "rb") as fh:
        data = fh.read()

    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise LoadError(f"{path}: not a PLY file")
    header_end = data.find(b"\n", end) + 1
    header = data[:header_end].decode("ascii", errors="replace").splitlines()
    body = data[header_end:]

    fmt = None
    elements = []  # (name, count, [(prop_name, dtype)|('__list__', count_dt, item_dt, name)])
    frames_fused = None
    for line in header[1:]:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "comment":
            if len(parts) == 3 and parts[1] == "frames_fused":
                frames_fused = int(parts[2])
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property":
            if not elements:
                raise LoadError(f"{path}: property before element")
            if parts[1] == "list":
                elements[-1][2].append(("__list__", _PLY_SCALARS[parts[2]], _PLY_SCALARS[parts[3]], parts[4]))
            else:
                try:
                    elements[-1][2].append((parts[2], _PLY_SCALARS[parts[1]]))
                except KeyError:
                    raise LoadError(f"{path}: unsupported property type {parts[1]!r}") from None

    if fmt not in ("ascii", "binary_little_endian"):
        raise LoadError(f"{path}: unsupported PLY format {fmt!r}")

    vertices = triangles = labels = None
    prob_names: list[str] = []
    probs = None

    offset = 0
    ascii_rows = body.decode("ascii").split() if fmt == "ascii" else None
    ascii_pos = 0

    for name, count, props in elements:
        if fmt == "binary_little_endian":
            if any(p[0] == "__list__" for p in props):
                if len(props) != 1:
                    raise LoadError(f"{path}: mixed list/scalar element unsupported")
                _, cnt_dt, item_dt, _ = props[0]
                dt = np.dtype([("n", "<" + cnt_dt), ("v", "<" + item_dt, (3,))])
                rows = np.frombuffer(body, dtype=dt, count=count, offset=offset)
                offset += dt.itemsize * count
                if count and not np.all(rows["n"] == 3):
                    raise LoadError(f"{path}: non-triangular face")
                face_data = rows["v"].astype(np.int64)
            else:
                dt = np.dtype([(p[0], "<" + p[1]) for p in props])
                rows = np.frombuffer(body, dtype=dt, count=count, offset=offset)
                offset += dt.itemsize * count
                face_data = None
        else:
            if any(p[0] == "__list__" for p in props):
                face_rows = []
                for _ in range(count):
                    n = int(ascii_rows[ascii_pos]); ascii_pos += 1
                    if n != 3:
                        raise LoadError(f"{path}: non-triangular face")
                    face_rows.append([int(ascii_rows[ascii_pos + j]) for j in range(3)])
                    ascii_pos += 3
                face_data = np.asarray(face_rows, dtype=np.int64).reshape(-1, 3)
                rows = None
            else:
                width = len(props)
                flat = np.asarray(ascii_rows[ascii_pos:ascii_pos + count * width], dtype=np.float64)
                ascii_pos += count * width
                flat = flat.reshape(count, width)
                rows = {p[0]: flat[:, i] for i, p in enumerate(props)}
                face_data = None

        if name == "vertex":
            get = (lambda k: rows[k]) if fmt == "ascii" else (lambda k: rows[k])
            try:
                vertices = np.stack([np.asarray(get("x"), np.float64),
                                     np.asarray(get("y"), np.float64),
                                     np.asarray(get("z"), np.float64)], axis=1)
            except (KeyError, ValueError):
                raise LoadError(f"{path}: vertex element missing x/y/z") from None
            names = [p[0] for p in props if p[0] != "__list__"]
            if "label" in names:
                labels = np.asarray(get("label"), np.int64)
            prob_names = [n[len("prob_"):] for n in names if n.startswith("prob_")]
            if prob_names:
                probs = np.stack([np.asarray(get("prob_" + n), np.float64) for n in prob_names], axis=1)
        elif name == "face":
            triangles = face_data

    if vertices is None:
        raise LoadError(f"{path}: no vertex element")
    if triangles is None:
        triangles = np.zeros((0, 3), dtype=np.int64)
    mesh = SemanticMesh(vertices, triangles, distributions=probs, labels=labels)
    return mesh, prob_names, frames_fused


def write_ply(path, mesh: SemanticMesh, binary: bool = True,
              class_names=None, frames_fused: int | None = None) -> None:
    """Write a mesh; includes label / prob_* columns when present on the mesh.

    class_names is required when mesh.distributions is set (column naming).
    """
    v = mesh.vertices
    t = mesh.triangles
    header = ["ply",
              "format binary_little_endian 1.0" if binary else "format ascii 1.0"]
    if frames_fused is not None:
        header.append(f"comment frames_fused {int(frames_fused)}")
    header.append(f"element vertex {len(v)}")
    header += ["property double x", "property double y", "property double z"]
    if mesh.labels is not None:
        header.append("property uchar label")
    if mesh.distributions is not None:
        if class_names is None:
            raise LoadError("class_names required to write distributions")
        for name in class_names:
            header.append(f"property float prob_{name}")
    header.append(f"element face {len(t)}")
    header.append("property list uchar int vertex_indices")
    header.append("end_header")

    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if binary:
            fields = [("x", "<f8"), ("y", "<f8"), ("z", "<f8")]
            if mesh.labels is not None:
                fields.append(("label", "u1"))
            if mesh.distributions is not None:
                fields += [(f"p{i}", "<f4") for i in range(mesh.distributions.shape[1])]
            rows = np.empty(len(v), dtype=np.dtype(fields))
            rows["x"], rows["y"], rows["z"] = v[:, 0], v[:, 1], v[:, 2]
            if mesh.labels is not None:
                rows["label"] = mesh.labels.astype(np.uint8)
            if mesh.distributions is not None:
                for i in range(mesh.distributions.shape[1]):
                    rows[f"p{i}"] = mesh.distributions[:, i].astype(np.float32)
            fh.write(rows.tobytes())
            face_dt = np.dtype([("n", "u1"), ("v", "<i4", (3,))])
            faces = np.empty(len(t), dtype=face_dt)
            faces["n"] = 3
            faces["v"] = t.astype(np.int32)
            fh.write(faces.tobytes())
        else:
            for i in range(len(v)):
                parts = ["%.17g" % c for c in v[i]]
                if mesh.labels is not None:
                    parts.append(str(int(mesh.labels[i])))
                if mesh.distributions is not None:
                    parts += ["%.9g" % float(np.float32(p)) for p in mesh.distributions[i]]
                fh.write((" ".join(parts) + "\n").encode("ascii"))
            for tri in t:
                fh.write((f"3 {tri[0]} {tri[1]} {tri[2]}\n").encode("ascii"))
