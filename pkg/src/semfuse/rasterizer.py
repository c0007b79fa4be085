"""Software z-buffer renderer and the visibility test gating fusion updates.

Depth is viewing-axis depth (-z in camera space), perspective-correct
(1/depth interpolated across each triangle).  Coverage follows the top-left
fill rule on pixel centers; no backface culling (the scanned mesh is a
surface soup with inconsistent winding).  Triangles crossing the near plane
are clipped against it; the serial per-triangle loop makes output
deterministic, with the first-rasterized triangle winning depth ties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import ContractError
from .geometry import CameraFrame, SemanticMesh, points_to_camera, project_points
from .pgm import write_pgm

NO_SURFACE = np.inf
DEFAULT_NEAR_CLIP = 0.05
DEFAULT_VISIBILITY_TOLERANCE = 0.01


@dataclass
class DepthMap:
    """Per-pixel viewing-axis depth; NO_SURFACE (inf) marks uncovered pixels.

    triangle_ids holds the index of the nearest triangle per pixel (-1 when
    uncovered); the oracle segmenter uses it to recover ground-truth labels.
    """

    depth: np.ndarray
    triangle_ids: np.ndarray

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def covered(self) -> np.ndarray:
        return np.isfinite(self.depth)


@njit(cache=True)
def _raster_kernel(cam_pts, tris, proj, width, height, near, depth, tri_ids):  # pragma: no cover
    px = np.empty(4)
    py = np.empty(4)
    pw = np.empty(4)  # 1/depth at polygon corners
    cx = np.empty(4)
    cy = np.empty(4)
    cz = np.empty(4)
    for t in range(tris.shape[0]):
        # clip the camera-space triangle against the near plane (depth >= near)
        n_poly = 0
        for e in range(3):
            ia = tris[t, e]
            ib = tris[t, (e + 1) % 3]
            ax, ay, az = cam_pts[ia, 0], cam_pts[ia, 1], cam_pts[ia, 2]
            bx, by, bz = cam_pts[ib, 0], cam_pts[ib, 1], cam_pts[ib, 2]
            da = -az
            db = -bz
            ina = da >= near
            inb = db >= near
            if ina:
                cx[n_poly], cy[n_poly], cz[n_poly] = ax, ay, az
                n_poly += 1
            if ina != inb:
                s = (near - da) / (db - da)
                cx[n_poly] = ax + s * (bx - ax)
                cy[n_poly] = ay + s * (by - ay)
                cz[n_poly] = az + s * (bz - az)
                n_poly += 1
        if n_poly < 3:
            continue
        ok = True
        for i in range(n_poly):
            w = proj[3, 0] * cx[i] + proj[3, 1] * cy[i] + proj[3, 2] * cz[i] + proj[3, 3]
            if w <= 1e-12:
                ok = False
                break
            nx = (proj[0, 0] * cx[i] + proj[0, 1] * cy[i] + proj[0, 2] * cz[i] + proj[0, 3]) / w
            ny = (proj[1, 0] * cx[i] + proj[1, 1] * cy[i] + proj[1, 2] * cz[i] + proj[1, 3]) / w
            px[i] = (nx + 1.0) * 0.5 * width
            py[i] = (1.0 - ny) * 0.5 * height
            pw[i] = 1.0 / (-cz[i])
        if not ok:
            continue
        for k in range(1, n_poly - 1):
            x0, y0, w0 = px[0], py[0], pw[0]
            x1, y1, w1 = px[k], py[k], pw[k]
            x2, y2, w2 = px[k + 1], py[k + 1], pw[k + 1]
            area = (x1 - x0) * (y2 - y0) - (y1 - y0) * (x2 - x0)
            if area < 0.0:  # normalize winding so interior edge functions are >= 0
                x1, y1, w1, x2, y2, w2 = x2, y2, w2, x1, y1, w1
                area = -area
            if area < 1e-14:
                continue
            xmin = min(x0, min(x1, x2))
            xmax = max(x0, max(x1, x2))
            ymin = min(y0, min(y1, y2))
            ymax = max(y0, max(y1, y2))
            ix0 = max(0, int(np.floor(xmin - 0.5)))
            ix1 = min(width - 1, int(np.ceil(xmax - 0.5)))
            iy0 = max(0, int(np.floor(ymin - 0.5)))
            iy1 = min(height - 1, int(np.ceil(ymax - 0.5)))
            if ix1 < ix0 or iy1 < iy0:
                continue
            # top-left rule: zero edge function accepted only on top/left edges
            tl0 = (y2 - y1 < 0.0) or (y2 == y1 and x2 - x1 > 0.0)
            tl1 = (y0 - y2 < 0.0) or (y0 == y2 and x0 - x2 > 0.0)
            tl2 = (y1 - y0 < 0.0) or (y1 == y0 and x1 - x0 > 0.0)
            inv_area = 1.0 / area
            for iy in range(iy0, iy1 + 1):
                cyp = iy + 0.5
                for ix in range(ix0, ix1 + 1):
                    cxp = ix + 0.5
                    e0 = (x2 - x1) * (cyp - y1) - (y2 - y1) * (cxp - x1)
                    e1 = (x0 - x2) * (cyp - y2) - (y0 - y2) * (cxp - x2)
                    e2 = (x1 - x0) * (cyp - y0) - (y1 - y0) * (cxp - x0)
                    if not ((e0 > 0.0 or (e0 == 0.0 and tl0))
                            and (e1 > 0.0 or (e1 == 0.0 and tl1))
                            and (e2 > 0.0 or (e2 == 0.0 and tl2))):
                        continue
                    inv_d = (e0 * w0 + e1 * w1 + e2 * w2) * inv_area
                    if inv_d <= 0.0:
                        continue
                    d = 1.0 / inv_d
                    if d < depth[iy, ix]:
                        depth[iy, ix] = d
                        tri_ids[iy, ix] = t


def render_depth(mesh: SemanticMesh, frame: CameraFrame,
                 near_clip: float = DEFAULT_NEAR_CLIP) -> DepthMap:
    """Rasterize the mesh into a per-pixel depth map from the frame's pose."""
    depth = np.full((frame.height, frame.width), NO_SURFACE)
    tri_ids = np.full((frame.height, frame.width), -1, dtype=np.int32)
    if mesh.n_triangles:
        cam, _ = points_to_camera(mesh.vertices, frame)
        _raster_kernel(np.ascontiguousarray(cam),
                       np.ascontiguousarray(mesh.triangles),
                       np.ascontiguousarray(frame.projection),
                       frame.width, frame.height, near_clip, depth, tri_ids)
    return DepthMap(depth, tri_ids)


def visible_vertices(mesh: SemanticMesh, frame: CameraFrame, depth_map: DepthMap,
                     tolerance: float = DEFAULT_VISIBILITY_TOLERANCE):
    """Vertices that project inside the image and pass the depth test.

    Returns (indices, pixels, depths): vertex indices, their continuous pixel
    coordinates and their camera-space depths.  A vertex passes when its
    projected pixel has a surface and |vertex_depth - rendered_depth| <=
    tolerance.
    """
    if (depth_map.width, depth_map.height) != (frame.width, frame.height):
        raise ContractError("depth map dimensions do not match frame")
    pix, depth, valid = project_points(mesh.vertices, frame)
    # invalid projections carry NaN pixels; zero them before the int cast
    safe = np.where(valid[:, None], pix, 0.0)
    ix = np.floor(safe[:, 0]).astype(np.int64)
    iy = np.floor(safe[:, 1]).astype(np.int64)
    inside = valid & (ix >= 0) & (ix < frame.width) & (iy >= 0) & (iy < frame.height)
    idx = np.nonzero(inside)[0]
    rendered = depth_map.depth[iy[idx], ix[idx]]
    keep = np.isfinite(rendered) & (np.abs(depth[idx] - rendered) <= tolerance)
    idx = idx[keep]
    return idx, pix[idx], depth[idx]


def export_depth_pgm(depth_map: DepthMap, path) -> None:
    """Debug dump: 16-bit PGM in millimeters, clamped; uncovered pixels are 0."""
    mm = np.where(depth_map.covered,
                  np.clip(np.round(depth_map.depth * 1000.0), 0, 65535), 0.0)
    write_pgm(path, mm.astype(np.uint16), maxval=65535)
