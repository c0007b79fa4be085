import numpy as np
import pytest

from conftest import quad_mesh, raycast_depth_oracle, simple_frame

from semfuse.errors import ContractError
from semfuse.geometry import SemanticMesh
from semfuse.pgm import read_pgm
from semfuse.rasterizer import (DepthMap, export_depth_pgm, render_depth,
                                visible_vertices)


def random_mesh(rng, n_tris=50, spread=3.0):
    """Triangles scattered in front of the camera (depth roughly 1..6)."""
    centers = np.stack([rng.uniform(-spread, spread, n_tris),
                        rng.uniform(-spread, spread, n_tris),
                        rng.uniform(-6.0, -1.0, n_tris)], axis=1)
    offsets = rng.uniform(-0.8, 0.8, size=(n_tris, 3, 3))
    verts = (centers[:, None, :] + offsets).reshape(-1, 3)
    tris = np.arange(3 * n_tris).reshape(-1, 3)
    return SemanticMesh(verts, tris)


class TestRenderDepth:
    def test_fronto_parallel_plane_constant_depth(self):
        dm = render_depth(quad_mesh(z=-3.0), simple_frame())
        assert dm.covered.all()
        assert np.abs(dm.depth - 3.0).max() < 1e-5

    def test_empty_mesh(self):
        mesh = SemanticMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
        dm = render_depth(mesh, simple_frame())
        assert not dm.covered.any()
        assert (dm.triangle_ids == -1).all()

    def test_matches_ray_oracle(self, rng):
        mesh = random_mesh(rng, n_tris=30)
        frame = simple_frame(64, 64)
        dm = render_depth(mesh, frame)
        oracle = raycast_depth_oracle(mesh, frame)
        either = np.isfinite(dm.depth) | np.isfinite(oracle)
        both = np.isfinite(dm.depth) & np.isfinite(oracle)
        diff = np.abs(np.where(both, dm.depth, 0.0) - np.where(both, oracle, 0.0))
        match = both & (diff <= 1e-4 * np.where(both, np.maximum(oracle, 1.0), 1.0))
        assert match.sum() >= 0.99 * either.sum()

    def test_deterministic(self, rng):
        mesh = random_mesh(rng)
        frame = simple_frame()
        a = render_depth(mesh, frame)
        b = render_depth(mesh, frame)
        assert np.array_equal(a.depth, b.depth)
        assert np.array_equal(a.triangle_ids, b.triangle_ids)

    def test_adding_triangle_never_increases_depth(self, rng):
        mesh = random_mesh(rng, n_tris=20)
        frame = simple_frame()
        base = render_depth(mesh, frame)
        bigger = SemanticMesh(
            np.concatenate([mesh.vertices,
                            [[-1, -1, -2.0], [1, -1, -2.0], [0, 1, -2.0]]]),
            np.concatenate([mesh.triangles,
                            [[len(mesh.vertices), len(mesh.vertices) + 1,
                              len(mesh.vertices) + 2]]]))
        more = render_depth(bigger, frame)
        assert (more.depth <= base.depth + 1e-12).all()

    def test_triangle_behind_camera_skipped(self):
        mesh = SemanticMesh([[-1, -1, 2], [1, -1, 2], [0, 1, 2]], [[0, 1, 2]])
        dm = render_depth(mesh, simple_frame())
        assert not dm.covered.any()

    def test_near_plane_clipping(self):
        # triangle straddling the near plane: the part in front still renders
        mesh = SemanticMesh([[-0.5, -0.5, 1.0], [0.5, -0.5, -4.0], [0.0, 0.5, -4.0]],
                            [[0, 1, 2]])
        dm = render_depth(mesh, simple_frame())
        assert dm.covered.any()
        assert dm.depth[dm.covered].min() >= 0.05 - 1e-9

    def test_no_double_coverage_on_shared_edge(self):
        # the quad's diagonal is shared; every covered pixel belongs to
        # exactly one triangle, so the whole quad stays covered with no seams
        dm = render_depth(quad_mesh(z=-2.0, half=3.0), simple_frame(33, 33))
        assert dm.covered.all()


class TestVisibleVertices:
    def test_single_triangle_all_visible(self):
        # vertices positioned so each lands on a pixel the triangle covers
        mesh = SemanticMesh([[-1.124, -0.923, -3], [1.003, -0.911, -3],
                             [-0.044, 1.002, -3]], [[0, 1, 2]])
        frame = simple_frame()
        dm = render_depth(mesh, frame)
        idx, pix, depths = visible_vertices(mesh, frame, dm)
        assert set(idx) == {0, 1, 2}
        assert np.allclose(depths, 3.0)

    def test_occluded_vertex_excluded(self):
        # large wall at 2 m fully occludes a small triangle 0.5 m behind it
        wall = quad_mesh(z=-2.0)
        behind = np.array([[-0.2, -0.2, -2.5], [0.2, -0.2, -2.5], [0.0, 0.2, -2.5]])
        mesh = SemanticMesh(np.concatenate([wall.vertices, behind]),
                            np.concatenate([wall.triangles, [[4, 5, 6]]]))
        frame = simple_frame()
        dm = render_depth(mesh, frame)
        idx, _, _ = visible_vertices(mesh, frame, dm)
        assert {4, 5, 6}.isdisjoint(set(idx))

    def test_tolerance_admits_close_planes(self):
        # two parallel planes 5 mm apart: vertices of both pass the 10 mm test
        def quad(z, h):
            v = np.array([[-h, -h, z], [h, -h, z], [h, h, z], [-h, h, z]])
            return v, np.array([[0, 1, 2], [0, 2, 3]])

        v1, t1 = quad(-2.0, 1.41875)
        v2, t2 = quad(-2.005, 1.41875 * 2.005 / 2)
        mesh = SemanticMesh(np.concatenate([v1, v2]),
                            np.concatenate([t1, t2 + 4]))
        frame = simple_frame()
        dm = render_depth(mesh, frame)
        idx, _, _ = visible_vertices(mesh, frame, dm, tolerance=0.01)
        assert set(idx) == set(range(8))

    def test_returned_vertices_satisfy_depth_bound(self, rng):
        from conftest import random_rigid
        mesh = quad_mesh(z=-3.0)
        frame = simple_frame()
        dm = render_depth(mesh, frame)
        idx, pix, depths = visible_vertices(mesh, frame, dm, tolerance=0.01)
        for i in range(len(idx)):
            ix, iy = int(pix[i, 0]), int(pix[i, 1])
            assert abs(depths[i] - dm.depth[iy, ix]) <= 0.01

    def test_dimension_mismatch(self):
        mesh = quad_mesh()
        frame = simple_frame(64, 64)
        dm = render_depth(mesh, simple_frame(32, 32))
        with pytest.raises(ContractError):
            visible_vertices(mesh, frame, dm)


class TestDepthPgm:
    def test_export(self, tmp_path):
        dm = render_depth(quad_mesh(z=-3.0), simple_frame(16, 16))
        path = tmp_path / "depth.pgm"
        export_depth_pgm(dm, path)
        img = read_pgm(path)
        assert img.shape == (16, 16)
        assert np.abs(img - 3000).max() <= 1  # millimeters
