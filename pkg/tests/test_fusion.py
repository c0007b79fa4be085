import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import quad_mesh, simple_frame

from semfuse.errors import ContractError
from semfuse.fusion import (FusionState, ScoreMap, argmax_labels, bayes_update,
                            fuse_frame, init_state, load_checkpoint,
                            save_checkpoint)
from semfuse.geometry import ClassSet, DEFAULT_CLASSES, SemanticMesh


def uniform_score_map(w, h, n=3):
    return ScoreMap(np.full((h, w, n), 1.0 / n))


def constant_score_map(w, h, probs):
    probs = np.asarray(probs, dtype=np.float64)
    return ScoreMap(np.tile(probs, (h, w, 1)))


@st.composite
def distributions(draw, n=3, floor=0.01):
    # entries kept well above the epsilon floor: sub-floor mass is
    # intentionally modified by the filter, so algebraic identities
    # (normalization aside) only hold while the floor stays inactive
    raw = np.array(draw(st.lists(st.floats(floor, 1.0), min_size=n, max_size=n)))
    return raw / raw.sum()


class TestInitState:
    @pytest.mark.parametrize("names,expected", [
        (("Lamp", "Chair", "Unknown"), 1 / 3),
        (("Unknown",), 1.0),
        (("a", "b", "c", "d", "Unknown"), 0.2),
    ])
    def test_uniform_initialization(self, names, expected):
        mesh = quad_mesh()
        state = init_state(mesh, ClassSet(names))
        assert state.mesh.distributions.shape == (4, len(names))
        assert np.allclose(state.mesh.distributions, expected)
        assert state.frames_fused == 0


class TestBayesUpdate:
    def test_uniform_prior_returns_likelihood(self):
        out = bayes_update(np.full(3, 1 / 3), np.array([0.8, 0.1, 0.1]))
        assert np.allclose(out, [0.8, 0.1, 0.1], atol=1e-9)

    def test_uniform_likelihood_is_identity(self):
        prior = np.array([0.6, 0.3, 0.1])
        out = bayes_update(prior, np.full(3, 1 / 3))
        assert np.allclose(out, prior, atol=1e-12)

    def test_worked_example(self):
        # products (0.30, 0.12, 0.01), normalizer 1/0.43
        out = bayes_update(np.array([0.6, 0.3, 0.1]), np.array([0.5, 0.4, 0.1]))
        expected = np.array([0.30, 0.12, 0.01]) / 0.43
        assert np.allclose(out, expected, atol=1e-12)
        assert np.allclose(out, [0.6977, 0.2791, 0.0233], atol=1e-4)

    def test_zero_likelihood_recoverable(self):
        out = bayes_update(np.array([0.5, 0.5]), np.array([1.0, 0.0]),
                           epsilon_floor=1e-6)
        assert out[1] > 0.0

    def test_non_finite_rejected(self):
        with pytest.raises(ContractError):
            bayes_update(np.array([0.5, np.nan, 0.5]), np.full(3, 1 / 3))

    @given(distributions(), distributions())
    @settings(max_examples=200, deadline=None)
    def test_posterior_normalized(self, prior, likelihood):
        assert abs(bayes_update(prior, likelihood).sum() - 1.0) <= 1e-9

    @given(distributions(), distributions(), distributions())
    @settings(max_examples=200, deadline=None)
    def test_two_updates_commute(self, prior, la, lb):
        ab = bayes_update(bayes_update(prior, la), lb)
        ba = bayes_update(bayes_update(prior, lb), la)
        assert np.abs(ab - ba).max() <= 1e-9

    def test_monotone_reinforcement(self):
        d = np.full(3, 1 / 3)
        likelihood = np.array([0.6, 0.3, 0.1])
        prev = d[0]
        for _ in range(50):
            d = bayes_update(d, likelihood)
            assert d[0] >= prev
            prev = d[0]
        assert d[0] > 0.999


def occlusion_scene():
    """Wall at 2 m fully occluding a small triangle at 2.5 m.

    The wall half-extent is chosen so every corner's floored pixel center
    falls inside the wall itself (so all four wall vertices are visible).
    """
    wall = quad_mesh(z=-2.0, half=1.41875)
    behind = np.array([[-0.2, -0.2, -2.5], [0.2, -0.2, -2.5], [0.0, 0.2, -2.5]])
    verts = np.concatenate([wall.vertices, behind])
    tris = np.concatenate([wall.triangles, [[4, 5, 6]]])
    return SemanticMesh(verts, tris)


class TestFuseFrame:
    def test_occluded_vertices_unchanged(self):
        mesh = occlusion_scene()
        state = init_state(mesh, DEFAULT_CLASSES)
        frame = simple_frame()
        sm = constant_score_map(64, 64, [0.8, 0.1, 0.1])
        initial = state.mesh.distributions.copy()
        for _ in range(3):
            fuse_frame(state, frame, sm)
        # occluded triangle vertices are bit-identical to initialization
        assert np.array_equal(state.mesh.distributions[4:7], initial[4:7])
        # wall vertices were updated
        assert (state.mesh.distributions[:4, 0] > 0.9).all()

    def test_report_counts(self):
        mesh = occlusion_scene()
        state = init_state(mesh, DEFAULT_CLASSES)
        report = fuse_frame(state, simple_frame(), constant_score_map(64, 64, [0.8, 0.1, 0.1]))
        assert report.updated + report.invisible == mesh.n_vertices
        assert report.skipped_near == 0
        assert state.frames_fused == 1

    def test_near_skip_rule(self):
        # Unknown-argmax pixels: vertex at 1.5 m skipped, vertex at 3.0 m updated
        near = quad_mesh(z=-1.5, half=0.4)
        far_v = near.vertices * 2.0  # depth 3.0
        far_v[:, 0] += 1.8  # to the side, clear of the near quad's shadow
        mesh = SemanticMesh(np.concatenate([near.vertices, far_v]),
                            np.concatenate([near.triangles, near.triangles + 4]))
        state = init_state(mesh, DEFAULT_CLASSES)
        sm = constant_score_map(64, 64, [0.1, 0.1, 0.8])  # argmax Unknown
        initial = state.mesh.distributions.copy()
        report = fuse_frame(state, simple_frame(), sm)
        assert report.skipped_near == 4
        assert np.array_equal(state.mesh.distributions[:4], initial[:4])
        updated_far = ~np.all(state.mesh.distributions[4:] == initial[4:], axis=1)
        assert updated_far.any()

    def test_near_skip_disabled_updates_everything(self):
        mesh = quad_mesh(z=-1.5, half=0.4)
        state = init_state(mesh, DEFAULT_CLASSES, near_skip_distance=0.0)
        report = fuse_frame(state, simple_frame(), constant_score_map(64, 64, [0.1, 0.1, 0.8]))
        assert report.skipped_near == 0
        assert report.updated == 4

    def test_uniform_score_map_is_noop(self):
        mesh = quad_mesh(z=-3.0, half=1.0)
        state = init_state(mesh, DEFAULT_CLASSES)
        before = state.mesh.distributions.copy()
        fuse_frame(state, simple_frame(), uniform_score_map(64, 64))
        assert np.abs(state.mesh.distributions - before).max() <= 1e-12

    def test_normalization_after_many_frames(self, rng):
        mesh = quad_mesh(z=-3.0, half=1.0)
        state = init_state(mesh, DEFAULT_CLASSES)
        frame = simple_frame()
        for _ in range(20):
            probs = rng.dirichlet(np.ones(3), size=(64, 64))
            fuse_frame(state, frame, ScoreMap(probs))
        sums = state.mesh.distributions.sum(axis=1)
        assert np.abs(sums - 1.0).max() <= 1e-9

    def test_frame_order_commutes_without_near_skip(self, rng):
        mesh = quad_mesh(z=-3.0, half=1.0)
        frame = simple_frame()
        sm_a = ScoreMap(rng.dirichlet(np.ones(3), size=(64, 64)))
        sm_b = ScoreMap(rng.dirichlet(np.ones(3), size=(64, 64)))
        sa = init_state(mesh.copy(), DEFAULT_CLASSES, near_skip_distance=0.0)
        fuse_frame(sa, frame, sm_a)
        fuse_frame(sa, frame, sm_b)
        sb = init_state(mesh.copy(), DEFAULT_CLASSES, near_skip_distance=0.0)
        fuse_frame(sb, frame, sm_b)
        fuse_frame(sb, frame, sm_a)
        assert np.abs(sa.mesh.distributions - sb.mesh.distributions).max() <= 1e-9

    def test_dimension_mismatch(self):
        state = init_state(quad_mesh(), DEFAULT_CLASSES)
        with pytest.raises(ContractError):
            fuse_frame(state, simple_frame(64, 64), uniform_score_map(32, 32))


class TestArgmaxLabels:
    def test_simple_argmax(self):
        state = init_state(quad_mesh(), DEFAULT_CLASSES)
        state.mesh.distributions[0] = [0.1, 0.7, 0.2]
        assert argmax_labels(state)[0] == 1  # Chair

    def test_uniform_ties_to_unknown(self):
        state = init_state(quad_mesh(), DEFAULT_CLASSES)
        assert (argmax_labels(state) == DEFAULT_CLASSES.unknown_index).all()

    def test_matches_oracle_recompute(self, rng):
        state = init_state(quad_mesh(), DEFAULT_CLASSES)
        state.mesh.distributions = rng.dirichlet(np.ones(3), size=4)
        labels = argmax_labels(state)
        for i, row in enumerate(state.mesh.distributions):
            best = max(range(3), key=lambda j: (row[j], j == 2))
            assert labels[i] == best


class TestCheckpoint:
    def test_roundtrip(self, tmp_path, rng):
        mesh = quad_mesh()
        state = init_state(mesh, DEFAULT_CLASSES)
        fuse_frame(state, simple_frame(),
                   constant_score_map(64, 64, [0.7, 0.2, 0.1]))
        path = tmp_path / "ckpt.ply"
        save_checkpoint(state, path)
        loaded = load_checkpoint(path, DEFAULT_CLASSES)
        assert loaded.frames_fused == 1
        assert np.allclose(loaded.mesh.distributions, state.mesh.distributions,
                           atol=1e-6)
        assert np.array_equal(loaded.mesh.vertices, state.mesh.vertices)

    def test_class_mismatch_rejected(self, tmp_path):
        state = init_state(quad_mesh(), DEFAULT_CLASSES)
        path = tmp_path / "ckpt.ply"
        save_checkpoint(state, path)
        with pytest.raises(ContractError):
            load_checkpoint(path, ClassSet(("Table", "Chair", "Unknown")))
