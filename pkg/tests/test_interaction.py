import numpy as np
import pytest

from conftest import _moller_trumbore

from semfuse.components import LabeledComponent
from semfuse.errors import ContractError
from semfuse.interaction import (ActuatorState, GazeRay, format_action_line,
                                 handle_selection, intersect_triangles,
                                 raycast, run_toggle_hook)


def square_component(z=-2.0, half=1.0, cid=0, cls="Lamp"):
    v = np.array([[-half, -half, z], [half, -half, z],
                  [half, half, z], [-half, half, z]])
    t = np.array([[0, 1, 2], [0, 2, 3]])
    return LabeledComponent(v, t, cls, cid)


class TestGazeRay:
    def test_unit_direction_required(self):
        with pytest.raises(ContractError):
            GazeRay(np.zeros(3), np.array([0.0, 0.0, -2.0]))

    def test_toward_normalizes(self):
        ray = GazeRay.toward((0, 0, 0), (0, 0, -5))
        assert np.allclose(ray.direction, [0, 0, -1])
        with pytest.raises(ContractError):
            GazeRay.toward((1, 2, 3), (1, 2, 3))


class TestRaycast:
    def test_square_analytic_hit(self):
        comp = square_component(z=-2.0)
        hit = raycast(GazeRay(np.zeros(3), np.array([0.0, 0.0, -1.0])), [comp])
        assert hit is not None
        assert hit.distance == pytest.approx(2.0, abs=1e-12)
        assert np.allclose(hit.point, [0, 0, -2])
        assert hit.class_name == "Lamp"
        assert hit.component_id == 0

    def test_oblique_analytic_distance(self):
        comp = square_component(z=-2.0, half=3.0)
        d = np.array([1.0, 0.0, -1.0]) / np.sqrt(2)
        hit = raycast(GazeRay(np.zeros(3), d), [comp])
        assert hit.distance == pytest.approx(2.0 * np.sqrt(2), abs=1e-12)
        assert np.allclose(hit.point, [2, 0, -2], atol=1e-12)

    def test_miss(self):
        comp = square_component(z=-2.0, half=0.5)
        assert raycast(GazeRay(np.zeros(3), np.array([1.0, 0, 0])), [comp]) is None
        # behind the origin: no negative-distance hits
        assert raycast(GazeRay(np.zeros(3), np.array([0.0, 0, 1.0])), [comp]) is None

    def test_nearest_component_wins(self):
        far = square_component(z=-4.0, cid=0, cls="Chair")
        near = square_component(z=-2.0, cid=1, cls="Lamp")
        hit = raycast(GazeRay(np.zeros(3), np.array([0.0, 0.0, -1.0])), [far, near])
        assert hit.component_id == 1
        assert hit.distance == pytest.approx(2.0)

    def test_back_face_hits(self):
        # both-sided test: looking at the square from behind still hits
        comp = square_component(z=2.0)
        hit = raycast(GazeRay(np.zeros(3), np.array([0.0, 0.0, 1.0])), [comp])
        assert hit is not None
        assert hit.distance == pytest.approx(2.0)

    def test_matches_scalar_oracle(self, rng):
        verts = rng.uniform(-2, 2, size=(30, 3))
        tris = rng.integers(0, 30, size=(40, 3))
        tris = tris[(tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2])
                    & (tris[:, 0] != tris[:, 2])]
        for _ in range(200):
            o = rng.uniform(-3, 3, size=3)
            d = rng.normal(size=3)
            d /= np.linalg.norm(d)
            t, hit = intersect_triangles(o, d, verts, tris)
            for k, tri in enumerate(tris):
                expect = _moller_trumbore(o, d, verts[tri[0]], verts[tri[1]],
                                          verts[tri[2]])
                if expect is None:
                    assert not hit[k] or t[k] == np.inf
                else:
                    assert hit[k]
                    assert t[k] == pytest.approx(expect, rel=1e-9)

    def test_empty_component_skipped(self):
        empty = LabeledComponent(np.zeros((0, 3)),
                                 np.zeros((0, 3), dtype=np.int64), "Chair", 0)
        assert raycast(GazeRay(np.zeros(3), np.array([0.0, 0, -1.0])), [empty]) is None


class TestActuator:
    def test_lamp_toggles(self):
        state = ActuatorState()
        state, r1 = handle_selection("Lamp", (0, 0, -2), state, timestamp=1.0)
        assert state.lamp_on and state.toggle_count == 1
        assert r1.actuated and r1.lamp_on
        state, r2 = handle_selection("Lamp", (0, 0, -2), state, timestamp=2.0)
        assert not state.lamp_on and state.toggle_count == 2
        assert not r2.lamp_on

    def test_chair_selects_without_actuating(self):
        state = ActuatorState()
        state, report = handle_selection("Chair", (1, 0, -3), state, timestamp=1.0)
        assert not state.lamp_on and state.toggle_count == 0
        assert state.last_selection == ((1.0, 0.0, -3.0), "Chair")
        assert report.selected and not report.actuated

    def test_toggle_parity(self):
        state = ActuatorState()
        for n in range(1, 8):
            state, _ = handle_selection("Lamp", (0, 0, 0), state, timestamp=float(n))
            assert state.lamp_on is (n % 2 == 1)
            assert state.toggle_count == n

    def test_action_line_format(self):
        _, report = handle_selection("Lamp", (0.5, -1.25, -2.0),
                                     ActuatorState(), timestamp=12.5)
        line = format_action_line(report)
        assert line == "12.500 class=Lamp point=(0.5000,-1.2500,-2.0000) lamp_on=True"

    def test_toggle_hook_exposes_state(self, tmp_path):
        marker = tmp_path / "state.txt"
        cmd = f'printf "%s" "$SEMFUSE_LAMP_ON" > {marker}'
        assert run_toggle_hook(cmd, True) == 0
        assert marker.read_text() == "1"
        assert run_toggle_hook(cmd, False) == 0
        assert marker.read_text() == "0"
        assert run_toggle_hook("exit 3", True) == 3
