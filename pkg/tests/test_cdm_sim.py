"""Quasi-static simulator: kinematics, routing, equilibrium, timing."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdmlab.errors import ArcLengthOutOfRange, PullExceedsCurvatureLimit
from cdmlab.sim import (
    CdmConfig,
    Obstacle,
    PlanarCdm,
    body_points,
    curvature_at,
    tip,
)

MODEL = PlanarCdm()
UNIFORM = PlanarCdm(CdmConfig.uniform())


def arc_tip(total_angle: float, length: float = 34.0) -> tuple:
    """Constant-curvature tip position for a given total bend angle."""
    if abs(total_angle) < 1e-15:
        return (0.0, length)
    r = length / total_angle
    return (-r * (1.0 - math.cos(total_angle)), r * math.sin(total_angle))


class TestConfig:
    def test_defaults(self):
        cfg = CdmConfig()
        assert cfg.n_links == 20
        assert cfg.active_length == 34.0
        assert cfg.link_length == pytest.approx(1.7)
        assert cfg.cable_offset == 2.5
        # per-joint cap equals the curvature limit over one link
        assert cfg.theta_cap == pytest.approx(166.7 / 1000.0 * 1.7)

    def test_uniform_factory(self):
        cfg = CdmConfig.uniform(stiffness=4000.0)
        assert np.all(np.asarray(cfg.joint_stiffness) == 4000.0)
        assert np.all(np.asarray(cfg.joint_hardening) == 0.0)

    def test_rejects_bad_geometry(self):
        with pytest.raises(ValueError):
            CdmConfig(n_links=0)
        with pytest.raises(ValueError):
            CdmConfig(active_length=-1.0)


class TestKinematics:
    def test_straight_tip(self):
        state = MODEL.equilibrium((0.0, 0.0))
        assert state.tip[0] == pytest.approx(0.0, abs=1e-12)
        assert state.tip[1] == pytest.approx(34.0, abs=1e-12)

    def test_routing_sets_total_angle(self):
        state = MODEL.equilibrium((1.0, -1.0))
        assert sum(state.joint_angles) == pytest.approx(0.8, abs=1e-12)

    def test_uniform_matches_constant_curvature_arc(self):
        state = UNIFORM.equilibrium((1.0, -1.0))
        expect = arc_tip(0.8)
        assert state.tip[0] == pytest.approx(expect[0], abs=1e-6)
        assert state.tip[1] == pytest.approx(expect[1], abs=1e-6)

    def test_uniform_quarter_circle(self):
        c = math.pi / 2.0
        pull = (c * 2.5 / 2.0, -c * 2.5 / 2.0)
        state = UNIFORM.equilibrium(pull)
        expect = arc_tip(c)
        assert state.tip[0] == pytest.approx(expect[0], abs=1e-6)
        assert state.tip[1] == pytest.approx(expect[1], abs=1e-6)

    def test_curvature_at_uniform_bend(self):
        state = UNIFORM.equilibrium((1.0, -1.0))
        # 0.8 rad over 34 mm -> 0.8/0.034 1/m
        assert curvature_at(state, 17.0) == pytest.approx(0.8 / 0.034)

    def test_curvature_out_of_range(self):
        state = MODEL.equilibrium((0.0, 0.0))
        with pytest.raises(ArcLengthOutOfRange):
            curvature_at(state, -0.1)
        with pytest.raises(ArcLengthOutOfRange):
            curvature_at(state, 34.1)

    def test_mirror_symmetry(self):
        plus = MODEL.equilibrium((1.0, -1.0))
        minus = MODEL.equilibrium((-1.0, 1.0))
        assert plus.tip[0] == pytest.approx(-minus.tip[0], abs=1e-12)
        assert plus.tip[1] == pytest.approx(minus.tip[1], abs=1e-12)

    def test_body_points_ordered_by_arc_length(self):
        state = MODEL.equilibrium((1.0, -1.0))
        pts = body_points(state)
        assert pts.shape == (40, 2)
        # cumulative distance from base grows monotonically along the chain
        d = np.linalg.norm(np.diff(np.vstack([[0.0, 0.0], pts]), axis=0), axis=1)
        assert np.all(d > 0)

    def test_tip_matches_state_field(self):
        state = MODEL.equilibrium((0.8, -0.8))
        assert tip(state) == pytest.approx(state.tip, abs=1e-12)


class TestEquilibrium:
    def test_pull_beyond_curvature_budget(self):
        # budget: 20 joints * theta_cap rad, through the 2.5 mm moment arm
        limit = 20 * CdmConfig().theta_cap * 2.5
        with pytest.raises(PullExceedsCurvatureLimit):
            MODEL.equilibrium((limit * 0.51, -limit * 0.51))

    def test_uniform_config_spreads_angles_evenly(self):
        state = UNIFORM.equilibrium((1.0, -1.0))
        assert np.std(state.joint_angles) < 1e-9

    def test_graded_config_bends_unevenly(self):
        state = MODEL.equilibrium((1.0, -1.0))
        assert np.std(state.joint_angles) > 1e-4

    def test_no_hysteresis_over_pull_cycle(self):
        s0 = MODEL.equilibrium((1.0, -1.0))
        s1, _ = MODEL.apply_pull_increment(s0, (0.5, -0.5), 0.05)
        s2, _ = MODEL.apply_pull_increment(s1, (-0.5, 0.5), 0.05)
        assert s2.tip[0] == pytest.approx(s0.tip[0], abs=1e-9)
        assert s2.tip[1] == pytest.approx(s0.tip[1], abs=1e-9)

    def test_determinism(self):
        a = MODEL.equilibrium((1.3, -1.3))
        b = MODEL.equilibrium((1.3, -1.3))
        assert a.joint_angles == b.joint_angles
        assert a.tip == b.tip

    def test_elapsed_time_from_cable_velocity(self):
        state = MODEL.equilibrium((0.0, 0.0))
        _, elapsed = MODEL.apply_pull_increment(state, (0.05, -0.05), 0.05)
        assert elapsed == pytest.approx(1.0)

    def test_contact_flags_off_in_free_space(self):
        state = MODEL.equilibrium((1.0, -1.0))
        assert state.contact_active == ()

    @given(st.floats(min_value=-3.0, max_value=3.0))
    @settings(max_examples=30, deadline=None)
    def test_total_angle_tracks_pull_difference(self, p):
        state = MODEL.equilibrium((p, -p))
        assert sum(state.joint_angles) == pytest.approx(2.0 * p / 2.5, abs=1e-9)

    @given(st.floats(min_value=0.1, max_value=2.5))
    @settings(max_examples=20, deadline=None)
    def test_tip_stays_on_reachable_disk(self, p):
        state = MODEL.equilibrium((p, -p))
        assert math.hypot(*state.tip) <= 34.0 + 1e-9


class TestContact:
    HARD = Obstacle((-14.0, 22.0), 5.0, "hard")
    SOFT = Obstacle((-14.0, 22.0), 5.0, "soft")

    def _touch_pull(self):
        # big enough bend that the free shape would cross the obstacle
        return (1.5, -1.5)

    def test_hard_obstacle_blocks_body(self):
        state = MODEL.equilibrium(self._touch_pull(), (self.HARD,))
        assert any(state.contact_active)
        pts = body_points(state)
        depth = 5.0 - np.min(
            np.linalg.norm(pts - np.array([-14.0, 22.0]), axis=1)
        )
        assert depth < 0.01  # hard penetration stays below 0.01 mm

    def test_soft_obstacle_admits_penetration(self):
        state = MODEL.equilibrium(self._touch_pull(), (self.SOFT,))
        assert any(state.contact_active)
        pts = body_points(state)
        depth = 5.0 - np.min(
            np.linalg.norm(pts - np.array([-14.0, 22.0]), axis=1)
        )
        assert depth > 0.1  # orders of magnitude softer than the hard wall

    def test_contact_preserves_total_angle(self):
        state = MODEL.equilibrium(self._touch_pull(), (self.HARD,))
        assert sum(state.joint_angles) == pytest.approx(
            2.0 * 1.5 / 2.5, abs=1e-6
        )

    def test_warm_start_matches_cold_solve(self):
        free = MODEL.equilibrium((2.0, -2.0))
        warm = MODEL.equilibrium(
            self._touch_pull(), (self.HARD,), theta0=free.joint_angles
        )
        cold = MODEL.equilibrium(self._touch_pull(), (self.HARD,))
        assert np.allclose(warm.joint_angles, cold.joint_angles, atol=1e-6)

    def test_clear_obstacle_leaves_free_solution(self):
        far = Obstacle((30.0, 30.0), 2.0, "hard")
        with_obs = MODEL.equilibrium((1.0, -1.0), (far,))
        without = MODEL.equilibrium((1.0, -1.0))
        assert np.allclose(with_obs.joint_angles, without.joint_angles)
        assert not any(with_obs.contact_active)

    def test_obstacle_validation(self):
        with pytest.raises(ValueError):
            Obstacle((0.0, 0.0), -1.0, "hard")
        with pytest.raises(ValueError):
            Obstacle((0.0, 0.0), 1.0, "rigid")
