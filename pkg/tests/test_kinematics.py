import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from seajoint.kinematics import (
    Branch,
    FootPoint,
    GaitParams,
    GaitUnreachableError,
    JointAngles,
    LegGeometry,
    PhaseDomainError,
    SingularError,
    UnreachableError,
    fk,
    gait_tick,
    ik,
    semi_ellipse,
    validate_gait,
)

from .oracles import fk_transform_chain, ik_damped_least_squares

angles = st.builds(
    JointAngles,
    q1=st.floats(-math.pi, math.pi),
    q2=st.floats(-math.pi, math.pi),
    q3=st.floats(-math.pi, math.pi),
)

GEOMETRY = LegGeometry(l1=0.063, l2=0.2, l3=0.2)


def random_reachable_points(geometry, n, rng, knee_up_only=True):
    """Reachable targets generated by sampling joint space and running fk.

    The knee-up set stays clear of the stretched/folded singularities
    and keeps the foot radially outside the coxa link, the conditions a
    real gait satisfies.
    """
    points = []
    while len(points) < n:
        q1 = rng.uniform(-1.4, 1.4)
        q2 = rng.uniform(-1.0, 1.0)
        q3 = rng.uniform(-2.2, -0.5) if knee_up_only else rng.uniform(-2.6, 2.6)
        p = fk(geometry, JointAngles(q1, q2, q3))
        radial = math.hypot(p.x, p.y)
        if knee_up_only and radial - geometry.l1 < 0.03:
            continue
        if radial > 1e-6:
            points.append((JointAngles(q1, q2, q3), p))
    return points


class TestForwardKinematics:
    def test_fully_extended(self, geometry):
        p = fk(geometry, JointAngles(0, 0, 0))
        total = geometry.l1 + geometry.l2 + geometry.l3
        assert p == pytest.approx((total, 0.0, 0.0), abs=1e-15)

    def test_pure_yaw(self, geometry):
        p = fk(geometry, JointAngles(math.pi / 2, 0, 0))
        total = geometry.l1 + geometry.l2 + geometry.l3
        assert p.x == pytest.approx(0.0, abs=1e-12)
        assert p.y == pytest.approx(total, abs=1e-12)
        assert p.z == pytest.approx(0.0, abs=1e-12)

    @given(q=angles)
    @settings(max_examples=500)
    def test_matches_transform_chain_oracle(self, q):
        p = fk(GEOMETRY, q)
        expected = fk_transform_chain(
            GEOMETRY.l1, GEOMETRY.l2, GEOMETRY.l3, q.q1, q.q2, q.q3
        )
        assert np.allclose([p.x, p.y, p.z], expected, atol=1e-12)


class TestInverseKinematics:
    def test_workspace_boundary_point(self, geometry):
        total = geometry.l1 + geometry.l2 + geometry.l3
        for branch in Branch:
            q = ik(geometry, FootPoint(total, 0.0, 0.0), branch)
            assert q == pytest.approx((0.0, 0.0, 0.0), abs=1e-9)

    def test_just_outside_reach(self, geometry):
        total = geometry.l1 + geometry.l2 + geometry.l3
        with pytest.raises(UnreachableError) as exc:
            ik(geometry, FootPoint(total + 0.01, 0.0, 0.0))
        assert exc.value.distance == pytest.approx(
            geometry.l2 + geometry.l3 + 0.01, abs=1e-12
        )

    def test_singular_axis(self, geometry):
        with pytest.raises(SingularError):
            ik(geometry, FootPoint(0.0, 0.0, -0.2))

    def test_round_trip_identity(self, geometry):
        rng = random.Random(7)
        for _, p in random_reachable_points(geometry, 2000, rng, knee_up_only=False):
            for branch in Branch:
                q = ik(geometry, p, branch)
                back = fk(geometry, q)
                assert math.dist(back, p) <= 1e-9

    def test_branch_selects_knee_height(self, geometry):
        p = FootPoint(0.25, 0.0, -0.15)
        up = ik(geometry, p, Branch.KNEE_UP)
        down = ik(geometry, p, Branch.KNEE_DOWN)
        assert up.q3 <= 0 <= down.q3
        knee_z_up = geometry.l2 * math.sin(up.q2)
        knee_z_down = geometry.l2 * math.sin(down.q2)
        assert knee_z_up > knee_z_down

    def test_agrees_with_damped_least_squares(self, geometry):
        rng = random.Random(11)
        for q_true, p in random_reachable_points(geometry, 200, rng):
            closed = ik(geometry, p, Branch.KNEE_UP)
            seed = (math.atan2(p.y, p.x), 0.3, -1.2)
            iterative = ik_damped_least_squares(
                geometry.l1, geometry.l2, geometry.l3, p, seed=seed
            )
            assert iterative is not None, f"oracle failed to converge at {p}"
            assert np.allclose(list(closed), iterative, atol=1e-6)


class TestSemiEllipse:
    def test_stance_start(self, gait):
        p = semi_ellipse(gait, 0.0)
        assert p == pytest.approx(
            (gait.x0 + gait.stride / 2, gait.y0, gait.z0), abs=1e-15
        )

    def test_swing_apex(self, gait):
        apex_phase = gait.duty + (1 - gait.duty) / 2
        p = semi_ellipse(gait, apex_phase)
        assert p == pytest.approx((gait.x0, gait.y0, gait.z0 + gait.height), abs=1e-12)

    def test_stance_flat_swing_above(self, gait):
        for k in range(10_000):
            phase = k / 10_000
            p = semi_ellipse(gait, phase)
            if phase < gait.duty:
                assert p.z == gait.z0
            else:
                assert p.z >= gait.z0 - 1e-12

    def test_phase_domain(self, gait):
        with pytest.raises(PhaseDomainError):
            semi_ellipse(gait, 1.0)
        with pytest.raises(PhaseDomainError):
            semi_ellipse(gait, -0.01)

    def test_periodic_closure(self, gait):
        start = semi_ellipse(gait, 0.0)
        end = semi_ellipse(gait, 1.0 - 1e-12)
        assert math.dist(start, end) <= 1e-9

    def test_continuity_scales_linearly(self, gait):
        def max_adjacent(dphase):
            worst = 0.0
            steps = int(1.0 / dphase)
            prev = semi_ellipse(gait, 0.0)
            for k in range(1, steps):
                cur = semi_ellipse(gait, k * dphase)
                worst = max(worst, math.dist(prev, cur))
                prev = cur
            return worst

        coarse = max_adjacent(1e-3)
        fine = max_adjacent(1e-4)
        assert fine < coarse
        assert coarse / fine == pytest.approx(10.0, rel=0.05)
        assert fine < 1e-4 * 10 * max(
            gait.stride / gait.duty, math.pi * gait.height / (1 - gait.duty)
        )


class TestGaitTick:
    def test_periodicity(self, geometry, gait):
        q0 = gait_tick(geometry, gait, 0.0)
        qT = gait_tick(geometry, gait, gait.period)
        assert q0 == pytest.approx(qT, abs=1e-12)

    def test_full_period_reachable_against_workspace_scan(self, geometry, gait):
        # independent workspace oracle: dense planar point cloud from joint space
        grid = []
        for q2 in np.linspace(-math.pi, math.pi, 720):
            for q3 in np.linspace(-math.pi, math.pi, 720):
                a = geometry.l2 * math.cos(q2) + geometry.l3 * math.cos(q2 + q3)
                b = geometry.l2 * math.sin(q2) + geometry.l3 * math.sin(q2 + q3)
                grid.append((a, b))
        cloud = np.array(grid)

        samples = 100  # one gait period at 100 Hz with period 1 s scaling
        for k in range(samples):
            t = k * gait.period / samples
            q = gait_tick(geometry, gait, t)
            p = fk(geometry, q)
            planar = np.array([math.hypot(p.x, p.y) - geometry.l1, p.z])
            nearest = float(np.min(np.linalg.norm(cloud - planar, axis=1)))
            assert nearest < 5e-3  # grid resolution bound

    def test_rate_limit_at_20hz(self, geometry, gait):
        limit = 3.0  # rad/s joint rate budget
        dt = 1 / 20
        prev = gait_tick(geometry, gait, 0.0)
        for k in range(1, int(gait.period / dt) + 2):
            cur = gait_tick(geometry, gait, k * dt)
            step = max(abs(c - p) for c, p in zip(cur, prev))
            assert step < limit * dt
            prev = cur

    def test_unreachable_gait_rejected_with_phases(self, geometry):
        bad = GaitParams(
            stride=0.12, height=0.06, z0=-0.45, y0=0.0, x0=0.22, period=4.0, duty=0.6
        )
        with pytest.raises(GaitUnreachableError) as exc:
            validate_gait(geometry, bad)
        assert len(exc.value.phases) > 0

    def test_unreachable_tick_reports_phase(self, geometry):
        bad = GaitParams(
            stride=0.12, height=0.06, z0=-0.45, y0=0.0, x0=0.22, period=4.0, duty=0.6
        )
        with pytest.raises(UnreachableError) as exc:
            gait_tick(geometry, bad, 0.0)
        assert exc.value.phase == 0.0

    def test_validation_reports_step_budget(self, geometry, gait):
        report = validate_gait(geometry, gait, samples=400)
        assert report.max_step_rad > 0
        assert report.max_rate_rad_s(gait.period) < 3.0


class TestTypes:
    def test_geometry_positive(self):
        with pytest.raises(ValueError):
            LegGeometry(0.0, 0.2, 0.2)

    def test_gait_duty_domain(self):
        with pytest.raises(ValueError):
            GaitParams(
                stride=0.1, height=0.05, z0=-0.2, y0=0.0, x0=0.2, period=1.0, duty=1.0
            )
