import math

import numpy as np
import pytest

from src.arrowflow.errors import ConfigError, OutOfDomain
from src.arrowflow.field import GridSpec, make_synthetic
from src.arrowflow.integrate import (
    IntegratorConfig,
    advect_handle,
    advect_handles,
    auto_length_gain,
    clamp_aspect,
    integrate_streamlet,
    integrate_streamlets,
)
from tests.utils import straight_streamlet


@pytest.fixture(scope="module")
def wide_rotation():
    """Rigid rotation, omega = 1, on [-20, 20]^2 with unit spacing."""
    return make_synthetic("rigid_rotation", GridSpec(41, 41, 1, x0=-20.0, y0=-20.0), omega=1.0)


class TestStreamlets:
    """Streamlet integration at a fixed time."""

    def test_straight_segment(self, constant_field):
        cfg = IntegratorConfig(step_h=0.25, length_gain=2.0)
        s = integrate_streamlet(constant_field, (20.0, 20.0), 0.0, cfg, thickness=1.0)
        assert len(s.points) == 9
        assert s.handle_index == 4
        assert s.arc_length == pytest.approx(2.0, abs=1e-12)
        assert np.allclose(s.points[:, 1], 20.0)
        assert s.points[0] == pytest.approx([19.0, 20.0])
        assert s.points[-1] == pytest.approx([21.0, 20.0])
        assert s.handle == pytest.approx([20.0, 20.0])
        assert s.velocity_at_handle == pytest.approx([1.0, 0.0])

    def test_samples_are_step_h_apart(self, constant_field):
        cfg = IntegratorConfig(step_h=0.25, length_gain=2.0)
        s = integrate_streamlet(constant_field, (20.0, 20.0), 0.0, cfg, thickness=1.0)
        assert np.allclose(np.diff(s.cumulative), 0.25)

    def test_circle_in_rigid_rotation(self, rotation_field):
        cfg = IntegratorConfig(step_h=1e-2, length_gain=2.0)
        s = integrate_streamlet(rotation_field, (1.0, 0.0), 0.0, cfg, thickness=1.0)
        radii = np.hypot(s.points[:, 0], s.points[:, 1])
        assert np.max(np.abs(radii - 1.0)) < 1e-6
        assert s.arc_length == pytest.approx(2.0, abs=1e-4)
        # forward tip is counter-clockwise of the handle
        assert s.points[-1][1] > 0.0 > s.points[0][1]

    def test_zero_field_gives_one_point(self):
        zero = make_synthetic("constant", GridSpec(10, 10), velocity=(0.0, 0.0))
        s = integrate_streamlet(zero, (5.0, 5.0), 0.0, IntegratorConfig(step_h=0.5), thickness=1.0)
        assert len(s.points) == 1
        assert s.arc_length == 0.0
        assert s.is_degenerate

    def test_outside_handle_raises(self, constant_field):
        with pytest.raises(OutOfDomain):
            integrate_streamlet(constant_field, (50.0, 5.0), 0.0, IntegratorConfig(step_h=0.5), thickness=1.0)

    def test_batch_gives_one_point_for_outside_handles(self, constant_field):
        streamlets = integrate_streamlets(constant_field, [(50.0, 5.0), (10.0, 10.0)], 0.0, IntegratorConfig(step_h=0.5), 1.0)
        assert len(streamlets[0].points) == 1
        assert streamlets[1].arc_length == pytest.approx(1.0)

    def test_batch_matches_single_integration(self, rotation_field):
        cfg = IntegratorConfig(step_h=0.05, length_gain=1.5)
        points = [(0.5, 0.2), (-1.0, 0.7), (1.2, -1.1)]
        batch = integrate_streamlets(rotation_field, points, 0.0, cfg, 1.0)
        for p, s in zip(points, batch):
            single = integrate_streamlet(rotation_field, p, 0.0, cfg, 1.0)
            assert np.allclose(single.points, s.points, rtol=0.0, atol=1e-12)

    def test_streamlet_stops_at_the_boundary(self, constant_field):
        cfg = IntegratorConfig(step_h=0.5, length_gain=4.0)
        s = integrate_streamlet(constant_field, (38.0, 10.0), 0.0, cfg, thickness=1.0)
        assert s.points[-1][0] <= 39.0
        assert s.arc_length < 4.0

    def test_aspect_ratio_is_capped(self, constant_field):
        cfg = IntegratorConfig(step_h=0.25, length_gain=10.0, max_aspect_ratio=4.0)
        s = integrate_streamlet(constant_field, (20.0, 20.0), 0.0, cfg, thickness=1.0)
        assert s.arc_length == pytest.approx(4.0)
        assert s.handle == pytest.approx([20.0, 20.0])


class TestClampAspect:
    def test_symmetric_trim(self):
        s = straight_streamlet((-5.0, 0.0), (5.0, 0.0), 11, handle_index=5)
        clamped = clamp_aspect(s, 4.0)
        assert clamped.arc_length == pytest.approx(4.0)
        assert clamped.handle_index == 2
        assert clamped.points[:, 0] == pytest.approx([-2.0, -1.0, 0.0, 1.0, 2.0])

    def test_trim_moves_to_the_longer_side(self):
        s = straight_streamlet((-5.0, 0.0), (5.0, 0.0), 11, handle_index=9)
        clamped = clamp_aspect(s, 4.0)
        assert clamped.arc_length == pytest.approx(4.0)
        assert clamped.handle == pytest.approx([4.0, 0.0])
        assert clamped.points[0] == pytest.approx([0.0, 0.0])
        assert clamped.points[-1] == pytest.approx([4.0, 0.0])

    def test_short_streamlet_is_untouched(self):
        s = straight_streamlet((-1.0, 0.0), (1.0, 0.0), 5)
        assert clamp_aspect(s, 4.0) is s


class TestAdvection:
    """Pathline advection of handles."""

    def test_constant_translation(self, constant_field):
        cfg = IntegratorConfig(step_h=0.5)
        assert advect_handle(constant_field, (10.0, 10.0), 0.0, 0.5, cfg) == pytest.approx([10.5, 10.0])

    def test_quarter_turn(self, rotation_field):
        cfg = IntegratorConfig(step_h=0.1, substeps_per_dt=64)
        end = advect_handle(rotation_field, (1.0, 0.0), 0.0, math.pi / 2, cfg)
        assert end == pytest.approx([0.0, 1.0], abs=1e-5)

    def test_forward_then_backward_returns(self, rotation_field):
        cfg = IntegratorConfig(step_h=0.1, substeps_per_dt=32)
        there = advect_handle(rotation_field, (0.8, 0.3), 0.0, 1.0, cfg)
        back = advect_handle(rotation_field, there, 1.0, 0.0, cfg)
        assert back == pytest.approx([0.8, 0.3], abs=1e-6)

    def test_leaving_the_domain_kills_the_trajectory(self, constant_field):
        cfg = IntegratorConfig(step_h=0.5)
        assert advect_handle(constant_field, (38.5, 20.0), 0.0, 2.0, cfg) is None
        _, alive = advect_handles(constant_field, [(38.5, 20.0), (10.0, 20.0)], 0.0, 2.0, cfg)
        assert alive.tolist() == [False, True]

    def test_rk4_is_fourth_order(self, wide_rotation):
        exact = np.array([10.0 * math.cos(1.0), 10.0 * math.sin(1.0)])
        errors = []
        for substeps in (4, 8, 16, 32):
            cfg = IntegratorConfig(step_h=0.5, substeps_per_dt=substeps)
            end = advect_handle(wide_rotation, (10.0, 0.0), 0.0, 1.0, cfg)
            errors.append(float(np.hypot(*(end - exact))))
        for coarse, fine in zip(errors, errors[1:]):
            assert fine < 1e-12 or coarse / fine >= 7.5


class TestIntegratorConfig:
    @pytest.mark.parametrize(
        "kwargs",
        [
            {"step_h": 0.0},
            {"step_h": 1.0, "length_gain": 0.0},
            {"step_h": 1.0, "max_aspect_ratio": 0.5},
            {"step_h": 1.0, "substeps_per_dt": 0},
        ],
    )
    def test_invalid_values(self, kwargs):
        with pytest.raises(ConfigError):
            IntegratorConfig(**kwargs)

    def test_auto_length_gain(self, constant_field):
        assert auto_length_gain(constant_field, 2.0) == pytest.approx(6.0)
        zero = make_synthetic("constant", GridSpec(4, 4), velocity=(0.0, 0.0))
        assert auto_length_gain(zero, 2.0) == 1.0
