import math

import numpy as np
import pytest

from src.arrowflow.density import (
    DensityMap,
    JacobianDensitySource,
    StaticDensitySource,
    UniformDensitySource,
    jacobian_density,
    jacobian_frobenius,
    load_density,
    make_density_source,
    normalize,
    save_density,
    uniform_density,
)
from src.arrowflow.distmap import RasterSpec
from src.arrowflow.errors import ConfigError, FormatError
from src.arrowflow.field import GridSpec, VectorField2D, make_synthetic
from src.arrowflow.formats import write_dm2d


def parabolic_field(nt=1, gains=(1.0,)):
    """v = (g x^2 / 2, 0) on an 11x11 grid; the Jacobian norm is g |x|."""
    X, _ = np.meshgrid(np.arange(11, dtype=float), np.arange(11, dtype=float))
    data = np.zeros((nt, 11, 11, 2))
    for k, g in enumerate(gains):
        data[k, :, :, 0] = g * 0.5 * X**2
    return VectorField2D(data)


@pytest.fixture
def raster():
    return RasterSpec.covering(parabolic_field().rect, 0.5)


class TestJacobianNorm:
    """Frobenius norm of the velocity gradient."""

    @pytest.mark.parametrize("omega", [1.0, 2.0, -0.5])
    def test_rigid_rotation(self, omega):
        field = make_synthetic("rigid_rotation", GridSpec(9, 9, x0=-4.0, y0=-4.0), omega=omega)
        norm = jacobian_frobenius(field, 0)
        assert np.allclose(norm[1:-1, 1:-1], math.sqrt(2.0) * abs(omega), rtol=0.0, atol=1e-10)

    def test_shear(self):
        field = make_synthetic("shear", GridSpec(9, 9, x0=-4.0, y0=-4.0), rate=1.0)
        assert np.allclose(jacobian_frobenius(field, 0)[1:-1, 1:-1], 1.0, rtol=0.0, atol=1e-10)

    def test_constant_field_has_zero_norm(self, constant_field):
        assert np.allclose(jacobian_frobenius(constant_field, 0), 0.0)


class TestNormalization:
    def test_constant_input_maps_to_ones(self):
        assert np.array_equal(normalize(np.full((3, 3), 7.0), 4.0), np.ones((3, 3)))

    def test_range_maps_to_one_and_scale_max(self):
        out = normalize(np.array([[0.0, 5.0, 10.0]]), 4.0)
        assert out.tolist() == [[1.0, 2.5, 4.0]]

    def test_external_bounds_clip(self):
        out = normalize(np.array([[0.0, 20.0]]), 3.0, lo=0.0, hi=10.0)
        assert out.tolist() == [[1.0, 3.0]]


class TestJacobianDensity:
    """Density maps derived from the Jacobian norm."""

    def test_constant_field_is_uniform(self, constant_field):
        r = RasterSpec.covering(constant_field.rect, 1.0)
        assert np.array_equal(jacobian_density(constant_field, 0, 4.0, r).values, np.ones(r.shape))

    def test_rigid_rotation_is_uniform(self):
        field = make_synthetic("rigid_rotation", GridSpec(9, 9, x0=-4.0, y0=-4.0), omega=2.0)
        r = RasterSpec.covering(field.rect, 0.5)
        assert np.allclose(jacobian_density(field, 0, 4.0, r).values, 1.0)

    def test_values_span_one_to_scale_max(self, raster):
        density = jacobian_density(parabolic_field(), 0, 4.0, raster)
        assert density.values.min() == pytest.approx(1.0)
        assert density.values.max() == pytest.approx(4.0)

    def test_invariant_under_velocity_scaling(self, raster):
        a = jacobian_density(parabolic_field(gains=(1.0,)), 0, 4.0, raster)
        b = jacobian_density(parabolic_field(gains=(3.0,)), 0, 4.0, raster)
        assert np.allclose(a.values, b.values)

    def test_global_versus_per_step_normalization(self, raster):
        field = parabolic_field(nt=2, gains=(1.0, 2.0))
        per_step = JacobianDensitySource(field, raster, 4.0, "per_step")
        glob = JacobianDensitySource(field, raster, 4.0, "global")
        assert per_step.at_step(0).values.max() == pytest.approx(4.0)
        assert per_step.at_step(1).values.max() == pytest.approx(4.0)
        assert glob.at_step(0).values.max() < 3.0
        assert glob.at_step(1).values.max() == pytest.approx(4.0)

    def test_steps_are_cached_and_clamped(self, raster):
        source = JacobianDensitySource(parabolic_field(nt=2, gains=(1.0, 2.0)), raster, 4.0)
        assert source.at_step(1) is source.at_step(1)
        assert source.at_step(7) is source.at_step(1)

    def test_unknown_normalization(self, raster):
        with pytest.raises(ConfigError):
            JacobianDensitySource(parabolic_field(), raster, 4.0, "sometimes")


class TestDensityMap:
    def test_values_must_lie_in_range(self, raster):
        with pytest.raises(ConfigError):
            DensityMap(np.full(raster.shape, 0.5), raster, 4.0)
        with pytest.raises(ConfigError):
            DensityMap(np.full(raster.shape, 5.0), raster, 4.0)

    def test_shape_must_match_raster(self, raster):
        with pytest.raises(ConfigError):
            DensityMap(np.ones((2, 2)), raster)

    def test_value_at(self):
        r = RasterSpec(2, 1, 0.0, 0.0, 1.0)
        density = DensityMap(np.array([[1.0, 3.0]]), r, 4.0)
        assert density.value_at(1.5, 0.5) == 3.0
        assert density.value_at(-10.0, 0.5) == 1.0


class TestDensityFiles:
    """DM2D density input."""

    def test_values_are_clamped(self, tmp_path):
        path = tmp_path / "rho.dm2d"
        write_dm2d(path, np.array([[0.25, 2.0], [3.0, 10.0]]), 0.0, 0.0, 1.0, 1.0)
        density = load_density(path, 4.0)
        assert density.values.tolist() == [[1.0, 2.0], [3.0, 4.0]]
        assert density.raster == RasterSpec(2, 2, 0.0, 0.0, 1.0)

    def test_non_square_cells_need_a_raster(self, tmp_path):
        path = tmp_path / "rho.dm2d"
        write_dm2d(path, np.ones((2, 2)), 0.0, 0.0, 1.0, 2.0)
        with pytest.raises(FormatError):
            load_density(path, 4.0)

    def test_resampled_onto_a_raster(self, tmp_path, raster):
        path = tmp_path / "rho.dm2d"
        write_dm2d(path, np.full((4, 4), 2.0), 0.0, 0.0, 2.5, 2.5)
        density = load_density(path, 4.0, raster)
        assert density.raster == raster
        assert np.allclose(density.values, 2.0)

    def test_save_and_load(self, tmp_path, raster):
        path = tmp_path / "rho.dm2d"
        save_density(uniform_density(raster, 2.0), path)
        assert np.array_equal(load_density(path, 2.0).values, np.ones(raster.shape))


class TestDensitySources:
    def test_factory(self, tmp_path, raster):
        field = parabolic_field()
        assert isinstance(make_density_source("uniform", field, raster), UniformDensitySource)
        assert isinstance(make_density_source("jacobian", field, raster), JacobianDensitySource)
        path = tmp_path / "rho.dm2d"
        save_density(uniform_density(raster, 4.0), path)
        source = make_density_source("file", field, raster, path=str(path))
        assert isinstance(source, StaticDensitySource)
        assert source.describe()["density_path"] == str(path)

    def test_file_mode_needs_a_path(self, raster):
        with pytest.raises(ConfigError):
            make_density_source("file", parabolic_field(), raster)

    def test_unknown_mode(self, raster):
        with pytest.raises(ConfigError):
            make_density_source("random", parabolic_field(), raster)

    def test_uniform_source_scale_is_one(self, raster):
        source = UniformDensitySource(raster)
        assert source.scale_max == 1.0
        assert np.array_equal(source.at_step(3).values, np.ones(raster.shape))
