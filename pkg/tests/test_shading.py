import math

import numpy as np
import pytest

from relief.raster_io import DemGrid
from relief.shading import (
    DiffuseTileShader,
    LightVector,
    _horn_xy,
    _sincos_deg,
    aerial_perspective,
    diffuse_shade,
    horn_gradient,
)


class TestSinCosDeg:
    @pytest.mark.parametrize("deg", [0, 30, 45, 90, 135, 180, 225, 270, 315, 359, 400, -45])
    def test_matches_library_trig(self, deg):
        s, c = _sincos_deg(deg)
        assert s == pytest.approx(math.sin(math.radians(deg)), abs=1e-15)
        assert c == pytest.approx(math.cos(math.radians(deg)), abs=1e-15)

    def test_cardinal_angles_exact(self):
        assert _sincos_deg(0) == (0.0, 1.0)
        assert _sincos_deg(90) == (1.0, 0.0)
        assert _sincos_deg(180) == (-0.0, -1.0)
        assert _sincos_deg(270) == (-1.0, 0.0)

    @pytest.mark.parametrize("deg", [0.0, 10.0, 45.0, 100.25, 200.5, 315.0, 359.9])
    def test_opposite_azimuth_is_bitwise_negation(self, deg):
        s1, c1 = _sincos_deg(deg)
        s2, c2 = _sincos_deg(deg + 180.0)
        assert s2 == -s1 and c2 == -c1


class TestLightVector:
    def test_unit_vector_points_at_light(self):
        east, north, up = LightVector(90.0, 30.0).unit()
        assert east == pytest.approx(math.cos(math.radians(30.0)))
        assert north == pytest.approx(0.0, abs=1e-16)
        assert up == pytest.approx(0.5)

    def test_default_is_northwest(self):
        east, north, up = LightVector().unit()
        assert east < 0 and north > 0 and up > 0

    def test_unit_norm(self):
        e, n, u = LightVector(123.4, 37.9).unit()
        assert math.hypot(e, n, u) == pytest.approx(1.0, abs=1e-15)

    def test_rotated(self):
        lv = LightVector(315.0, 45.0).rotated(90.0)
        assert lv.azimuth_deg == 405.0
        assert lv.altitude_deg == 45.0

    @pytest.mark.parametrize("alt", [0.0, -5.0, 90.1])
    def test_altitude_bounds(self, alt):
        with pytest.raises(ValueError):
            LightVector(0.0, alt)


class TestHornGradient:
    def test_planar_slope_recovered_exactly(self):
        # z = 2x + 3y on a 10 m grid: dz/dx = 2, dz/dy = 3 away from edges
        y, x = np.mgrid[0:6, 0:7]
        dem = DemGrid(2.0 * (x * 10.0) + 3.0 * (y * 10.0), cell_size=10.0)
        dzdx, dzdy = horn_gradient(dem)
        assert np.allclose(dzdx[1:-1, 1:-1], 2.0, atol=1e-12)
        assert np.allclose(dzdy[1:-1, 1:-1], 3.0, atol=1e-12)

    def test_single_cell_oracle(self):
        # hand-computed Horn stencil on a 3x3 patch, cell size 5
        z = np.array([[1.0, 2.0, 4.0],
                      [0.5, 3.0, 5.0],
                      [2.0, 2.5, 7.0]])
        dzdx, dzdy = _horn_xy(z, 5.0)
        expect_x = ((4.0 - 1.0) + (7.0 - 2.0) + 2.0 * (5.0 - 0.5)) / 40.0
        expect_y = ((2.0 - 1.0) + (7.0 - 4.0) + 2.0 * (2.5 - 2.0)) / 40.0
        assert dzdx[1, 1] == pytest.approx(expect_x, rel=1e-15)
        assert dzdy[1, 1] == pytest.approx(expect_y, rel=1e-15)

    def test_exaggeration_scales_linearly(self):
        z = np.arange(12.0).reshape(3, 4) ** 1.5
        gx1, gy1 = _horn_xy(z, 2.0, exaggeration=1.0)
        gx3, gy3 = _horn_xy(z, 2.0, exaggeration=3.0)
        assert np.allclose(gx3, 3.0 * gx1, rtol=1e-15)
        assert np.allclose(gy3, 3.0 * gy1, rtol=1e-15)

    def test_rot180_negates_gradients_bitwise(self, rng):
        z = rng.standard_normal((21, 17)) * 500.0
        gx, gy = _horn_xy(z, 30.0)
        rx, ry = _horn_xy(z[::-1, ::-1].copy(), 30.0)
        assert np.array_equal(rx, -gx[::-1, ::-1])
        assert np.array_equal(ry, -gy[::-1, ::-1])

    def test_nodata_filled_with_minimum(self):
        z = np.array([[1.0, np.nan, 3.0]] * 3)
        dem = DemGrid(z, cell_size=1.0)
        gx, _ = horn_gradient(dem)
        assert np.isfinite(gx).all()

    def test_needs_3x3(self):
        with pytest.raises(ValueError, match="3x3"):
            horn_gradient(DemGrid(np.zeros((2, 5)), 1.0))


class TestDiffuseShade:
    def test_flat_ground_is_sin_altitude(self):
        dem = DemGrid(np.full((5, 5), 120.0), cell_size=10.0)
        img = diffuse_shade(dem, LightVector(315.0, 30.0))
        assert np.allclose(img, 0.5, atol=1e-15)

    def test_slope_facing_light_brighter(self):
        # terrain rising eastward: its surface normal tilts west, so western
        # light strikes it face-on and eastern light grazes it
        y, x = np.mgrid[0:8, 0:8]
        dem = DemGrid(x * 20.0, cell_size=10.0)
        east = diffuse_shade(dem, LightVector(90.0, 45.0))
        west = diffuse_shade(dem, LightVector(270.0, 45.0))
        assert west[3, 3] > 0.5 > east[3, 3]

    def test_northwest_slope_brighter_under_default_light(self):
        # gentle slope descending toward the northwest faces the default light
        y, x = np.mgrid[0:9, 0:9]
        dem = DemGrid(0.3 * 10.0 * (x + y), cell_size=10.0)
        img = diffuse_shade(dem)
        assert img[4, 4] > math.sin(math.radians(45.0))

    def test_closed_form_oracle(self):
        # inclined plane z = s*x: normal (-s,0,1)/sqrt(1+s^2); light due east
        s = 0.75
        y, x = np.mgrid[0:5, 0:5]
        dem = DemGrid(s * x * 4.0, cell_size=4.0)
        alt = 50.0
        img = diffuse_shade(dem, LightVector(90.0, alt))
        expect = (-s * math.cos(math.radians(alt)) + math.sin(math.radians(alt))) \
            / math.sqrt(1 + s * s)
        assert img[2, 2] == pytest.approx(max(expect, 0.0), abs=1e-14)

    def test_output_in_unit_range(self, small_dem):
        img = diffuse_shade(small_dem, LightVector(315.0, 10.0))
        assert img.min() >= 0.0 and img.max() <= 1.0

    def test_all_nodata_rejected(self):
        dem = DemGrid(np.full((4, 4), np.nan), cell_size=1.0)
        with pytest.raises(ValueError, match="nodata"):
            diffuse_shade(dem)


class TestAerialPerspective:
    def test_high_ground_keeps_contrast(self):
        shading = np.array([[0.9, 0.1]])
        elev = np.array([[1.0, 1.0]])
        out = aerial_perspective(shading, elev, strength=0.8)
        assert np.allclose(out, shading)

    def test_low_ground_flattens_toward_mid_grey(self):
        shading = np.array([[0.9, 0.1]])
        elev = np.array([[0.0, 0.0]])
        out = aerial_perspective(shading, elev, strength=1.0)
        assert np.allclose(out, 0.5)

    def test_intermediate_formula(self):
        out = aerial_perspective(np.array([[0.75]]), np.array([[0.5]]), strength=0.4)
        assert out[0, 0] == pytest.approx(0.5 + 0.25 * 0.8, rel=1e-15)

    def test_strength_bounds(self):
        with pytest.raises(ValueError):
            aerial_perspective(np.zeros((2, 2)), np.zeros((2, 2)), strength=1.5)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="differ"):
            aerial_perspective(np.zeros((2, 2)), np.zeros((3, 2)), strength=0.5)


class TestDiffuseTileShader:
    def test_matches_direct_diffuse_on_one_tile(self, rng):
        vals = rng.random((64, 64))
        sh = DiffuseTileShader(cell_size=2.0, elev_scale=300.0, tile_size=64, crop_border=8)
        out = sh.eval_batch(vals[None, None])[0, 0]
        direct = diffuse_shade(DemGrid(vals * 300.0, cell_size=2.0))
        assert np.array_equal(out, direct)

    def test_batch_shape(self, rng):
        x = rng.random((3, 1, 32, 32))
        out = DiffuseTileShader(tile_size=32, crop_border=4).eval_batch(x)
        assert out.shape == (3, 1, 32, 32)

    def test_interface_attributes(self):
        sh = DiffuseTileShader(tile_size=128, crop_border=20)
        assert sh.tile_size == 128
        assert sh.crop_border == 20
        assert sh.pool_divisor == 1
        assert sh.metadata == {}

    def test_rejects_bad_geometry(self):
        with pytest.raises(ValueError):
            DiffuseTileShader(tile_size=64, crop_border=32)
