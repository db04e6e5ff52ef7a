"""Analytical relief shading: Horn gradients and Lambert diffuse reflection.

This is the comparison baseline and, because it has a closed form, the
ground-truth oracle for pipeline mechanics. Two implementation details are
deliberate and load-bearing for exactness tests elsewhere:

* ``_sincos_deg`` reduces angles to [0, 90) before touching ``math.sin``,
  so the direction vector for azimuth+180 is the bitwise negation of the
  vector for azimuth (the reduction uses only exact float operations).
* ``_horn_xy`` forms neighbor differences before summing, in a fixed
  grouping, so rotating a grid by 180 degrees negates both gradient
  components bitwise (IEEE addition is commutative and rounding is
  sign-symmetric).

Together these make "rotate the terrain 180 degrees, shade, rotate back"
byte-identical to shading with the opposite azimuth.
"""

import math
from dataclasses import dataclass

import numpy as np


def _sincos_deg(angle_deg: float) -> tuple[float, float]:
    """(sin, cos) of an angle in degrees via exact quadrant reduction."""
    a = float(angle_deg) % 360.0
    r = math.fmod(a, 90.0)  # exact for floats
    q = int((a - r) / 90.0) % 4
    s, c = math.sin(math.radians(r)), math.cos(math.radians(r))
    if q == 0:
        return s, c
    if q == 1:
        return c, -s
    if q == 2:
        return -s, -c
    return -c, s


@dataclass(frozen=True)
class LightVector:
    """Illumination direction: azimuth clockwise from north, altitude above horizon."""

    azimuth_deg: float = 315.0
    altitude_deg: float = 45.0

    def __post_init__(self):
        if not 0.0 < self.altitude_deg <= 90.0:
            raise ValueError(f"altitude must be in (0, 90] degrees, got {self.altitude_deg}")

    def unit(self) -> tuple[float, float, float]:
        """Unit vector toward the light as (east, north, up) components."""
        sa, ca = _sincos_deg(self.azimuth_deg)
        sh, ch = _sincos_deg(self.altitude_deg)
        return sa * ch, ca * ch, sh

    def rotated(self, delta_deg: float) -> "LightVector":
        return LightVector(self.azimuth_deg + delta_deg, self.altitude_deg)


def _horn_xy(values: np.ndarray, cell_size: float, exaggeration: float = 1.0):
    """Horn 3x3 gradients (dz/dx eastward, dz/dy southward) with edge replication."""
    p = np.pad(values, 1, mode="edge")
    a = p[:-2, :-2]
    b = p[:-2, 1:-1]
    c = p[:-2, 2:]
    d = p[1:-1, :-2]
    f = p[1:-1, 2:]
    g = p[2:, :-2]
    h = p[2:, 1:-1]
    i = p[2:, 2:]
    scale = exaggeration / (8.0 * cell_size)
    dzdx = (((c - a) + (i - g)) + 2.0 * (f - d)) * scale
    dzdy = (((g - a) + (i - c)) + 2.0 * (h - b)) * scale
    return dzdx, dzdy


def _fill_nodata(values: np.ndarray) -> np.ndarray:
    nan = np.isnan(values)
    if not nan.any():
        return values
    if nan.all():
        raise ValueError("all cells are nodata")
    return np.where(nan, np.nanmin(values), values)


def horn_gradient(dem, vertical_exaggeration: float = 1.0):
    """Per-cell (dz/dx, dz/dy) of an elevation grid, in rise over run.

    x increases eastward (columns), y southward (rows). Nodata cells are
    filled with the grid's minimum elevation before differencing.
    """
    if dem.rows < 3 or dem.cols < 3:
        raise ValueError(f"gradient needs at least a 3x3 grid, got {dem.rows}x{dem.cols}")
    return _horn_xy(_fill_nodata(dem.values), dem.cell_size, vertical_exaggeration)


def _diffuse_values(values, cell_size, light, exaggeration):
    dzdx, dzdy = _horn_xy(values, cell_size, exaggeration)
    le, ln, lu = light.unit()
    # surface normal before normalization is (-dzdx, +dzdy, 1) in (east, north, up);
    # dzdy points south, hence the sign
    num = (-dzdx) * le + dzdy * ln + lu
    den = np.sqrt((dzdx * dzdx + dzdy * dzdy) + 1.0)
    return np.clip(num / den, 0.0, 1.0)


def diffuse_shade(dem, light: LightVector | None = None,
                  vertical_exaggeration: float = 1.0) -> np.ndarray:
    """Lambertian diffuse shading of an elevation grid, values in [0, 1].

    Brightness is the clamped dot product of the unit surface normal with
    the light vector; flat ground renders at sin(altitude).
    """
    if light is None:
        light = LightVector()
    values = _fill_nodata(dem.values)
    return _diffuse_values(values, dem.cell_size, light, vertical_exaggeration)


def aerial_perspective(shading, norm_elev, strength: float) -> np.ndarray:
    """Scale contrast about mid-grey with elevation: full at the top of the
    range, reduced to (1 - strength) at the bottom."""
    if not 0.0 <= strength <= 1.0:
        raise ValueError(f"strength must be in [0, 1], got {strength}")
    v = np.asarray(shading, dtype=np.float64)
    e = np.asarray(getattr(norm_elev, "values", norm_elev), dtype=np.float64)
    if v.shape != e.shape:
        raise ValueError(f"shading {v.shape} and elevation {e.shape} dimensions differ")
    out = 0.5 + (v - 0.5) * (1.0 - strength * (1.0 - e))
    return np.clip(out, 0.0, 1.0)


class DiffuseTileShader:
    """Diffuse baseline wearing the tiled-inference model interface.

    Tile values are normalized elevations; they are scaled by ``elev_scale``
    (meters per unit) and shaded with ``cell_size`` ground resolution. With
    a closed-form shader behind the tiling pipeline, pipeline mechanics such
    as the rotation control can be checked against direct computation.
    """

    pool_divisor = 1
    dtype = np.float64

    def __init__(self, light: LightVector | None = None, cell_size: float = 1.0,
                 elev_scale: float = 1.0, vertical_exaggeration: float = 1.0,
                 tile_size: int = 256, crop_border: int = 50):
        if not cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {cell_size}")
        if not 0 <= 2 * crop_border < tile_size:
            raise ValueError(f"need 0 <= 2*crop_border < tile_size, got {crop_border}/{tile_size}")
        self.light = light if light is not None else LightVector()
        self.cell_size = float(cell_size)
        self.elev_scale = float(elev_scale)
        self.vertical_exaggeration = float(vertical_exaggeration)
        self.tile_size = int(tile_size)
        self.crop_border = int(crop_border)
        self.metadata: dict = {}

    def eval_batch(self, x: np.ndarray) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected (n, 1, h, w) input, got shape {x.shape}")
        out = np.empty(x.shape, dtype=np.float64)
        for k in range(x.shape[0]):
            vals = np.asarray(x[k, 0], dtype=np.float64) * self.elev_scale
            out[k, 0] = _diffuse_values(vals, self.cell_size, self.light,
                                        self.vertical_exaggeration)
        return out
