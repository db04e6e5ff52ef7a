"""Elevation-field preprocessing: normalization, rotation, downsampling,
flat-area detection, vertical shifting, and synthetic test terrain."""

import warnings
from dataclasses import dataclass

import numpy as np

from .raster_io import DemGrid
from .shading import _horn_xy, _sincos_deg


@dataclass
class NormalizedField:
    """Elevations mapped affinely into [k_min, k_max] within [0, 1]."""

    values: np.ndarray
    source_min: float
    source_max: float
    k_min: float
    k_max: float
    cell_size: float

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]


def normalize(dem: DemGrid, k_min: float = 0.0, k_max: float = 1.0,
              range_override: tuple[float, float] | None = None) -> NormalizedField:
    """Map elevations onto [k_min, k_max].

    The source range is the grid's own min/max unless ``range_override``
    gives an explicit (min_m, max_m); overridden values outside the range
    clamp. Nodata cells and a degenerate flat grid land at k_min.
    """
    if not (0.0 <= k_min < k_max <= 1.0):
        raise ValueError(f"need 0 <= k_min < k_max <= 1, got k_min={k_min}, k_max={k_max}")
    valid = dem.valid_mask()
    if not valid.any():
        raise ValueError("all cells are nodata")
    if range_override is not None:
        mn, mx = float(range_override[0]), float(range_override[1])
        if not mn < mx:
            raise ValueError(f"range override needs min < max, got ({mn}, {mx})")
    else:
        mn = float(np.nanmin(dem.values))
        mx = float(np.nanmax(dem.values))
    if mx == mn:
        out = np.full(dem.values.shape, k_min, dtype=np.float64)
    else:
        t = (dem.values - mn) / (mx - mn)
        if range_override is not None:
            t = np.clip(t, 0.0, 1.0)
        out = np.clip(k_min + t * (k_max - k_min), k_min, k_max)
        out[~valid] = k_min
    return NormalizedField(values=out, source_min=mn, source_max=mx,
                           k_min=float(k_min), k_max=float(k_max),
                           cell_size=dem.cell_size)


def rotate(field: np.ndarray, angle_deg: float, fill: float = 0.0,
           out_shape: tuple[int, int] | None = None) -> np.ndarray:
    """Rotate raster content clockwise by ``angle_deg`` about its center.

    Multiples of 90 degrees are exact index permutations; other angles use
    bilinear resampling into the minimal axis-aligned bounding raster (or
    into ``out_shape`` centered on the same point, which is how a rotated
    image is rotated back and cropped to its original footprint). Samples
    falling outside the source footprint take ``fill``.
    """
    a = np.asarray(field, dtype=np.float64)
    if a.ndim != 2 or a.size == 0:
        raise ValueError(f"rotate expects a non-empty 2-D raster, got shape {a.shape}")
    h, w = a.shape
    ang = float(angle_deg) % 360.0
    if ang in (0.0, 90.0, 180.0, 270.0):
        k = {0.0: 0, 90.0: 3, 180.0: 2, 270.0: 1}[ang]
        res = np.ascontiguousarray(np.rot90(a, k))
        if out_shape is not None and res.shape != tuple(out_shape):
            raise ValueError(f"out_shape {out_shape} conflicts with exact rotation {res.shape}")
        return res

    s, c = _sincos_deg(ang)
    if out_shape is None:
        ho = int(np.ceil(w * abs(s) + h * abs(c) - 1e-9))
        wo = int(np.ceil(w * abs(c) + h * abs(s) - 1e-9))
    else:
        ho, wo = int(out_shape[0]), int(out_shape[1])
    yy, xx = np.meshgrid(np.arange(ho) - (ho - 1) / 2.0,
                         np.arange(wo) - (wo - 1) / 2.0, indexing="ij")
    # inverse map: output pixel -> source coordinates (counterclockwise by ang)
    sx = c * xx + s * yy + (w - 1) / 2.0
    sy = -s * xx + c * yy + (h - 1) / 2.0
    inside = (sx > -0.5) & (sx < w - 0.5) & (sy > -0.5) & (sy < h - 0.5)
    sxc = np.clip(sx, 0.0, float(w - 1))
    syc = np.clip(sy, 0.0, float(h - 1))
    x0 = np.clip(np.floor(sxc).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(syc).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = sxc - x0
    fy = syc - y0
    top = a[y0, x0] + fx * (a[y0, x1] - a[y0, x0])
    bot = a[y1, x0] + fx * (a[y1, x1] - a[y1, x0])
    res = top + fy * (bot - top)
    return np.where(inside, res, float(fill))


def downsample(dem: DemGrid, factor: int) -> DemGrid:
    """Reduce resolution by block-averaging factor x factor cells.

    Partial blocks at the south/east edges average the cells they have;
    nodata cells are excluded from means (an all-nodata block stays nodata).
    Cell size scales by factor; the origin keeps the north-west corner fixed.
    """
    if factor != int(factor) or factor < 1:
        raise ValueError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    if factor == 1:
        return DemGrid(dem.values.copy(), dem.cell_size, dem.nodata_value, dem.origin)
    if factor > dem.rows and factor > dem.cols:
        raise ValueError(f"factor {factor} exceeds both grid dimensions {dem.rows}x{dem.cols}")
    rows, cols = dem.rows, dem.cols
    ro = -(-rows // factor)
    co = -(-cols // factor)
    padded = np.full((ro * factor, co * factor), np.nan)
    padded[:rows, :cols] = dem.values
    blocks = padded.reshape(ro, factor, co, factor).transpose(0, 2, 1, 3).reshape(ro, co, factor * factor)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)  # all-NaN block means
        out = np.nanmean(blocks, axis=-1)
    nodata = dem.nodata_value
    if np.isnan(out).any() and nodata is None:
        nodata = -9999.0
    new_cell = dem.cell_size * factor
    xll, yll = dem.origin
    yll_new = yll + rows * dem.cell_size - ro * new_cell
    return DemGrid(out, new_cell, nodata, (xll, yll_new))


def flat_mask(dem: DemGrid, slope_threshold_deg: float = 1.5) -> np.ndarray:
    """Boolean mask of cells whose Horn slope is below the threshold.

    Nodata cells are never marked flat.
    """
    if not slope_threshold_deg > 0:
        raise ValueError(f"slope threshold must be positive, got {slope_threshold_deg}")
    valid = dem.valid_mask()
    values = dem.values
    if not valid.all():
        if not valid.any():
            raise ValueError("all cells are nodata")
        values = np.where(valid, values, np.nanmin(values))
    dzdx, dzdy = _horn_xy(values, dem.cell_size)
    slope_deg = np.degrees(np.arctan(np.hypot(dzdx, dzdy)))
    return (slope_deg < slope_threshold_deg) & valid


def vertical_shift(dem: DemGrid, offset_m: float) -> DemGrid:
    """Add a constant elevation offset; geometry and nodata cells unchanged."""
    return DemGrid(dem.values + float(offset_m), dem.cell_size, dem.nodata_value, dem.origin)


def synth_terrain(seed: int, rows: int, cols: int, cell_size: float = 50.0,
                  roughness: float = 0.6, amplitude: float = 1000.0,
                  base_elevation: float = 200.0, flat_fraction: float = 0.0) -> DemGrid:
    """Deterministic fractal terrain by diamond-square, for tests and demos.

    ``roughness`` in [0, 1] sets how slowly detail amplitude decays toward
    fine scales (1 = no decay). ``flat_fraction`` flattens that share of the
    lowest cells into a plain at the base elevation. Total relief spans
    ``amplitude`` meters above ``base_elevation``.
    """
    if rows < 2 or cols < 2:
        raise ValueError(f"need at least 2x2 cells, got {rows}x{cols}")
    if not 0.0 <= roughness <= 1.0:
        raise ValueError(f"roughness must be in [0, 1], got {roughness}")
    if not 0.0 <= flat_fraction <= 1.0:
        raise ValueError(f"flat_fraction must be in [0, 1], got {flat_fraction}")
    rng = np.random.default_rng(seed)
    size = 1
    while size < max(rows, cols) - 1:
        size *= 2
    n = size + 1
    g = np.zeros((n, n))
    g[0, 0], g[0, -1], g[-1, 0], g[-1, -1] = rng.uniform(-1.0, 1.0, 4)
    amp = 1.0
    decay = 2.0 ** -(1.0 - roughness)
    step = size
    while step > 1:
        half = step // 2
        corners = g[0:n:step, 0:n:step]
        centers = 0.25 * (corners[:-1, :-1] + corners[:-1, 1:]
                          + corners[1:, :-1] + corners[1:, 1:])
        g[half:n:step, half:n:step] = centers + rng.uniform(-1.0, 1.0, centers.shape) * amp
        # edge midpoints: average of the 4 axial neighbors at distance half,
        # with indices clamped at the borders
        for ys, xs in ((half, 0), (0, half)):
            yy = np.arange(ys, n, step)
            xx = np.arange(xs, n, step)
            py0 = np.clip(yy - half, 0, n - 1)
            py1 = np.clip(yy + half, 0, n - 1)
            px0 = np.clip(xx - half, 0, n - 1)
            px1 = np.clip(xx + half, 0, n - 1)
            avg = 0.25 * (g[py0][:, xx] + g[py1][:, xx] + g[yy][:, px0] + g[yy][:, px1])
            g[np.ix_(yy, xx)] = avg + rng.uniform(-1.0, 1.0, avg.shape) * amp
        amp *= decay
        step = half
    field = g[:rows, :cols]
    lo, hi = field.min(), field.max()
    field = (field - lo) / (hi - lo) if hi > lo else np.zeros_like(field)
    if flat_fraction > 0.0:
        q = np.quantile(field, flat_fraction)
        if q >= 1.0:
            field = np.zeros_like(field)
        else:
            field = np.maximum(field, q)
            field = (field - q) / (1.0 - q)
    return DemGrid(base_elevation + amplitude * field, cell_size)
