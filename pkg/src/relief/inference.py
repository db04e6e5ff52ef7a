"""Shade arbitrarily large DEMs: preprocessing controls, overlapping-tile
evaluation with alpha-blend assembly, and a single-pass whole-image mode.

The blend is separable: each placement carries one weight profile per axis
(linear ramps of blend_width at interior edges, renormalized per pixel to
sum to 1). Assembly merges patches with a running lerp, which keeps regions
where patches agree bitwise unchanged; a constant patch field therefore
assembles to a bit-constant image, and single-coverage pixels pass through
exactly.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from . import terrain
from .raster_io import DemGrid


@dataclass
class ShadeOptions:
    """User controls for the shading pipeline.

    rotation_deg turns the terrain clockwise before shading and back after,
    which moves the apparent light source counterclockwise by the same
    angle (180 gives bottom illumination). k_min/k_max rescale normalized
    elevations; downsample_factor generalizes relief by rendering a coarser
    grid; normalization_override reuses a training elevation range instead
    of the DEM's own extremes.
    """

    rotation_deg: float = 0.0
    k_min: float = 0.0
    k_max: float = 1.0
    downsample_factor: int = 1
    normalization_override: tuple | None = None
    blend_width: int = 20


@dataclass
class TilePlan:
    """Placement geometry mapping a raster onto overlapping model tiles.

    Offsets are output-window origins per axis; the input window of
    placement (iy, ix) starts at the same origin in the crop-padded raster
    and spans tile_size. Profiles are the per-axis blend weights, already
    renormalized to a partition of unity.
    """

    rows: int
    cols: int
    tile_size: int
    crop_border: int
    blend_width: int
    offsets_y: list
    offsets_x: list
    profiles_y: list
    profiles_x: list

    @property
    def out_side(self) -> int:
        return self.tile_size - 2 * self.crop_border

    @property
    def stride(self) -> int:
        return self.out_side - self.blend_width

    @property
    def count(self) -> int:
        return len(self.offsets_y) * len(self.offsets_x)

    @property
    def padded_shape(self) -> tuple:
        return (self.rows + 2 * self.crop_border, self.cols + 2 * self.crop_border)

    def placements(self):
        """Yield (iy, ix, oy, ox) in row-major placement order."""
        for iy, oy in enumerate(self.offsets_y):
            for ix, ox in enumerate(self.offsets_x):
                yield iy, ix, oy, ox

    def weights_for(self, iy: int, ix: int) -> np.ndarray:
        """The 2-D normalized blend weights of one placement."""
        return np.outer(self.profiles_y[iy], self.profiles_x[ix])


def _axis_layout(extent: int, out: int, blend: int):
    stride = out - blend
    n = 1 if extent == out else -(-(extent - out) // stride) + 1
    offsets = [i * stride for i in range(n - 1)] + [extent - out]
    ramp = (np.arange(blend, dtype=np.float64) + 1.0) / (blend + 1.0)
    raw = []
    for i in range(n):
        w = np.ones(out, dtype=np.float64)
        if i > 0:
            w[:blend] *= ramp
        if i < n - 1:
            w[out - blend :] *= ramp[::-1]
        raw.append(w)
    total = np.zeros(extent, dtype=np.float64)
    for off, w in zip(offsets, raw):
        total[off : off + out] += w
    profiles = [w / total[off : off + out] for off, w in zip(offsets, raw)]
    return offsets, profiles


def plan_tiles(rows: int, cols: int, tile_size: int, crop_border: int,
               blend_width: int) -> TilePlan:
    """Cover a rows x cols extent with overlapping placements.

    Output windows are out_side = tile_size - 2*crop_border wide on a
    stride of out_side - blend_width; the trailing placement per axis
    shifts inward so windows never leave the extent.
    """
    out = tile_size - 2 * crop_border
    if not 0 <= 2 * crop_border < tile_size:
        raise ValueError(f"need 0 <= 2*crop_border < tile_size, got {crop_border}/{tile_size}")
    if not 0 <= blend_width < out:
        raise ValueError(f"blend_width must be in [0, {out}), got {blend_width}")
    if rows < out or cols < out:
        raise ValueError(f"extent {rows}x{cols} smaller than one {out}x{out} output tile")
    offs_y, profs_y = _axis_layout(rows, out, blend_width)
    offs_x, profs_x = _axis_layout(cols, out, blend_width)
    return TilePlan(rows=rows, cols=cols, tile_size=tile_size, crop_border=crop_border,
                    blend_width=blend_width, offsets_y=offs_y, offsets_x=offs_x,
                    profiles_y=profs_y, profiles_x=profs_x)


def blend_assemble(patches, plan: TilePlan) -> np.ndarray:
    """Weighted-average the shaded patches into one image.

    ``patches`` holds one out_side x out_side array per placement in
    row-major placement order.
    """
    if len(patches) != plan.count:
        raise ValueError(f"got {len(patches)} patches for {plan.count} placements")
    out = plan.out_side
    ny, nx = len(plan.offsets_y), len(plan.offsets_x)
    strips = []
    for iy in range(ny):
        acc = np.zeros((out, plan.cols))
        wacc = np.zeros(plan.cols)
        for ix in range(nx):
            p = np.asarray(patches[iy * nx + ix], dtype=np.float64)
            if p.shape != (out, out):
                raise ValueError(f"patch {iy},{ix} has shape {p.shape}, expected {(out, out)}")
            ox = plan.offsets_x[ix]
            w = plan.profiles_x[ix]
            seg = slice(ox, ox + out)
            t = w / (wacc[seg] + w)
            acc[:, seg] += t * (p - acc[:, seg])
            wacc[seg] += w
        strips.append(acc)
    img = np.zeros((plan.rows, plan.cols))
    wacc = np.zeros(plan.rows)
    for iy in range(ny):
        oy = plan.offsets_y[iy]
        w = plan.profiles_y[iy]
        seg = slice(oy, oy + out)
        t = (w / (wacc[seg] + w))[:, None]
        img[seg] += t * (strips[iy] - img[seg])
        wacc[seg] += w
    return img


def _check_options(opt: ShadeOptions, out_side: int) -> None:
    if not (0.0 <= opt.k_min < opt.k_max <= 1.0):
        raise ValueError(f"need 0 <= k_min < k_max <= 1, got {opt.k_min}/{opt.k_max}")
    if opt.downsample_factor < 1 or opt.downsample_factor != int(opt.downsample_factor):
        raise ValueError(f"downsample_factor must be a positive integer, got {opt.downsample_factor}")
    if not 0 <= opt.blend_width < out_side:
        raise ValueError(f"blend_width must be in [0, {out_side}), got {opt.blend_width}")


def _preprocess(model, dem: DemGrid, opt: ShadeOptions, warn: bool = True):
    """Shared head of both shading modes: downsample, normalize, rotate."""
    out_side = model.tile_size - 2 * model.crop_border
    _check_options(opt, out_side)
    d = terrain.downsample(dem, int(opt.downsample_factor)) if opt.downsample_factor > 1 else dem
    if warn:
        trained = model.metadata.get("cell_size_m")
        if trained and abs(d.cell_size / trained - 1.0) > 1e-6:
            warnings.warn(
                f"model was trained at {trained} m per cell but the DEM has "
                f"{d.cell_size} m; output quality may degrade"
            )
    nf = terrain.normalize(d, opt.k_min, opt.k_max, opt.normalization_override)
    if float(opt.rotation_deg) % 360.0 != 0.0:
        rot = terrain.rotate(nf.values, opt.rotation_deg, fill=opt.k_min)
    else:
        rot = nf.values
    if rot.shape[0] < out_side or rot.shape[1] < out_side:
        raise ValueError(
            f"raster is {rot.shape[0]}x{rot.shape[1]} after preprocessing, smaller "
            f"than one {out_side}x{out_side} output tile"
        )
    return nf, rot


def plan_for(model, dem: DemGrid, options: ShadeOptions | None = None) -> TilePlan:
    """The TilePlan shade() would use, without evaluating anything."""
    opt = options if options is not None else ShadeOptions()
    _, rot = _preprocess(model, dem, opt, warn=False)
    return plan_tiles(rot.shape[0], rot.shape[1], model.tile_size, model.crop_border,
                      opt.blend_width)


def _rotate_back(img: np.ndarray, opt: ShadeOptions, shape: tuple) -> np.ndarray:
    if float(opt.rotation_deg) % 360.0 != 0.0:
        img = terrain.rotate(img, -float(opt.rotation_deg), fill=opt.k_min, out_shape=shape)
    return np.clip(img, 0.0, 1.0)


def shade(model, dem: DemGrid, options: ShadeOptions | None = None,
          batch_size: int = 8) -> np.ndarray:
    """Render a shaded relief image of the DEM with a trained model (or any
    object with the same tile interface).

    Pipeline: downsample, normalize, rotate, split into overlapping tiles
    with crop_border context from edge-replication padding, evaluate,
    center-crop, blend, rotate back. The result has the downsampled DEM's
    dimensions and values in [0, 1].
    """
    opt = options if options is not None else ShadeOptions()
    nf, rot = _preprocess(model, dem, opt)
    ts, c = model.tile_size, model.crop_border
    out = ts - 2 * c
    plan = plan_tiles(rot.shape[0], rot.shape[1], ts, c, opt.blend_width)
    padded = np.pad(rot, c, mode="edge")
    windows = [padded[oy : oy + ts, ox : ox + ts] for _, _, oy, ox in plan.placements()]
    patches = []
    for s in range(0, len(windows), batch_size):
        x = np.stack([np.asarray(w, dtype=model.dtype) for w in windows[s : s + batch_size]])
        y = model.eval_batch(x[:, None])
        for k in range(y.shape[0]):
            patches.append(np.asarray(y[k, 0, c : c + out, c : c + out], dtype=np.float64))
    img = blend_assemble(patches, plan)
    return _rotate_back(img, opt, nf.values.shape)


def estimate_whole_bytes(model, rows: int, cols: int) -> int:
    """Rough peak memory of a whole-image forward pass, in bytes."""
    c = model.crop_border
    div = model.pool_divisor
    h = rows + 2 * c
    w = cols + 2 * c
    h += (-h) % div
    w += (-w) % div
    base = getattr(getattr(model, "config", None), "base_channels", 1)
    itemsize = np.dtype(model.dtype).itemsize
    from . import kernels

    # live activations scale with the outermost level; the numpy backend
    # additionally materializes 9*channels im2col columns
    per_px = 8 * base
    if kernels.BACKEND == "numpy":
        per_px += 9 * 2 * base
    return h * w * per_px * itemsize


def shade_whole(model, dem: DemGrid, options: ShadeOptions | None = None,
                memory_budget_mb: float = 2048.0) -> np.ndarray:
    """Single forward pass over the entire raster instead of tiles.

    The raster is edge-padded by crop_border plus whatever makes both sides
    divisible by the model's pooling factor, then cropped back. Refuses to
    run past ``memory_budget_mb`` with the estimate in the message.
    """
    opt = options if options is not None else ShadeOptions()
    nf, rot = _preprocess(model, dem, opt)
    need = estimate_whole_bytes(model, rot.shape[0], rot.shape[1])
    if need > memory_budget_mb * 2 ** 20:
        raise ValueError(
            f"whole-image pass needs about {need / 2**20:.0f} MB, over the "
            f"{memory_budget_mb:.0f} MB budget; raise it or use tiled shade()"
        )
    c = model.crop_border
    div = model.pool_divisor
    rows, cols = rot.shape
    pad_b = (-(rows + 2 * c)) % div
    pad_r = (-(cols + 2 * c)) % div
    padded = np.pad(rot, ((c, c + pad_b), (c, c + pad_r)), mode="edge")
    x = np.asarray(padded, dtype=model.dtype)[None, None]
    y = model.eval_batch(x)[0, 0]
    img = np.asarray(y[c : c + rows, c : c + cols], dtype=np.float64)
    return _rotate_back(img, opt, nf.values.shape)
