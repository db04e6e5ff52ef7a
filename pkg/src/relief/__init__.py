"""Neural and analytical relief shading for digital elevation models.

Train a U-Net on DEM/shading pairs, render rasters of any size through
overlapping tiles with blending, and compare against a Lambertian diffuse
baseline. Everything runs on numpy, with numba-accelerated kernels when
available (see relief.backend).
"""

from .errors import FormatError, NumericError
from .inference import ShadeOptions, TilePlan, blend_assemble, plan_for, plan_tiles, shade, shade_whole
from .metrics import mse, ssim
from .raster_io import (
    DemGrid,
    quantize_gray,
    read_ascii_grid,
    read_gray_image,
    write_ascii_grid,
    write_gray_image,
)
from .shading import (
    DiffuseTileShader,
    LightVector,
    aerial_perspective,
    diffuse_shade,
    horn_gradient,
)
from .terrain import NormalizedField, downsample, flat_mask, normalize, rotate, synth_terrain, vertical_shift
from .training import TrainHyper, TrainingPair, make_tiles, resume, train
from .unet import UNetConfig, UNetModel

__version__ = "0.1.0"

__all__ = [
    "DemGrid", "DiffuseTileShader", "FormatError", "LightVector", "NormalizedField",
    "NumericError", "ShadeOptions", "TilePlan", "TrainHyper", "TrainingPair",
    "UNetConfig", "UNetModel", "aerial_perspective", "blend_assemble", "diffuse_shade",
    "downsample", "flat_mask", "horn_gradient", "make_tiles", "mse", "normalize",
    "plan_for", "plan_tiles", "quantize_gray", "read_ascii_grid", "read_gray_image",
    "resume", "rotate", "shade", "shade_whole", "ssim", "synth_terrain", "train",
    "vertical_shift", "write_ascii_grid", "write_gray_image",
]
