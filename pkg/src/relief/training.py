"""Tile datasets from aligned DEM/shading pairs, augmentations for flat
terrain, and the Adam training loop with checkpoint/resume.

Reproducibility scheme: every epoch derives its own generator from
(seed, epoch), and one-off streams (weight init, augmentation) use
(seed, 0, k). Resuming from a checkpoint therefore replays the identical
trajectory without serializing any generator state.
"""

import json
import struct
import warnings
import zlib
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import FormatError, NumericError
from .raster_io import DemGrid, validate_gray, _read_source, _write_sink
from .terrain import flat_mask, normalize
from .unet import (FORMAT_VERSION, UNetConfig, UNetModel, _parse_container,
                   layer_order, layer_shapes)

CHECKPOINT_MAGIC = b"RELIEFCK"


@dataclass
class TrainingPair:
    """Aligned elevation grid and target shading of the same extent."""

    dem: DemGrid
    shading: np.ndarray

    def __post_init__(self):
        self.shading = validate_gray(self.shading)
        if self.shading.shape != self.dem.values.shape:
            raise ValueError(
                f"dem is {self.dem.values.shape}, shading is {self.shading.shape}; "
                "training pairs need identical dimensions"
            )

    @property
    def cell_size(self) -> float:
        return self.dem.cell_size


@dataclass
class TileSample:
    """One training example: input elevations, target greys, loss window."""

    input: np.ndarray
    target: np.ndarray
    region: tuple
    tag: str  # "real" | "flat" | "vshift"


@dataclass
class TrainHyper:
    epochs: int
    batch_size: int = 8
    alpha: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    origin_shift_period: int = 25
    flat_tiles: int = 0
    flat_tone: float | None = None
    flat_slope_threshold_deg: float = 1.5
    vshift_fraction: float = 0.0
    vshift_max_m: float | None = None  # None: 10% of the pair's elevation range
    seed: int = 0
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.origin_shift_period < 1:
            raise ValueError(f"origin_shift_period must be >= 1, got {self.origin_shift_period}")
        if self.flat_tiles < 0:
            raise ValueError(f"flat_tiles must be >= 0, got {self.flat_tiles}")
        if not 0.0 <= self.vshift_fraction <= 1.0:
            raise ValueError(f"vshift_fraction must be in [0, 1], got {self.vshift_fraction}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")
        if self.checkpoint_every < 0:
            raise ValueError(f"checkpoint_every must be >= 0, got {self.checkpoint_every}")


def _loss_region(config: UNetConfig) -> tuple:
    c = config.crop_border
    return (c, c, config.out_side, config.out_side)


def make_tiles(pair: TrainingPair, config: UNetConfig, origin=(0, 0)) -> list[TileSample]:
    """Non-overlapping tiles starting at (dy, dx); partial tiles discarded.

    Elevations are normalized with the pair's own global min/max, so counts
    follow floor((rows - dy) / tile) * floor((cols - dx) / tile).
    """
    dy, dx = origin
    t = config.tile_size
    if not (0 <= dy < t and 0 <= dx < t):
        raise ValueError(f"origin {origin} outside [0, {t})")
    rows, cols = pair.dem.rows, pair.dem.cols
    ny, nx = (rows - dy) // t, (cols - dx) // t
    if ny < 1 or nx < 1:
        raise ValueError(f"raster {rows}x{cols} holds no full {t}-tile from origin {origin}")
    nf = normalize(pair.dem).values
    region = _loss_region(config)
    samples = []
    for iy in range(ny):
        y0 = dy + iy * t
        for ix in range(nx):
            x0 = dx + ix * t
            samples.append(TileSample(
                input=np.asarray(nf[y0 : y0 + t, x0 : x0 + t], dtype=config.dtype),
                target=np.asarray(pair.shading[y0 : y0 + t, x0 : x0 + t], dtype=config.dtype),
                region=region,
                tag="real",
            ))
    return samples


def estimate_flat_tone(pair: TrainingPair, slope_threshold_deg: float = 1.5) -> float:
    """Mean shading value over the near-flat cells of the pair."""
    m = flat_mask(pair.dem, slope_threshold_deg)
    if not m.any():
        raise ValueError(
            f"no cells flatter than {slope_threshold_deg} degrees; supply the flat tone explicitly"
        )
    return float(pair.shading[m].mean())


def make_flat_tiles(count: int, flat_tone: float, rng, config: UNetConfig) -> list[TileSample]:
    """Constant tiles at uniform random normalized elevations, all mapping
    to the same constant target tone."""
    if count < 0:
        raise ValueError(f"count must be >= 0, got {count}")
    if not 0.0 <= flat_tone <= 1.0:
        raise ValueError(f"flat_tone must be in [0, 1], got {flat_tone}")
    t = config.tile_size
    region = _loss_region(config)
    target = np.full((t, t), flat_tone, dtype=config.dtype)
    samples = []
    for _ in range(count):
        elev = rng.uniform(0.0, 1.0)
        samples.append(TileSample(
            input=np.full((t, t), elev, dtype=config.dtype),
            target=target.copy(),
            region=region,
            tag="flat",
        ))
    return samples


def make_vertical_shift_tiles(pair: TrainingPair, fraction: float, max_offset_m: float,
                              rng, config: UNetConfig,
                              slope_threshold_deg: float = 1.5) -> list[TileSample]:
    """Duplicate mostly-flat tiles at randomly shifted elevations.

    Candidate tiles (origin (0,0) tiling) have a majority of near-flat
    cells; a ``fraction`` share of them is duplicated with elevations offset
    uniformly in [-max_offset_m, +max_offset_m], renormalized into [0, 1]
    with clamping. Targets stay unchanged.
    """
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must be in [0, 1], got {fraction}")
    if not max_offset_m >= 0:
        raise ValueError(f"max_offset_m must be >= 0, got {max_offset_m}")
    if fraction == 0.0:
        return []
    t = config.tile_size
    flat = flat_mask(pair.dem, slope_threshold_deg)
    nf = normalize(pair.dem)
    elev_range = nf.source_max - nf.source_min
    region = _loss_region(config)
    candidates = []
    for iy in range(pair.dem.rows // t):
        for ix in range(pair.dem.cols // t):
            win = (slice(iy * t, (iy + 1) * t), slice(ix * t, (ix + 1) * t))
            if flat[win].mean() > 0.5:
                candidates.append(win)
    if not candidates:
        raise ValueError("no mostly-flat tiles to duplicate; lower the threshold or skip vshift")
    n_pick = int(round(fraction * len(candidates)))
    picked = rng.choice(len(candidates), size=n_pick, replace=False) if n_pick else []
    samples = []
    for k in picked:
        win = candidates[k]
        offset = rng.uniform(-max_offset_m, max_offset_m)
        shifted = nf.values[win] + (offset / elev_range if elev_range > 0 else 0.0)
        samples.append(TileSample(
            input=np.asarray(np.clip(shifted, 0.0, 1.0), dtype=config.dtype),
            target=np.asarray(pair.shading[win], dtype=config.dtype),
            region=region,
            tag="vshift",
        ))
    return samples


@dataclass
class ResumeState:
    """Optimizer and progress snapshot loaded from a checkpoint file."""

    opt: ops.AdamState
    epoch: int
    history: list
    hyper: dict


def _metadata_for(pairs, hyper: TrainHyper) -> dict:
    mn = min(float(np.nanmin(p.dem.values)) for p in pairs)
    mx = max(float(np.nanmax(p.dem.values)) for p in pairs)
    cells = {p.cell_size for p in pairs}
    if len(cells) > 1:
        warnings.warn(f"training pairs mix cell sizes {sorted(cells)}; recording the first")
    return {
        "norm_min_m": mn,
        "norm_max_m": mx,
        "cell_size_m": pairs[0].cell_size,
        "seed": hyper.seed,
    }


def _build_augmented(pairs, hyper: TrainHyper, config: UNetConfig) -> list[TileSample]:
    rng = np.random.default_rng([hyper.seed, 0, 1])
    aug: list[TileSample] = []
    if hyper.flat_tiles > 0:
        tone = hyper.flat_tone
        if tone is None:
            tones = []
            for pair in pairs:
                m = flat_mask(pair.dem, hyper.flat_slope_threshold_deg)
                if m.any():
                    tones.append(pair.shading[m])
            if not tones:
                raise ValueError("no flat cells in any pair; supply flat_tone explicitly")
            tone = float(np.concatenate([t.ravel() for t in tones]).mean())
        aug += make_flat_tiles(hyper.flat_tiles, tone, rng, config)
    if hyper.vshift_fraction > 0:
        for pair in pairs:
            rng_max = hyper.vshift_max_m
            if rng_max is None:
                rng_max = 0.1 * (float(np.nanmax(pair.dem.values)) - float(np.nanmin(pair.dem.values)))
            aug += make_vertical_shift_tiles(pair, hyper.vshift_fraction, rng_max, rng, config,
                                             hyper.flat_slope_threshold_deg)
    return aug


def train(model: UNetModel, pairs, hyper: TrainHyper, reporter=None,
          resume_state: ResumeState | None = None, checkpoint_path=None):
    """Optimize the model in place; returns (model, per-epoch loss history).

    Each epoch: redraw the tiling origin when epoch % origin_shift_period
    == 0 (epochs count from 1), shuffle, then minibatch forward/backward
    with Adam on the MSE over each tile's central region. Deterministic for
    a fixed seed.
    """
    if not pairs:
        raise ValueError("need at least one training pair")
    pairs = list(pairs)
    config = model.config
    region = _loss_region(config)
    meta_base = _metadata_for(pairs, hyper)
    aug = _build_augmented(pairs, hyper, config)

    def real_samples(origin):
        out = []
        for pair in pairs:
            out += make_tiles(pair, config, origin)
        return out

    params = model.parameters()
    names = model.parameter_names()
    if resume_state is not None:
        opt = resume_state.opt
        start_epoch = resume_state.epoch
        history = list(resume_state.history)
        if start_epoch > hyper.epochs:
            raise ValueError(f"checkpoint is at epoch {start_epoch}, past target {hyper.epochs}")
        if len(opt.m) != len(params):
            raise ValueError("optimizer state does not match this model's parameters")
    else:
        opt = ops.AdamState.zeros_like(params)
        start_epoch = 0
        history = []

    origin = (0, 0)
    last_shift = (start_epoch // hyper.origin_shift_period) * hyper.origin_shift_period
    if last_shift >= 1:
        r = np.random.default_rng([hyper.seed, last_shift])
        origin = (int(r.integers(0, config.tile_size)), int(r.integers(0, config.tile_size)))
    real = real_samples(origin)

    for epoch in range(start_epoch + 1, hyper.epochs + 1):
        rng = np.random.default_rng([hyper.seed, epoch])
        if epoch % hyper.origin_shift_period == 0:
            origin = (int(rng.integers(0, config.tile_size)), int(rng.integers(0, config.tile_size)))
            real = real_samples(origin)
        samples = real + aug
        order = rng.permutation(len(samples))
        total = 0.0
        seen = 0
        for b0 in range(0, len(samples), hyper.batch_size):
            idx = order[b0 : b0 + hyper.batch_size]
            x = np.stack([samples[i].input for i in idx])[:, None]
            t = np.stack([samples[i].target for i in idx])[:, None]
            y, cache = model.forward_train(x, rng)
            loss, grad_y = ops.mse_loss(y, t, region)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss in epoch {epoch}, batch {b0 // hyper.batch_size} "
                    f"(samples {[int(i) for i in idx]})"
                )
            grads = model.backward(cache, grad_y)
            ops.adam_step(params, grads, opt, hyper.alpha, hyper.beta1, hyper.beta2,
                          hyper.eps, names)
            total += loss * len(idx)
            seen += len(idx)
        epoch_loss = total / seen
        history.append(epoch_loss)
        if reporter is not None:
            reporter(epoch, epoch_loss)
        model.metadata = {**meta_base, "epochs": epoch}
        if checkpoint_path is not None and hyper.checkpoint_every > 0 \
                and epoch % hyper.checkpoint_every == 0:
            checkpoint(model, opt, epoch, history, hyper, checkpoint_path)

    model.metadata = {**meta_base, "epochs": hyper.epochs}
    return model, history


def checkpoint(model: UNetModel, opt: ops.AdamState, epoch: int, history, hyper: TrainHyper,
               sink) -> None:
    """Model + optimizer snapshot; parameters and moments stored in the
    model's native precision so resuming is bitwise exact."""
    dtype_str = "<f4" if model.config.precision == "single" else "<f8"
    params = model.parameters()
    chunks = [np.ascontiguousarray(p, dtype=dtype_str).tobytes() for p in params]
    chunks += [np.ascontiguousarray(m, dtype=dtype_str).tobytes() for m in opt.m]
    chunks += [np.ascontiguousarray(v, dtype=dtype_str).tobytes() for v in opt.v]
    payload = b"".join(chunks)
    header = {
        "config": {
            "levels": model.config.levels,
            "base_channels": model.config.base_channels,
            "dropout_rates": list(model.config.dropout_rates),
            "tile_size": model.config.tile_size,
            "crop_border": model.config.crop_border,
            "precision": model.config.precision,
        },
        "metadata": model.metadata,
        "epoch": int(epoch),
        "adam_t": int(opt.t),
        "history": list(history),
        "hyper": {
            "epochs": hyper.epochs, "batch_size": hyper.batch_size, "alpha": hyper.alpha,
            "beta1": hyper.beta1, "beta2": hyper.beta2, "eps": hyper.eps,
            "origin_shift_period": hyper.origin_shift_period, "flat_tiles": hyper.flat_tiles,
            "flat_tone": hyper.flat_tone, "vshift_fraction": hyper.vshift_fraction,
            "vshift_max_m": hyper.vshift_max_m, "seed": hyper.seed,
        },
        "payload_bytes": len(payload),
        "payload_crc32": zlib.crc32(payload),
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    _write_sink(sink, CHECKPOINT_MAGIC + struct.pack("<II", FORMAT_VERSION, len(head))
                + head + payload)


def resume(source) -> tuple[UNetModel, ResumeState]:
    """Rebuild (model, ResumeState) from a checkpoint file."""
    raw = _read_source(source)
    header, payload = _parse_container(raw, CHECKPOINT_MAGIC)
    try:
        cfgd = header["config"]
        config = UNetConfig(
            levels=cfgd["levels"], base_channels=cfgd["base_channels"],
            dropout_rates=tuple(cfgd["dropout_rates"]), tile_size=cfgd["tile_size"],
            crop_border=cfgd["crop_border"], precision=cfgd["precision"],
        )
        epoch = int(header["epoch"])
        adam_t = int(header["adam_t"])
        history = [float(x) for x in header["history"]]
        hyper = dict(header["hyper"])
        metadata = header.get("metadata", {})
    except (KeyError, TypeError, ValueError) as e:
        raise FormatError(f"bad checkpoint header (missing optimizer state?): {e}") from None
    dtype_str = "<f4" if config.precision == "single" else "<f8"
    itemsize = 4 if config.precision == "single" else 8

    shapes = []
    for name in layer_order(config):
        co, ci = layer_shapes(config)[name]
        shapes += [(co, ci, 3, 3), (co,)]
    per_set = sum(int(np.prod(s)) for s in shapes) * itemsize
    if len(payload) != 3 * per_set:
        raise FormatError(f"checkpoint payload is {len(payload)} bytes, expected {3 * per_set}")

    def read_set(base):
        arrays, pos = [], base
        for s in shapes:
            n = int(np.prod(s)) * itemsize
            arrays.append(np.frombuffer(payload[pos : pos + n], dtype=dtype_str)
                          .reshape(s).astype(config.dtype))
            pos += n
        return arrays

    param_arrays = read_set(0)
    m_arrays = read_set(per_set)
    v_arrays = read_set(2 * per_set)
    layers = {}
    for i, name in enumerate(layer_order(config)):
        layers[name] = ops.ConvParams(param_arrays[2 * i], param_arrays[2 * i + 1])
    model = UNetModel(config, layers, metadata)
    state = ResumeState(opt=ops.AdamState(m_arrays, v_arrays, adam_t),
                        epoch=epoch, history=history, hyper=hyper)
    return model, state
