"""Command line front end.

Subcommands: synth, train, shade, diffuse, eval, inspect. Exit codes:
0 success, 1 usage errors, 2 data or file format problems, 3 numeric
failures during training or shading.
"""

import argparse
import os
import sys
import time

import numpy as np

from . import kernels, metrics, terrain
from .errors import FormatError, NumericError
from .inference import ShadeOptions, plan_for, shade, shade_whole
from .raster_io import read_ascii_grid, read_gray_image, write_ascii_grid, write_gray_image
from .shading import LightVector, aerial_perspective, diffuse_shade
from .training import TrainHyper, TrainingPair, resume, train
from .unet import UNetConfig, UNetModel


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse terminates with code 2 on bad flags; we reserve 2 for data
    problems, so route parser errors through exit code 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


def _positive_int(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return v


def _thread_count(args) -> int | None:
    if getattr(args, "threads", None) is not None:
        return args.threads
    env = os.environ.get("RELIEF_THREADS")
    if env:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"RELIEF_THREADS must be an integer, got {env!r}")
    return None


def _apply_threads(args) -> None:
    n = _thread_count(args)
    if n is not None:
        if n < 1:
            raise UsageError(f"thread count must be >= 1, got {n}")
        kernels.set_threads(n)


def _print_kv(**kv) -> None:
    for k, v in kv.items():
        print(f"{k}={v}")


def cmd_synth(args) -> int:
    if args.rows < 3 or args.cols < 3:
        raise UsageError(f"terrain needs at least 3x3 cells, got {args.rows}x{args.cols}")
    if not 0.0 <= args.flat_fraction < 1.0:
        raise UsageError(f"--flat-fraction must be in [0, 1), got {args.flat_fraction}")
    dem = terrain.synth_terrain(
        seed=args.seed, rows=args.rows, cols=args.cols, cell_size=args.cell_size,
        roughness=args.roughness, flat_fraction=args.flat_fraction,
    )
    write_ascii_grid(dem, args.out)
    _print_kv(out=args.out, rows=dem.rows, cols=dem.cols, cell_size=dem.cell_size,
              min=float(np.nanmin(dem.values)), max=float(np.nanmax(dem.values)))
    return 0


def _parse_dropout(text: str, levels: int) -> tuple:
    parts = [p.strip() for p in text.split(",")]
    try:
        rates = tuple(float(p) for p in parts)
    except ValueError:
        raise UsageError(f"--dropout expects comma separated floats, got {text!r}")
    if len(rates) != levels:
        raise UsageError(f"--dropout needs {levels} rates for {levels} levels, got {len(rates)}")
    return rates


def cmd_train(args) -> int:
    if len(args.dem) != len(args.shading):
        raise UsageError(f"got {len(args.dem)} DEMs but {len(args.shading)} shadings")
    pairs = []
    for dem_path, shade_path in zip(args.dem, args.shading):
        dem = read_ascii_grid(dem_path)
        target = read_gray_image(shade_path)
        if target.shape != dem.values.shape:
            raise FormatError(
                f"shading {shade_path} is {target.shape[0]}x{target.shape[1]} but "
                f"DEM {dem_path} is {dem.rows}x{dem.cols}"
            )
        pairs.append(TrainingPair(dem=dem, shading=target))

    rates = (_parse_dropout(args.dropout, args.levels) if args.dropout is not None
             else UNetConfig.default_dropout(args.levels))
    config = UNetConfig(levels=args.levels, base_channels=args.base_channels,
                        dropout_rates=rates, tile_size=args.tile_size,
                        crop_border=args.crop, precision=args.precision)
    hyper = TrainHyper(epochs=args.epochs, batch_size=args.batch, alpha=args.lr,
                       origin_shift_period=args.shift_period, flat_tiles=args.flat_tiles,
                       vshift_fraction=args.vshift_frac, seed=args.seed,
                       checkpoint_every=args.checkpoint_every)

    resume_state = None
    if args.resume is not None:
        model, resume_state = resume(args.resume)
        if model.config != config:
            raise FormatError("checkpoint architecture does not match the command line flags")
    else:
        model = UNetModel.build(config, np.random.default_rng([hyper.seed, 0, 0]))

    _print_kv(pairs=len(pairs), tile_size=config.tile_size, crop=config.crop_border,
              levels=config.levels, base_channels=config.base_channels,
              epochs=hyper.epochs, batch=hyper.batch_size, alpha=hyper.alpha,
              shift_period=hyper.origin_shift_period, flat_tiles=hyper.flat_tiles,
              vshift_frac=hyper.vshift_fraction, seed=hyper.seed, backend=kernels.BACKEND)

    loss_path = args.out + ".loss"
    ckpt_path = args.out + ".ckpt"
    t0 = time.monotonic()
    mode = "a" if resume_state is not None else "w"
    with open(loss_path, mode) as log:

        def report(epoch, loss):
            log.write(f"{epoch}\t{loss!r}\n")
            log.flush()
            print(f"epoch={epoch} loss={loss:.6g} elapsed_s={time.monotonic() - t0:.1f}")

        model, history = train(model, pairs, hyper, reporter=report,
                               resume_state=resume_state, checkpoint_path=ckpt_path)
    model.save(args.out)
    _print_kv(out=args.out, final_loss=(repr(history[-1]) if history else "nan"),
              elapsed_s=f"{time.monotonic() - t0:.1f}")
    return 0


def _image_format(path: str, explicit: str | None) -> str:
    if explicit is not None:
        return explicit
    ext = os.path.splitext(path)[1].lower()
    return "pgm" if ext == ".pgm" else "png"


def cmd_shade(args) -> int:
    model = UNetModel.load(args.model)
    dem = read_ascii_grid(args.dem)
    opt = ShadeOptions(rotation_deg=args.rotation, k_min=args.kmin, k_max=args.kmax,
                       downsample_factor=args.downsample, blend_width=args.blend)
    if not 0.0 <= opt.k_min < opt.k_max <= 1.0:
        raise UsageError(f"need 0 <= kmin < kmax <= 1, got {opt.k_min}/{opt.k_max}")
    t0 = time.monotonic()
    if args.whole:
        img = shade_whole(model, dem, opt)
        tiles = 1
    else:
        tiles = plan_for(model, dem, opt).count
        img = shade(model, dem, opt)
    write_gray_image(img, args.out, format=_image_format(args.out, args.format))
    _print_kv(out=args.out, rows=img.shape[0], cols=img.shape[1], tiles=tiles,
              elapsed_s=f"{time.monotonic() - t0:.1f}")
    return 0


def cmd_diffuse(args) -> int:
    dem = read_ascii_grid(args.dem)
    azimuth = args.azimuth
    if not 0.0 <= azimuth < 360.0:
        azimuth = azimuth % 360.0
        print(f"note: azimuth normalized to {azimuth}")
    light = LightVector(azimuth_deg=azimuth, altitude_deg=args.altitude)
    img = diffuse_shade(dem, light, vertical_exaggeration=args.exaggeration)
    if args.aerial_strength > 0.0:
        img = aerial_perspective(img, terrain.normalize(dem), args.aerial_strength)
    write_gray_image(img, args.out, format=_image_format(args.out, args.format))
    _print_kv(out=args.out, rows=img.shape[0], cols=img.shape[1],
              azimuth=azimuth, altitude=args.altitude)
    return 0


def cmd_eval(args) -> int:
    a = read_gray_image(args.a)
    b = read_gray_image(args.b)
    if a.shape != b.shape:
        raise FormatError(f"images differ in size: {a.shape} vs {b.shape}")
    _print_kv(mse=repr(metrics.mse(a, b)),
              ssim=repr(metrics.ssim(a, b, window=args.ssim_window)))
    return 0


def cmd_inspect(args) -> int:
    model = UNetModel.load(args.model)
    c = model.config
    _print_kv(levels=c.levels, base_channels=c.base_channels,
              dropout_rates=",".join(str(r) for r in c.dropout_rates),
              tile_size=c.tile_size, crop_border=c.crop_border, precision=c.precision,
              parameters=model.parameter_count,
              receptive_field_radius=model.receptive_field_radius())
    for k in sorted(model.metadata):
        print(f"metadata.{k}={model.metadata[k]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--threads", type=_positive_int, default=None,
                        help="worker threads for the compute backend "
                             "(default: RELIEF_THREADS or all cores)")

    p = _Parser(prog="relief", description="Neural and analytical relief shading.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate synthetic terrain")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--rows", type=int, default=512)
    s.add_argument("--cols", type=int, default=512)
    s.add_argument("--cell-size", type=float, default=50.0)
    s.add_argument("--roughness", type=float, default=0.6)
    s.add_argument("--flat-fraction", type=float, default=0.0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("train", parents=[common], help="train a shading model")
    s.add_argument("--dem", action="append", required=True,
                   help="ASCII grid DEM, repeatable; pairs with --shading in order")
    s.add_argument("--shading", action="append", required=True,
                   help="target grayscale image, repeatable")
    s.add_argument("--tile-size", type=int, default=256)
    s.add_argument("--crop", type=int, default=50)
    s.add_argument("--levels", type=int, default=5)
    s.add_argument("--base-channels", type=int, default=16)
    s.add_argument("--dropout", default=None,
                   help="comma separated rate per level, outermost first")
    s.add_argument("--precision", choices=("single", "double"), default="single")
    s.add_argument("--epochs", type=int, required=True)
    s.add_argument("--batch", type=int, default=8)
    s.add_argument("--lr", type=float, default=0.001)
    s.add_argument("--shift-period", type=int, default=25)
    s.add_argument("--flat-tiles", type=int, default=0)
    s.add_argument("--vshift-frac", type=float, default=0.0)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--checkpoint-every", type=int, default=0)
    s.add_argument("--resume", default=None, help="checkpoint file to continue from")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("shade", parents=[common], help="shade a DEM with a trained model")
    s.add_argument("--model", required=True)
    s.add_argument("--dem", required=True)
    s.add_argument("--rotation", type=float, default=0.0,
                   help="rotate illumination counterclockwise, degrees")
    s.add_argument("--kmin", type=float, default=0.0)
    s.add_argument("--kmax", type=float, default=1.0)
    s.add_argument("--downsample", type=_positive_int, default=1)
    s.add_argument("--blend", type=int, default=20)
    s.add_argument("--whole", action="store_true",
                   help="single forward pass instead of tiles")
    s.add_argument("--format", choices=("pgm", "png"), default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_shade)

    s = sub.add_parser("diffuse", parents=[common], help="analytical Lambertian shading")
    s.add_argument("--dem", required=True)
    s.add_argument("--azimuth", type=float, default=315.0)
    s.add_argument("--altitude", type=float, default=45.0)
    s.add_argument("--exaggeration", type=float, default=1.0)
    s.add_argument("--aerial-strength", type=float, default=0.0)
    s.add_argument("--format", choices=("pgm", "png"), default=None)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_diffuse)

    s = sub.add_parser("eval", parents=[common], help="compare two grayscale images")
    s.add_argument("--a", required=True)
    s.add_argument("--b", required=True)
    s.add_argument("--ssim-window", type=int, default=8)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("inspect", parents=[common], help="describe a model file")
    s.add_argument("--model", required=True)
    s.set_defaults(func=cmd_inspect)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        _apply_threads(args)
        return args.func(args)
    except SystemExit as exc:
        return int(exc.code or 0)
    except UsageError as exc:
        print(f"relief: error: {exc}", file=sys.stderr)
        return 1
    except (FormatError, ValueError, OSError) as exc:
        print(f"relief: error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"relief: error: {exc}", file=sys.stderr)
        return 3


def main_entry() -> None:
    sys.exit(main())
