"""Raster file I/O: ESRI ASCII grids for elevation, PGM/PNG for grayscale output.

Conventions used throughout the package: row 0 of an array is the
northernmost row, matching the ASCII-grid file layout. Elevation values are
float64 with nodata cells held as NaN in memory; grayscale images are plain
2-D float arrays with values in [0, 1].
"""

import io
import os
from dataclasses import dataclass

import numpy as np
from PIL import Image

from .errors import FormatError


@dataclass
class DemGrid:
    """Elevation raster: 2-D float64 values plus georeferencing.

    NaN cells mark nodata; ``nodata_value`` records the on-disk sentinel
    (None if the source declared none). ``origin`` is the map coordinate of
    the lower-left corner.
    """

    values: np.ndarray
    cell_size: float
    nodata_value: float | None = None
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2 or v.size == 0:
            raise ValueError(f"elevation raster must be 2-D and non-empty, got shape {v.shape}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")
        if np.isinf(v).any():
            raise ValueError("elevation raster contains infinite values")
        self.values = v
        self.cell_size = float(self.cell_size)

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    def valid_mask(self) -> np.ndarray:
        """Boolean mask of cells carrying real elevations (not nodata)."""
        return ~np.isnan(self.values)


def validate_gray(values) -> np.ndarray:
    """Check a grayscale image array: 2-D, finite, all values in [0, 1]."""
    v = np.asarray(values, dtype=np.float64)
    if v.ndim != 2 or v.size == 0:
        raise ValueError(f"grayscale image must be 2-D and non-empty, got shape {v.shape}")
    if not np.isfinite(v).all():
        raise ValueError("grayscale image contains non-finite values")
    lo, hi = v.min(), v.max()
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"grayscale values must lie in [0, 1], got range [{lo}, {hi}]")
    return v


def quantize_gray(values) -> np.ndarray:
    """Map [0,1] floats to uint8 grey levels, rounding halves up (0.5 -> 128)."""
    v = validate_gray(values)
    return np.floor(v * 255.0 + 0.5).astype(np.uint8)


def _read_source(source) -> bytes:
    if isinstance(source, (str, os.PathLike)):
        with open(source, "rb") as f:
            return f.read()
    if isinstance(source, (bytes, bytearray)):
        return bytes(source)
    return source.read()


def _write_sink(sink, data: bytes) -> None:
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as f:
            f.write(data)
    else:
        sink.write(data)


_HEADER_KEYS = ("ncols", "nrows", "xllcorner", "yllcorner", "cellsize", "nodata_value")


def read_ascii_grid(source) -> DemGrid:
    """Parse an ESRI ASCII grid from a path, bytes, or binary file object.

    Header keys are case-insensitive; xllcorner, yllcorner and nodata_value
    are optional. The first data row of the file becomes row 0 of the grid.
    """
    raw = _read_source(source)
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as e:
        raise FormatError(f"not an ASCII grid: {e}") from None

    lines = text.splitlines()
    header: dict[str, float] = {}
    idx = 0
    while idx < len(lines):
        parts = lines[idx].split()
        if not parts:
            idx += 1
            continue
        lead = parts[0]
        if not (lead[0].isalpha() or lead[0] == "_"):
            break
        key = lead.lower()
        if key not in _HEADER_KEYS:
            raise FormatError(f"line {idx + 1}: unknown header key {lead!r}")
        if len(parts) != 2:
            raise FormatError(f"line {idx + 1}: header key {lead!r} needs exactly one value")
        try:
            header[key] = float(parts[1])
        except ValueError:
            raise FormatError(f"line {idx + 1}: non-numeric header value {parts[1]!r}") from None
        idx += 1

    for key in ("ncols", "nrows", "cellsize"):
        if key not in header:
            raise FormatError(f"missing required header key {key!r}")
    ncols, nrows = header["ncols"], header["nrows"]
    if ncols != int(ncols) or nrows != int(nrows):
        raise FormatError(f"ncols/nrows must be integers, got {ncols} x {nrows}")
    ncols, nrows = int(ncols), int(nrows)
    if nrows < 1 or ncols < 1:
        raise FormatError(f"grid dimensions must be positive, got {nrows} rows x {ncols} cols")
    if not header["cellsize"] > 0:
        raise FormatError(f"cellsize must be positive, got {header['cellsize']}")

    tokens = " ".join(lines[idx:]).split()
    if len(tokens) != nrows * ncols:
        raise FormatError(
            f"body holds {len(tokens)} values, header promises {nrows}x{ncols} = {nrows * ncols}"
        )
    try:
        data = np.array(tokens, dtype=np.float64)
    except ValueError:
        for pos, tok in enumerate(tokens):
            try:
                float(tok)
            except ValueError:
                raise FormatError(f"body value {pos + 1}: non-numeric token {tok!r}") from None
        raise
    data = data.reshape(nrows, ncols)

    nodata = header.get("nodata_value")
    if nodata is not None:
        data[data == nodata] = np.nan

    try:
        return DemGrid(
            values=data,
            cell_size=header["cellsize"],
            nodata_value=nodata,
            origin=(header.get("xllcorner", 0.0), header.get("yllcorner", 0.0)),
        )
    except ValueError as e:
        raise FormatError(str(e)) from None


def _fmt(x: float) -> str:
    # repr of a float is the shortest string that parses back bitwise equal
    return repr(float(x))


def write_ascii_grid(grid: DemGrid, sink) -> None:
    """Emit a grid as ESRI ASCII text; re-reading reproduces it exactly."""
    out = io.StringIO()
    out.write(f"ncols {grid.cols}\n")
    out.write(f"nrows {grid.rows}\n")
    out.write(f"xllcorner {_fmt(grid.origin[0])}\n")
    out.write(f"yllcorner {_fmt(grid.origin[1])}\n")
    out.write(f"cellsize {_fmt(grid.cell_size)}\n")
    values = grid.values
    if grid.nodata_value is not None:
        out.write(f"nodata_value {_fmt(grid.nodata_value)}\n")
        values = np.where(np.isnan(values), grid.nodata_value, values)
    elif np.isnan(values).any():
        raise ValueError("grid has nodata cells but no nodata_value sentinel to write them as")
    for row in values:
        out.write(" ".join(_fmt(v) for v in row))
        out.write("\n")
    _write_sink(sink, out.getvalue().encode("ascii"))


def write_gray_image(img, sink, format: str = "png") -> None:
    """Write a [0,1] grayscale array as binary PGM (P5) or 8-bit grayscale PNG."""
    q = quantize_gray(img)
    if format == "pgm":
        h, w = q.shape
        header = f"P5\n{w} {h}\n255\n".encode("ascii")
        _write_sink(sink, header + q.tobytes())
    elif format == "png":
        buf = io.BytesIO()
        Image.fromarray(q, mode="L").save(buf, format="PNG")
        _write_sink(sink, buf.getvalue())
    else:
        raise ValueError(f"unsupported image format {format!r}, expected 'pgm' or 'png'")


def _parse_pgm(raw: bytes) -> np.ndarray:
    # header = magic, width, height, maxval as whitespace-separated tokens,
    # with '#' comments allowed; a single whitespace byte separates the
    # maxval token from the pixel data
    pos = 2  # past "P5"
    fields = []
    while len(fields) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos] not in (0x0A, 0x0D):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if pos == start:
            raise FormatError("truncated PGM header")
        fields.append(raw[start:pos])
    pos += 1  # the single whitespace after maxval
    try:
        w, h, maxval = (int(f) for f in fields)
    except ValueError:
        raise FormatError(f"non-numeric PGM header fields {fields}") from None
    if w < 1 or h < 1:
        raise FormatError(f"PGM dimensions must be positive, got {w}x{h}")
    if maxval != 255:
        raise FormatError(f"only 8-bit PGM supported (maxval 255), got maxval {maxval}")
    pixels = raw[pos : pos + w * h]
    if len(pixels) != w * h:
        raise FormatError(f"PGM pixel data truncated: expected {w * h} bytes, found {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def read_gray_image(source) -> np.ndarray:
    """Read an 8-bit grayscale PGM or PNG into a [0,1] float array."""
    raw = _read_source(source)
    if raw[:2] == b"P5":
        q = _parse_pgm(raw)
    elif raw[:8] == b"\x89PNG\r\n\x1a\n":
        try:
            im = Image.open(io.BytesIO(raw))
            im.load()
        except Exception as e:
            raise FormatError(f"bad PNG stream: {e}") from None
        if im.mode != "L":
            raise FormatError(f"only 8-bit grayscale PNG supported, got mode {im.mode!r}")
        q = np.asarray(im, dtype=np.uint8)
    else:
        raise FormatError("unrecognized image format (expected PGM P5 or PNG)")
    return q.astype(np.float64) / 255.0
