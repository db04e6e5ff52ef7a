"""The U-Net variant: configuration, forward/backward passes, serialization.

Architecture per level of the contracting path: two same-padded 3x3
convolutions with ReLU, dropout (rate per level, growing toward the
bottleneck), then 2x2 max pooling. The expanding path mirrors it with
nearest-neighbor upsampling followed by a linear 3x3 projection, skip
concatenation, two conv+ReLU, and dropout. A final 3x3 convolution maps to
one channel with no activation; eval-mode output is clipped to [0, 1].

Parameters live in a fixed, documented order (encoder outermost to
innermost, bottleneck, decoder innermost to outermost, final projection);
build, save, and the optimizer all traverse that order, which is what makes
training and serialization bit-reproducible.
"""

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import FormatError

MAGIC = b"RELIEFNN"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class UNetConfig:
    levels: int = 5
    base_channels: int = 16
    dropout_rates: tuple = (0.1, 0.2, 0.3, 0.4, 0.5)
    tile_size: int = 256
    crop_border: int = 50
    precision: str = "single"

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError(f"levels must be >= 1, got {self.levels}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        t = self.tile_size
        if t < 1 or (t & (t - 1)):
            raise ValueError(f"tile_size must be a power of two, got {t}")
        if t // (2 ** self.levels) < 4:
            raise ValueError(f"tile_size {t} too small for {self.levels} pooling levels")
        rates = tuple(float(r) for r in self.dropout_rates)
        object.__setattr__(self, "dropout_rates", rates)
        if len(rates) != self.levels:
            raise ValueError(f"need {self.levels} dropout rates, got {len(rates)}")
        for a, b in zip(rates, rates[1:]):
            if b < a:
                raise ValueError(f"dropout rates must be nondecreasing inward, got {rates}")
        for r in rates:
            if not 0.0 <= r < 1.0:
                raise ValueError(f"dropout rates must be in [0, 1), got {r}")
        if not 0 <= 2 * self.crop_border < t:
            raise ValueError(f"need 0 <= 2*crop_border < tile_size, got crop {self.crop_border}")
        if self.precision not in ("single", "double"):
            raise ValueError(f"precision must be 'single' or 'double', got {self.precision!r}")

    @property
    def dtype(self):
        return np.float32 if self.precision == "single" else np.float64

    @property
    def out_side(self) -> int:
        return self.tile_size - 2 * self.crop_border

    def encoder_channels(self) -> list[int]:
        return [self.base_channels * 2 ** l for l in range(self.levels)]

    @staticmethod
    def default_dropout(levels: int) -> tuple:
        """Rates growing 0.1 per level inward, capped at 0.5."""
        return tuple(min(round(0.1 * (l + 1), 10), 0.5) for l in range(levels))


def layer_order(config: UNetConfig) -> list[str]:
    names = []
    for l in range(config.levels):
        names += [f"enc{l}_conv1", f"enc{l}_conv2"]
    names += ["bottleneck_conv1", "bottleneck_conv2"]
    for l in reversed(range(config.levels)):
        names += [f"dec{l}_up", f"dec{l}_conv1", f"dec{l}_conv2"]
    names.append("final")
    return names


def layer_shapes(config: UNetConfig) -> dict[str, tuple[int, int]]:
    """(out_channels, in_channels) per layer name, in layer order."""
    enc = config.encoder_channels()
    bott = config.base_channels * 2 ** config.levels
    shapes = {}
    for l in range(config.levels):
        shapes[f"enc{l}_conv1"] = (enc[l], 1 if l == 0 else enc[l - 1])
        shapes[f"enc{l}_conv2"] = (enc[l], enc[l])
    shapes["bottleneck_conv1"] = (bott, enc[-1])
    shapes["bottleneck_conv2"] = (bott, bott)
    for l in reversed(range(config.levels)):
        above = bott if l == config.levels - 1 else enc[l + 1]
        shapes[f"dec{l}_up"] = (enc[l], above)
        shapes[f"dec{l}_conv1"] = (enc[l], 2 * enc[l])
        shapes[f"dec{l}_conv2"] = (enc[l], enc[l])
    shapes["final"] = (1, enc[0])
    return shapes


class UNetModel:
    """Parameter collection plus config and training provenance metadata.

    ``metadata`` carries norm_min_m, norm_max_m, cell_size_m, seed, and
    epochs once the model has been trained.
    """

    def __init__(self, config: UNetConfig, layers: dict, metadata: dict | None = None):
        self.config = config
        self.layers = layers
        self.metadata = dict(metadata) if metadata else {}

    @classmethod
    def build(cls, config: UNetConfig, rng) -> "UNetModel":
        """He-initialized model; draws happen in layer order, so one seed
        fully determines every parameter."""
        shapes = layer_shapes(config)
        layers = {}
        for name in layer_order(config):
            co, ci = shapes[name]
            layers[name] = ops.ConvParams.initialized(co, ci, rng, dtype=config.dtype)
        return cls(config, layers)

    # attributes the tiled-inference pipeline relies on
    @property
    def tile_size(self) -> int:
        return self.config.tile_size

    @property
    def crop_border(self) -> int:
        return self.config.crop_border

    @property
    def pool_divisor(self) -> int:
        return 2 ** self.config.levels

    @property
    def dtype(self):
        return self.config.dtype

    def eval_batch(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x, mode="eval")

    def parameters(self) -> list:
        out = []
        for name in layer_order(self.config):
            p = self.layers[name]
            out += [p.weights, p.bias]
        return out

    def parameter_names(self) -> list[str]:
        out = []
        for name in layer_order(self.config):
            out += [f"{name}.weights", f"{name}.bias"]
        return out

    @property
    def parameter_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def receptive_field_radius(self) -> int:
        """Input-pixel radius that can influence one output pixel."""
        rf, s = 1, 1
        for _ in range(self.config.levels):
            rf += 2 * s + 2 * s  # two convs
            rf += s              # pool
            s *= 2
        rf += 2 * s + 2 * s      # bottleneck convs
        for _ in range(self.config.levels):
            s //= 2
            rf += 2 * s          # up projection
            rf += 2 * s + 2 * s  # two convs
        rf += 2                  # final conv
        return rf // 2

    def _check_input(self, x: np.ndarray, train: bool) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != 1:
            raise ValueError(f"expected (n, 1, h, w) input, got shape {x.shape}")
        n, _, h, w = x.shape
        if train:
            t = self.config.tile_size
            if (h, w) != (t, t):
                raise ValueError(f"training forward needs {t}x{t} tiles, got {h}x{w}")
        else:
            d = self.pool_divisor
            if h % d or w % d:
                raise ValueError(f"spatial size {h}x{w} not divisible by {d}")
            if h < d or w < d:
                raise ValueError(f"spatial size {h}x{w} too small for {self.config.levels} levels")
        x = np.asarray(x, dtype=self.config.dtype)
        if x.size and (x.min() < 0.0 or x.max() > 1.0):
            raise ValueError("input values must lie in [0, 1]")
        return np.ascontiguousarray(x)

    def forward(self, x: np.ndarray, mode: str = "eval", rng=None) -> np.ndarray:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        train = mode == "train"
        x = self._check_input(x, train)
        if train and rng is None and max(self.config.dropout_rates) > 0:
            raise ValueError("training forward needs an rng for dropout")
        y, _ = self._run(x, train, rng, cache=None)
        return ops.clip01(y) if not train else y

    def forward_train(self, x: np.ndarray, rng=None):
        """Training-mode forward returning (output, cache) for backward()."""
        x = self._check_input(x, train=True)
        if rng is None and max(self.config.dropout_rates) > 0:
            raise ValueError("training forward needs an rng for dropout")
        cache: dict = {}
        y, _ = self._run(x, True, rng, cache)
        return y, cache

    def _run(self, x, train, rng, cache):
        cfg = self.config
        mode = "train" if train else "eval"

        def conv_relu(h, name):
            p = self.layers[name]
            if cache is not None:
                cache[name + ".in"] = h
            z = ops.conv2d_forward(h, p)
            if cache is not None:
                cache[name + ".pre"] = z
            return ops.relu_forward(z)

        skips = []
        h = x
        for l in range(cfg.levels):
            h = conv_relu(h, f"enc{l}_conv1")
            h = conv_relu(h, f"enc{l}_conv2")
            h, mask = ops.dropout(h, cfg.dropout_rates[l], rng, mode)
            if cache is not None:
                cache[f"enc{l}.mask"] = mask
            skips.append(h)
            h, arg = ops.maxpool2_forward(h)
            if cache is not None:
                cache[f"enc{l}.poolarg"] = arg
        h = conv_relu(h, "bottleneck_conv1")
        h = conv_relu(h, "bottleneck_conv2")
        for l in reversed(range(cfg.levels)):
            u = ops.upsample2_forward(h)
            if cache is not None:
                cache[f"dec{l}_up.in"] = u
            h = ops.conv2d_forward(u, self.layers[f"dec{l}_up"])
            h = ops.concat_channels(h, skips[l])
            h = conv_relu(h, f"dec{l}_conv1")
            h = conv_relu(h, f"dec{l}_conv2")
            h, mask = ops.dropout(h, cfg.dropout_rates[l], rng, mode)
            if cache is not None:
                cache[f"dec{l}.mask"] = mask
        if cache is not None:
            cache["final.in"] = h
        y = ops.conv2d_forward(h, self.layers["final"])
        return y, cache

    def backward(self, cache: dict, grad_output: np.ndarray) -> list:
        """Parameter gradients for a cached training forward, in the same
        order as parameters()."""
        if not cache or "final.in" not in cache:
            raise ValueError("backward needs the cache from forward_train")
        cfg = self.config
        grads: dict = {}

        def conv_relu_back(g, name):
            g = ops.relu_backward(cache[name + ".pre"], g)
            g, gw, gb = ops.conv2d_backward(cache[name + ".in"], self.layers[name], g)
            grads[name] = (gw, gb)
            return g

        g, gw, gb = ops.conv2d_backward(cache["final.in"], self.layers["final"], grad_output)
        grads["final"] = (gw, gb)
        skip_grads = [None] * cfg.levels
        for l in range(cfg.levels):  # decoder ran innermost->outermost; reverse it
            g = ops.dropout_backward(g, cache[f"dec{l}.mask"])
            g = conv_relu_back(g, f"dec{l}_conv2")
            g = conv_relu_back(g, f"dec{l}_conv1")
            g_up, skip_grads[l] = ops.split_channels(g, cfg.base_channels * 2 ** l)
            g, gw, gb = ops.conv2d_backward(cache[f"dec{l}_up.in"], self.layers[f"dec{l}_up"], g_up)
            grads[f"dec{l}_up"] = (gw, gb)
            g = ops.upsample2_backward(g)
        g = conv_relu_back(g, "bottleneck_conv2")
        g = conv_relu_back(g, "bottleneck_conv1")
        for l in reversed(range(cfg.levels)):
            g = ops.maxpool2_backward(g, cache[f"enc{l}.poolarg"])
            g = g + skip_grads[l]  # skip connection joins here
            g = ops.dropout_backward(g, cache[f"enc{l}.mask"])
            g = conv_relu_back(g, f"enc{l}_conv2")
            g = conv_relu_back(g, f"enc{l}_conv1")
        out = []
        for name in layer_order(cfg):
            gw, gb = grads[name]
            out += [gw, gb]
        return out

    def save(self, sink) -> None:
        """Versioned binary container; parameters stored little-endian
        float32 in layer order (weights then bias), CRC-checked."""
        header = {
            "config": {
                "levels": self.config.levels,
                "base_channels": self.config.base_channels,
                "dropout_rates": list(self.config.dropout_rates),
                "tile_size": self.config.tile_size,
                "crop_border": self.config.crop_border,
                "precision": self.config.precision,
            },
            "metadata": self.metadata,
            "layers": [[name, list(self.layers[name].weights.shape)]
                       for name in layer_order(self.config)],
        }
        payload = b"".join(
            np.ascontiguousarray(p, dtype="<f4").tobytes() for p in self.parameters()
        )
        header["payload_bytes"] = len(payload)
        header["payload_crc32"] = zlib.crc32(payload)
        head = json.dumps(header, sort_keys=True).encode("utf-8")
        blob = MAGIC + struct.pack("<I", FORMAT_VERSION) + struct.pack("<I", len(head)) + head + payload
        from .raster_io import _write_sink

        _write_sink(sink, blob)

    @classmethod
    def load(cls, source) -> "UNetModel":
        from .raster_io import _read_source

        raw = _read_source(source)
        header, payload = _parse_container(raw, MAGIC)
        try:
            cfgd = header["config"]
            config = UNetConfig(
                levels=cfgd["levels"],
                base_channels=cfgd["base_channels"],
                dropout_rates=tuple(cfgd["dropout_rates"]),
                tile_size=cfgd["tile_size"],
                crop_border=cfgd["crop_border"],
                precision=cfgd["precision"],
            )
            manifest = header["layers"]
            metadata = header.get("metadata", {})
        except (KeyError, TypeError, ValueError) as e:
            raise FormatError(f"bad model header: {e}") from None
        expected = [[name, [*map(int, (layer_shapes(config)[name][0],
                                        layer_shapes(config)[name][1], 3, 3))]]
                    for name in layer_order(config)]
        if manifest != expected:
            raise FormatError("model header layer manifest does not match its config")
        layers = {}
        pos = 0
        for name in layer_order(config):
            co, ci = layer_shapes(config)[name]
            w, pos = _take(payload, pos, (co, ci, 3, 3), config.dtype)
            b, pos = _take(payload, pos, (co,), config.dtype)
            layers[name] = ops.ConvParams(w, b)
        if pos != len(payload):
            raise FormatError(f"model payload has {len(payload) - pos} trailing bytes")
        return cls(config, layers, metadata)


def _parse_container(raw: bytes, magic: bytes):
    """Split a container file into (header dict, payload bytes), verifying
    magic, version, length, and checksum."""
    if raw[: len(magic)] != magic:
        raise FormatError(f"bad magic: not a {magic.decode('ascii', 'replace')} file")
    off = len(magic)
    if len(raw) < off + 8:
        raise FormatError("file truncated before header")
    version, hlen = struct.unpack_from("<II", raw, off)
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version} (expected {FORMAT_VERSION})")
    off += 8
    if len(raw) < off + hlen:
        raise FormatError("file truncated inside header")
    try:
        header = json.loads(raw[off : off + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"bad header JSON: {e}") from None
    payload = raw[off + hlen :]
    nbytes = header.get("payload_bytes")
    if nbytes is None or len(payload) != nbytes:
        raise FormatError(f"payload is {len(payload)} bytes, header promises {nbytes}")
    crc = zlib.crc32(payload)
    if crc != header.get("payload_crc32"):
        raise FormatError("payload checksum mismatch (file corrupted)")
    return header, payload


def _take(payload: bytes, pos: int, shape: tuple, dtype):
    n = int(np.prod(shape))
    end = pos + 4 * n
    if end > len(payload):
        raise FormatError("model payload truncated")
    arr = np.frombuffer(payload[pos:end], dtype="<f4").reshape(shape)
    return arr.astype(dtype), end  # astype also makes the buffer writable
