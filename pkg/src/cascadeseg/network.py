"""3D U-Net with valid convolutions: builder, forward/backward, checkpoints.

Architecture: ``levels`` resolution levels.  Each analysis level applies two
3x3x3 valid convolutions (conv -> BN -> ReLU), doubling channels within the
level, then 2x2x2 max pooling; the deepest level skips the pool.  Each
synthesis level applies a 2x2x2 up-convolution (stride 2, channels kept, no
BN/ReLU), concatenates the center-cropped skip feature map, then two conv ->
BN -> ReLU blocks; a final 1x1x1 convolution maps to class logits.  All
feature-map shrinkage comes from the valid convolutions, so an input tile
maps to a strictly smaller, centered output tile.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import layers
from .errors import CheckpointError, GeometryError
from .layers import Parameter

_MAGIC = b"CC3DSEG1"


@dataclass(frozen=True)
class NetworkConfig:
    """Shape parameters of the U-Net.

    ``input_tile`` is the (nx, ny, nz) size of input tiles; the implied
    output tile is ``output_shape(config)``.
    """

    levels: int = 4
    base_channels: int = 32
    num_classes: int = 8
    input_tile: tuple = (132, 132, 116)

    def __post_init__(self):
        if self.levels < 2:
            raise ValueError(f"levels must be >= 2, got {self.levels}")
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be >= 1, got {self.base_channels}")
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        object.__setattr__(self, "input_tile", tuple(int(v) for v in self.input_tile))
        if len(self.input_tile) != 3 or min(self.input_tile) < 1:
            raise ValueError(f"bad input_tile {self.input_tile}")


def _walk_geometry(cfg: NetworkConfig):
    """Per-axis sizes through the graph; raises GeometryError naming the
    first failing layer.  Returns (output_size, skip_sizes)."""
    size = np.array(cfg.input_tile, dtype=np.int64)

    def conv(name):
        nonlocal size
        size = size - 2
        if size.min() < 1:
            raise GeometryError(f"{name}: feature map shrinks to {tuple(size)}")

    skips = []
    for i in range(cfg.levels - 1):
        conv(f"enc{i}.conv1")
        conv(f"enc{i}.conv2")
        skips.append(size.copy())
        if (size % 2).any() or size.min() < 2:
            raise GeometryError(f"pool{i}: cannot halve odd size {tuple(size)}")
        size = size // 2
    conv(f"enc{cfg.levels - 1}.conv1")
    conv(f"enc{cfg.levels - 1}.conv2")
    for i in reversed(range(cfg.levels - 1)):
        size = size * 2
        diff = skips[i] - size
        if diff.min() < 0 or (diff % 2).any():
            raise GeometryError(
                f"dec{i}.concat: skip {tuple(skips[i])} not croppable to {tuple(size)}"
            )
        conv(f"dec{i}.conv1")
        conv(f"dec{i}.conv2")
    return tuple(int(v) for v in size), [tuple(int(v) for v in s) for s in skips]


def output_shape(cfg: NetworkConfig) -> tuple:
    """Output tile size (ox, oy, oz) for the configured input tile."""
    return _walk_geometry(cfg)[0]


def _channel_plan(cfg: NetworkConfig):
    """Conv channel pairs per block, mirroring the within-level doubling."""
    f = cfg.base_channels
    enc = []
    for i in range(cfg.levels):
        cin = 1 if i == 0 else f * 2**i
        enc.append(((cin, f * 2**i), (f * 2**i, f * 2 ** (i + 1))))
    dec = {}
    cur = f * 2**cfg.levels
    for i in reversed(range(cfg.levels - 1)):
        skip_ch = f * 2 ** (i + 1)
        dec[i] = {"up": (cur, cur), "conv1": (cur + skip_ch, skip_ch), "conv2": (skip_ch, skip_ch)}
        cur = skip_ch
    return enc, dec, cur  # cur == head input channels


class UNet:
    """Fixed-topology network holding named parameters and BN buffers."""

    def __init__(self, config: NetworkConfig, seed: int = 0, dtype=np.float32):
        output_shape(config)  # validate geometry up front
        self.config = config
        self.dtype = np.dtype(dtype)
        self.seed = int(seed)
        self.params: dict[str, Parameter] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self._caches = None
        self._init_idx = 0
        enc, dec, head_in = _channel_plan(config)
        for i, (c1, c2) in enumerate(enc):
            self._add_conv_bn(f"enc{i}", 1, *c1)
            self._add_conv_bn(f"enc{i}", 2, *c2)
        for i in reversed(range(config.levels - 1)):
            ci, co = dec[i]["up"]
            self._add_weight(f"dec{i}.up.w", (ci, co, 2, 2, 2), fan_in=ci * 8)
            self._add_bias(f"dec{i}.up.b", co)
            self._add_conv_bn(f"dec{i}", 1, *dec[i]["conv1"])
            self._add_conv_bn(f"dec{i}", 2, *dec[i]["conv2"])
        self._add_weight("head.w", (config.num_classes, head_in, 1, 1, 1), fan_in=head_in)
        self._add_bias("head.b", config.num_classes)

    # parameter construction ---------------------------------------------

    def _rng(self):
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, self._init_idx]))
        self._init_idx += 1
        return rng

    def _add_weight(self, name, shape, fan_in):
        # zero-mean uniform with scale sqrt(2 / fan_in)
        s = np.sqrt(2.0 / fan_in)
        w = self._rng().uniform(-s, s, size=shape).astype(self.dtype)
        self.params[name] = Parameter(name, w)

    def _add_bias(self, name, n):
        self.params[name] = Parameter(name, np.zeros(n, self.dtype))

    def _add_conv_bn(self, prefix, j, cin, cout):
        self._add_weight(f"{prefix}.conv{j}.w", (cout, cin, 3, 3, 3), fan_in=cin * 27)
        self._add_bias(f"{prefix}.conv{j}.b", cout)
        self.params[f"{prefix}.bn{j}.gamma"] = Parameter(
            f"{prefix}.bn{j}.gamma", np.ones(cout, self.dtype)
        )
        self.params[f"{prefix}.bn{j}.beta"] = Parameter(
            f"{prefix}.bn{j}.beta", np.zeros(cout, self.dtype)
        )
        self.buffers[f"{prefix}.bn{j}.mean"] = np.zeros(cout, self.dtype)
        self.buffers[f"{prefix}.bn{j}.var"] = np.ones(cout, self.dtype)

    # forward / backward ----------------------------------------------------

    def _block(self, prefix, j, x, training, caches):
        p = self.params
        c_conv = {} if caches is not None else None
        h = layers.conv3d_valid_fwd(
            x, p[f"{prefix}.conv{j}.w"].value, p[f"{prefix}.conv{j}.b"].value, c_conv
        )
        c_bn = {} if caches is not None else None
        h = layers.batchnorm_fwd(
            h,
            p[f"{prefix}.bn{j}.gamma"].value,
            p[f"{prefix}.bn{j}.beta"].value,
            self.buffers[f"{prefix}.bn{j}.mean"],
            self.buffers[f"{prefix}.bn{j}.var"],
            training=training,
            cache=c_bn,
        )
        c_relu = {} if caches is not None else None
        h = layers.relu_fwd(h, c_relu)
        if caches is not None:
            caches[f"{prefix}.conv{j}"] = c_conv
            caches[f"{prefix}.bn{j}"] = c_bn
            caches[f"{prefix}.relu{j}"] = c_relu
        return h

    def forward(self, x: np.ndarray, training: bool = False, record: bool = False) -> np.ndarray:
        """Map an input tile (n, 1, z, y, x) to logits (n, K, oz, oy, ox).

        ``record=True`` keeps layer caches so ``backward`` can run.
        """
        caches = {} if record else None
        x = np.ascontiguousarray(x, dtype=self.dtype)
        L = self.config.levels
        skips = []
        h = x
        for i in range(L - 1):
            h = self._block(f"enc{i}", 1, h, training, caches)
            h = self._block(f"enc{i}", 2, h, training, caches)
            skips.append(h)
            c = {} if record else None
            h = layers.maxpool2_fwd(h, c)
            if record:
                caches[f"pool{i}"] = c
        h = self._block(f"enc{L - 1}", 1, h, training, caches)
        h = self._block(f"enc{L - 1}", 2, h, training, caches)
        for i in reversed(range(L - 1)):
            c_up = {} if record else None
            h = layers.upconv2_fwd(
                h, self.params[f"dec{i}.up.w"].value, self.params[f"dec{i}.up.b"].value, c_up
            )
            c_cat = {} if record else None
            h = layers.concat_crop_fwd(skips[i], h, c_cat)
            if record:
                caches[f"dec{i}.up"] = c_up
                caches[f"dec{i}.cat"] = c_cat
            h = self._block(f"dec{i}", 1, h, training, caches)
            h = self._block(f"dec{i}", 2, h, training, caches)
        c_head = {} if record else None
        logits = layers.conv3d_valid_fwd(
            h, self.params["head.w"].value, self.params["head.b"].value, c_head
        )
        if record:
            caches["head"] = c_head
            self._caches = caches
        return logits

    def _block_bwd(self, prefix, j, g):
        caches = self._caches
        g = layers.relu_bwd(caches[f"{prefix}.relu{j}"], g)
        g, ggamma, gbeta = layers.batchnorm_bwd(caches[f"{prefix}.bn{j}"], g)
        self.params[f"{prefix}.bn{j}.gamma"].grad += ggamma
        self.params[f"{prefix}.bn{j}.beta"].grad += gbeta
        g, gw, gb = layers.conv3d_valid_bwd(caches[f"{prefix}.conv{j}"], g)
        self.params[f"{prefix}.conv{j}.w"].grad += gw
        self.params[f"{prefix}.conv{j}.b"].grad += gb
        return g

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients from a recorded forward pass."""
        if self._caches is None:
            raise RuntimeError("backward requires a forward(..., record=True) first")
        caches = self._caches
        L = self.config.levels
        g, gw, gb = layers.conv3d_valid_bwd(caches["head"], grad_logits)
        self.params["head.w"].grad += gw
        self.params["head.b"].grad += gb
        skip_grads = {}
        for i in range(L - 1):  # reverse of the synthesis order
            g = self._block_bwd(f"dec{i}", 2, g)
            g = self._block_bwd(f"dec{i}", 1, g)
            gskip, g = layers.concat_crop_bwd(caches[f"dec{i}.cat"], g)
            skip_grads[i] = gskip
            g, gw, gb = layers.upconv2_bwd(caches[f"dec{i}.up"], g)
            self.params[f"dec{i}.up.w"].grad += gw
            self.params[f"dec{i}.up.b"].grad += gb
        g = self._block_bwd(f"enc{L - 1}", 2, g)
        g = self._block_bwd(f"enc{L - 1}", 1, g)
        for i in reversed(range(L - 1)):
            g = layers.maxpool2_bwd(caches[f"pool{i}"], g)
            g = g + skip_grads[i]
            g = self._block_bwd(f"enc{i}", 2, g)
            g = self._block_bwd(f"enc{i}", 1, g)
        self._caches = None
        return g

    # bookkeeping -------------------------------------------------------------

    def parameters(self) -> list:
        return list(self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def param_count(self) -> int:
        """Number of learnable scalars (BN running stats excluded)."""
        return sum(p.value.size for p in self.params.values())

    def output_shape(self) -> tuple:
        return output_shape(self.config)


def build(config: NetworkConfig, seed: int = 0, dtype=np.float32) -> UNet:
    """Construct a seeded network; raises GeometryError on a bad tile."""
    return UNet(config, seed=seed, dtype=dtype)


def param_count(net: UNet) -> int:
    return net.param_count()


# checkpoints ----------------------------------------------------------------


def _write_blob(f, name: str, arr: np.ndarray):
    enc = name.encode("utf-8")
    f.write(struct.pack("<I", len(enc)))
    f.write(enc)
    f.write(struct.pack("<I", arr.ndim))
    f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
    f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def save_checkpoint(net: UNet, path) -> None:
    """Versioned binary: magic, JSON config block, named float32 LE blobs."""
    cfg = net.config
    config_blob = json.dumps(
        {
            "levels": cfg.levels,
            "base_channels": cfg.base_channels,
            "num_classes": cfg.num_classes,
            "input_tile": list(cfg.input_tile),
        }
    ).encode("utf-8")
    blobs = [(n, p.value) for n, p in net.params.items()]
    blobs += [(n, b) for n, b in net.buffers.items()]
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(config_blob)))
        f.write(config_blob)
        f.write(struct.pack("<I", len(blobs)))
        for name, arr in blobs:
            _write_blob(f, name, arr)


def _read_exact(f, n: int) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CheckpointError("checkpoint truncated")
    return data


def load_checkpoint(path) -> UNet:
    with open(path, "rb") as f:
        magic = f.read(len(_MAGIC))
        if magic != _MAGIC:
            raise CheckpointError(f"bad magic {magic!r}; expected {_MAGIC!r}")
        (clen,) = struct.unpack("<I", _read_exact(f, 4))
        try:
            raw = json.loads(_read_exact(f, clen).decode("utf-8"))
            cfg = NetworkConfig(
                levels=raw["levels"],
                base_channels=raw["base_channels"],
                num_classes=raw["num_classes"],
                input_tile=tuple(raw["input_tile"]),
            )
        except (ValueError, KeyError, TypeError) as e:
            raise CheckpointError(f"bad config block: {e}") from e
        net = UNet(cfg, seed=0)
        expected = dict(net.params)
        (nblobs,) = struct.unpack("<I", _read_exact(f, 4))
        seen = set()
        for _ in range(nblobs):
            (nlen,) = struct.unpack("<I", _read_exact(f, 4))
            name = _read_exact(f, nlen).decode("utf-8")
            (ndim,) = struct.unpack("<I", _read_exact(f, 4))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim))
            count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
            arr = np.frombuffer(_read_exact(f, 4 * count), dtype="<f4").reshape(shape)
            if name in expected:
                if expected[name].value.shape != arr.shape:
                    raise CheckpointError(
                        f"{name}: shape {arr.shape} != expected {expected[name].value.shape}"
                    )
                expected[name].value[...] = arr
            elif name in net.buffers:
                if net.buffers[name].shape != arr.shape:
                    raise CheckpointError(f"{name}: buffer shape mismatch")
                net.buffers[name][...] = arr
            else:
                raise CheckpointError(f"unknown blob {name!r}")
            seen.add(name)
        missing = (set(expected) | set(net.buffers)) - seen
        if missing:
            raise CheckpointError(f"missing blobs: {sorted(missing)}")
        if f.read(1):
            raise CheckpointError("trailing bytes after last blob")
    return net


def remap_head(net: UNet, new_classes: int, seed: int = 0) -> UNet:
    """Copy of the net with a freshly initialized K-way output layer."""
    if new_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {new_classes}")
    cfg = net.config
    out = UNet(
        NetworkConfig(cfg.levels, cfg.base_channels, new_classes, cfg.input_tile),
        seed=seed,
        dtype=net.dtype,
    )
    for name, p in net.params.items():
        if not name.startswith("head."):
            out.params[name].value[...] = p.value
    for name, b in net.buffers.items():
        out.buffers[name][...] = b
    return out
