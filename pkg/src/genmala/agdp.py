"""AGDP weight files: the portable generator format shared with trainers.

Layout (all little-endian, CRC-32 of every preceding byte at the end):

    magic   4 bytes  b"AGDP"
    u32     version (currently 1)
    u8      augmented flag; if 1, followed by f64 scale_cap
    u8      input layout: 0 = flat latent, 1 = latent enters as (d, 1, 1)
    u32     latent_dim
    u32     layer_count
    then per layer a u8 kind tag followed by its fields:
      0 fully_connected   u32 in, u32 out; f32 weight[out*in] row-major;
                          f32 bias[out]
      1 conv2d            u32 in_c, out_c, kh, kw, pad_h, pad_w (stride 1);
                          f32 kernel[out_c, in_c, ky, kx] row-major;
                          f32 bias[out_c]
      2 leaky_relu        f64 negative_slope
      3 batch_norm        u32 features; f64 eps; f32 gamma, beta,
                          running_mean, running_var (each [features])
      4 sigmoid           (no fields)
      5 upsample_nearest  u32 factor
    u32     CRC-32 (zlib) of all preceding bytes

Weight arrays are stored as float32 and widened to float64 on load;
scalar hyperparameters (slope, eps, scale_cap) stay float64, so a
save/load round trip is bit-exact.  Writes are atomic (temp file +
rename).
"""

from __future__ import annotations

import os
import struct
import zlib
from typing import Union

import numpy as np

from genmala.exceptions import ConfigurationError, ModelLoadError
from genmala.generator import (
    AugmentedGenerator,
    BatchNorm,
    Conv2d,
    FullyConnected,
    GeneratorModel,
    LeakyReLU,
    Sigmoid,
    UpsampleNearest,
    infer_shapes,
)

MAGIC = b"AGDP"
VERSION = 1

_KIND_TAGS = {
    "fully_connected": 0,
    "conv2d": 1,
    "leaky_relu": 2,
    "batch_norm": 3,
    "sigmoid": 4,
    "upsample_nearest": 5,
}


def _f32_bytes(arr: np.ndarray) -> bytes:
    return np.ascontiguousarray(arr, dtype="<f4").tobytes()


def _pack_layer(layer) -> bytes:
    tag = _KIND_TAGS.get(layer.kind)
    if tag is None:
        raise ConfigurationError(f"layer kind {layer.kind!r} has no AGDP encoding")
    head = struct.pack("<B", tag)
    if isinstance(layer, FullyConnected):
        out_f, in_f = layer.weight.shape
        return head + struct.pack("<II", in_f, out_f) + _f32_bytes(layer.weight) + _f32_bytes(layer.bias)
    if isinstance(layer, Conv2d):
        oc, ic, kh, kw = layer.kernel.shape
        return (head + struct.pack("<IIIIII", ic, oc, kh, kw, layer.pad[0], layer.pad[1])
                + _f32_bytes(layer.kernel) + _f32_bytes(layer.bias))
    if isinstance(layer, LeakyReLU):
        return head + struct.pack("<d", layer.negative_slope)
    if isinstance(layer, BatchNorm):
        n = layer.gamma.shape[0]
        return (head + struct.pack("<Id", n, layer.eps)
                + _f32_bytes(layer.gamma) + _f32_bytes(layer.beta)
                + _f32_bytes(layer.running_mean) + _f32_bytes(layer.running_var))
    if isinstance(layer, Sigmoid):
        return head
    if isinstance(layer, UpsampleNearest):
        return head + struct.pack("<I", layer.factor)
    raise ConfigurationError(f"cannot serialize layer {type(layer).__name__}")


def save_model(model: Union[GeneratorModel, AugmentedGenerator], path) -> None:
    """Write an AGDP v1 file.  Weights are serialized as float32."""
    if isinstance(model, AugmentedGenerator):
        base, cap = model.base, model.scale_cap
        header = MAGIC + struct.pack("<IB", VERSION, 1) + struct.pack("<d", cap)
    elif isinstance(model, GeneratorModel):
        base, cap = model, None
        header = MAGIC + struct.pack("<IB", VERSION, 0)
    else:
        raise ConfigurationError(f"cannot save a {type(model).__name__}")

    layout = 0 if base.input_shape is None else 1
    blob = header + struct.pack("<BII", layout, base.latent_dim, len(base.layers))
    for layer in base.layers:
        blob += _pack_layer(layer)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)

    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise ModelLoadError("weight file truncated inside a record")
        out = self.blob[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        vals = struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt)))
        return vals if len(vals) > 1 else vals[0]

    def f32_array(self, count: int, shape) -> np.ndarray:
        raw = np.frombuffer(self.take(4 * count), dtype="<f4")
        return raw.astype(np.float64).reshape(shape)


def _read_layer(rd: _Reader):
    tag = rd.unpack("B")
    if tag == 0:
        in_f, out_f = rd.unpack("II")
        weight = rd.f32_array(in_f * out_f, (out_f, in_f))
        bias = rd.f32_array(out_f, (out_f,))
        return FullyConnected(weight=weight, bias=bias)
    if tag == 1:
        ic, oc, kh, kw, ph, pw = rd.unpack("IIIIII")
        kernel = rd.f32_array(oc * ic * kh * kw, (oc, ic, kh, kw))
        bias = rd.f32_array(oc, (oc,))
        return Conv2d(kernel=kernel, bias=bias, pad=(ph, pw))
    if tag == 2:
        return LeakyReLU(negative_slope=float(rd.unpack("d")))
    if tag == 3:
        n = rd.unpack("I")
        eps = float(rd.unpack("d"))
        gamma = rd.f32_array(n, (n,))
        beta = rd.f32_array(n, (n,))
        mean = rd.f32_array(n, (n,))
        var = rd.f32_array(n, (n,))
        return BatchNorm(gamma=gamma, beta=beta, running_mean=mean,
                         running_var=var, eps=eps)
    if tag == 4:
        return Sigmoid()
    if tag == 5:
        return UpsampleNearest(factor=rd.unpack("I"))
    raise ModelLoadError(f"unknown layer kind tag {tag}")


def load_model(path) -> Union[GeneratorModel, AugmentedGenerator]:
    """Load and validate an AGDP file.

    Raises ModelLoadError with a distinct message for bad magic, bad
    version, checksum mismatch and broken shape chains.
    """
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ModelLoadError(f"cannot read weight file {path}: {exc}") from exc

    if len(blob) < len(MAGIC) + 4 + 4 or blob[:4] != MAGIC:
        raise ModelLoadError(f"{path}: bad magic, not an AGDP file")
    stored_crc, = struct.unpack("<I", blob[-4:])
    if zlib.crc32(blob[:-4]) & 0xFFFFFFFF != stored_crc:
        raise ModelLoadError(f"{path}: checksum mismatch (file corrupted or truncated)")

    rd = _Reader(blob[:-4])
    rd.take(4)  # magic
    version = rd.unpack("I")
    if version != VERSION:
        raise ModelLoadError(f"{path}: unsupported AGDP version {version}")
    augmented = rd.unpack("B")
    cap = float(rd.unpack("d")) if augmented else None
    layout = rd.unpack("B")
    latent_dim = rd.unpack("I")
    layer_count = rd.unpack("I")
    layers = tuple(_read_layer(rd) for _ in range(layer_count))
    if rd.pos != len(rd.blob):
        raise ModelLoadError(f"{path}: {len(rd.blob) - rd.pos} trailing bytes after layers")

    input_shape = None if layout == 0 else (latent_dim, 1, 1)
    start = latent_dim if input_shape is None else input_shape
    try:
        shapes = infer_shapes(layers, start)
    except ConfigurationError as exc:
        raise ModelLoadError(f"{path}: layer shape chain broken: {exc}") from exc
    final = shapes[-1]
    output_dim = final if isinstance(final, int) else int(np.prod(final))
    output_shape = None if isinstance(final, int) else tuple(final)

    base = GeneratorModel(layers=layers, latent_dim=latent_dim, output_dim=output_dim,
                          input_shape=input_shape, output_shape=output_shape)
    if augmented:
        return AugmentedGenerator(base=base, scale_cap=cap)
    return base


def file_crc(path) -> int:
    """CRC-32 of the whole file, for manifests."""
    with open(path, "rb") as fh:
        return zlib.crc32(fh.read()) & 0xFFFFFFFF


def model_info(path) -> dict:
    """Human-oriented summary of an AGDP file (CLI `model-info`)."""
    model = load_model(path)
    base = model.base if isinstance(model, AugmentedGenerator) else model
    start = base.latent_dim if base.input_shape is None else base.input_shape
    shapes = infer_shapes(base.layers, start)
    return {
        "augmented": isinstance(model, AugmentedGenerator),
        "scale_cap": getattr(model, "scale_cap", None),
        "latent_dim": base.latent_dim,
        "output_dim": base.output_dim,
        "output_shape": base.output_shape,
        "layers": [
            {"kind": layer.kind, "output": shapes[i + 1]}
            for i, layer in enumerate(base.layers)
        ],
        "crc32": file_crc(path),
    }
