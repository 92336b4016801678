"""AGDP export: serialize a trained torch generator for the inference engine.

Format (little-endian, CRC-32 of all preceding bytes at the end):
magic "AGDP", u32 version 1, u8 augmented flag (+ f64 scale_cap), u8 input
layout (0 flat, 1 latent as a 1x1 feature map), u32 latent_dim, u32 layer
count, then tagged layer records; weight arrays are float32 row-major
(conv kernels ordered out-channel, in-channel, ky, kx), scalar
hyperparameters are float64.  Batch-norm layers export their frozen
running statistics, never batch statistics.
"""

from __future__ import annotations

import os
import struct
import zlib

import numpy as np
import torch
from torch import nn

MAGIC = b"AGDP"
VERSION = 1


class ExportError(RuntimeError):
    pass


def _f32(tensor: torch.Tensor) -> bytes:
    return np.ascontiguousarray(tensor.detach().cpu().numpy(),
                                dtype="<f4").tobytes()


def _pack_layer(layer: nn.Module) -> bytes:
    if isinstance(layer, nn.Linear):
        out_f, in_f = layer.weight.shape
        bias = layer.bias if layer.bias is not None \
            else torch.zeros(out_f, dtype=layer.weight.dtype)
        return (struct.pack("<BII", 0, in_f, out_f)
                + _f32(layer.weight) + _f32(bias))
    if isinstance(layer, nn.Conv2d):
        if layer.stride != (1, 1) or layer.dilation != (1, 1) or layer.groups != 1:
            raise ExportError(f"conv2d with stride/dilation/groups {layer} "
                              "has no AGDP encoding")
        oc, ic, kh, kw = layer.weight.shape
        ph, pw = layer.padding
        bias = layer.bias if layer.bias is not None \
            else torch.zeros(oc, dtype=layer.weight.dtype)
        return (struct.pack("<BIIIIII", 1, ic, oc, kh, kw, ph, pw)
                + _f32(layer.weight) + _f32(bias))
    if isinstance(layer, nn.LeakyReLU):
        return struct.pack("<Bd", 2, layer.negative_slope)
    if isinstance(layer, nn.BatchNorm1d):
        n = layer.num_features
        gamma = layer.weight if layer.weight is not None else torch.ones(n)
        beta = layer.bias if layer.bias is not None else torch.zeros(n)
        return (struct.pack("<BId", 3, n, layer.eps)
                + _f32(gamma) + _f32(beta)
                + _f32(layer.running_mean) + _f32(layer.running_var))
    if isinstance(layer, nn.Sigmoid):
        return struct.pack("<B", 4)
    if isinstance(layer, nn.Upsample):
        if layer.mode != "nearest":
            raise ExportError(f"upsample mode {layer.mode!r} has no AGDP encoding")
        return struct.pack("<BI", 5, int(layer.scale_factor))
    raise ExportError(f"layer {type(layer).__name__} has no AGDP encoding")


def export_agdp(generator: nn.Sequential, scale_cap, path) -> None:
    """Write the generator as an AGDP v1 file (atomic temp + rename).

    ``scale_cap`` of None exports a plain generator; a positive float adds
    the augmented header so the engine wraps the model as h(z2) * G(z1).
    """
    generator.eval()
    first = generator[0]
    if isinstance(first, nn.Conv2d):
        layout, latent_dim = 1, first.in_channels
    elif isinstance(first, nn.Linear):
        layout, latent_dim = 0, first.in_features
    else:
        raise ExportError(f"first layer {type(first).__name__} does not "
                          "determine a latent layout")

    if scale_cap is None:
        blob = MAGIC + struct.pack("<IB", VERSION, 0)
    else:
        blob = MAGIC + struct.pack("<IBd", VERSION, 1, float(scale_cap))
    blob += struct.pack("<BII", layout, latent_dim, len(generator))
    for layer in generator:
        blob += _pack_layer(layer)
    blob += struct.pack("<I", zlib.crc32(blob) & 0xFFFFFFFF)

    tmp = str(path) + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(blob)
    os.replace(tmp, path)
