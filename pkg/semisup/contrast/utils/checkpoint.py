"""
Binary parameter checkpoints.

Layout (all integers little-endian uint32):

    magic        8 bytes  b"SSCTCKPT"
    version      uint32   1
    input_dim, feature_dim, classes, hidden_count
    hidden       hidden_count x uint32
    arrays       float64 little-endian, `ModelParams.named_arrays()` order
"""

import logging
import os
import struct

import numpy as np

from semisup.contrast.exc import CheckpointFormatError
from semisup.contrast.model import ModelDims, ModelParams

MAGIC = b"SSCTCKPT"
VERSION = 1

_HEADER = struct.Struct("<8sIIIII")
_F8 = np.dtype("<f8")

log = logging.getLogger(__name__)


def _array_shapes(dims: ModelDims):
    shapes = []
    for i, (d_in, d_out) in enumerate(zip(dims.widths, dims.widths[1:])):
        shapes.append(("encoder.{}.weight".format(i), (d_in, d_out)))
        shapes.append(("encoder.{}.bias".format(i), (d_out,)))
    shapes.append(("head.weight", (dims.feature_dim, dims.classes)))
    shapes.append(("head.bias", (dims.classes,)))
    return shapes


def dump_checkpoint(params: ModelParams) -> bytes:
    dims = params.dims
    parts = [
        _HEADER.pack(
            MAGIC, VERSION, dims.input_dim, dims.feature_dim, dims.classes, len(dims.hidden)
        ),
        struct.pack("<{}I".format(len(dims.hidden)), *dims.hidden),
    ]
    for _, array in params.named_arrays():
        parts.append(np.ascontiguousarray(array, dtype=_F8).tobytes())
    return b"".join(parts)


def parse_checkpoint(data: bytes, source: str = "<bytes>") -> ModelParams:
    if len(data) < _HEADER.size:
        raise CheckpointFormatError("{}: truncated header ({} bytes)".format(source, len(data)))
    magic, version, input_dim, feature_dim, classes, hidden_count = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise CheckpointFormatError("{}: bad magic {!r}".format(source, magic))
    if version != VERSION:
        raise CheckpointFormatError("{}: unsupported version {}".format(source, version))

    offset = _HEADER.size
    hidden_fmt = "<{}I".format(hidden_count)
    if len(data) < offset + struct.calcsize(hidden_fmt):
        raise CheckpointFormatError("{}: truncated dims record".format(source))
    hidden = struct.unpack_from(hidden_fmt, data, offset)
    offset += struct.calcsize(hidden_fmt)

    try:
        dims = ModelDims(
            input_dim=input_dim, feature_dim=feature_dim, classes=classes, hidden=hidden
        )
    except Exception as e:
        raise CheckpointFormatError("{}: invalid dims record: {}".format(source, e)) from e

    shapes = _array_shapes(dims)
    expected = offset + sum(int(np.prod(s)) for _, s in shapes) * _F8.itemsize
    if len(data) != expected:
        raise CheckpointFormatError(
            "{}: expected {} bytes for dims {}, got {}".format(source, expected, dims, len(data))
        )

    arrays = {}
    for name, shape in shapes:
        count = int(np.prod(shape))
        arrays[name] = (
            np.frombuffer(data, dtype=_F8, count=count, offset=offset)
            .astype(np.float64)
            .reshape(shape)
        )
        offset += count * _F8.itemsize
    return ModelParams.from_named(dims, arrays)


def save_checkpoint(params: ModelParams, path: str) -> str:
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)
    with open(path, "wb") as fp:
        fp.write(dump_checkpoint(params))
    log.info("Wrote checkpoint {}".format(path))
    return path


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as fp:
        return parse_checkpoint(fp.read(), source=path)
