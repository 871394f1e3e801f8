import struct

import numpy as np
import pytest

from semisup.contrast.exc import CheckpointFormatError
from semisup.contrast.model import ModelDims, init_params
from semisup.contrast.numerics import Rng, checksum
from semisup.contrast.utils.checkpoint import (
    MAGIC,
    dump_checkpoint,
    load_checkpoint,
    parse_checkpoint,
    save_checkpoint,
)


@pytest.fixture
def params():
    return init_params(Rng(0), ModelDims(input_dim=5, feature_dim=3, classes=2, hidden=(4, 6)))


def test_save_and_load(params, tmp_path):
    path = save_checkpoint(params, str(tmp_path / "nested" / "model.ckpt"))
    loaded = load_checkpoint(path)
    assert loaded.dims == params.dims
    for (name, a), (other, b) in zip(params.named_arrays(), loaded.named_arrays()):
        assert name == other
        assert checksum(a) == checksum(b)


def test_layout(params):
    data = dump_checkpoint(params)
    assert data[:8] == MAGIC
    assert struct.unpack_from("<IIIII", data, 8) == (1, 5, 3, 2, 2)
    assert struct.unpack_from("<II", data, 28) == (4, 6)
    first = np.frombuffer(data, dtype="<f8", count=1, offset=36)[0]
    assert first == params.encoder_layers[0][0][0, 0]
    sizes = sum(a.size for _, a in params.named_arrays())
    assert len(data) == 36 + 8 * sizes


def test_bad_magic(params):
    data = b"NOTACKPT" + dump_checkpoint(params)[8:]
    with pytest.raises(CheckpointFormatError, match="magic"):
        parse_checkpoint(data)


def test_bad_version(params):
    data = bytearray(dump_checkpoint(params))
    data[8:12] = struct.pack("<I", 2)
    with pytest.raises(CheckpointFormatError, match="version"):
        parse_checkpoint(bytes(data))


@pytest.mark.parametrize("cut", [4, 30, 100])
def test_truncated(params, cut):
    with pytest.raises(CheckpointFormatError):
        parse_checkpoint(dump_checkpoint(params)[:cut])


def test_trailing_bytes(params):
    with pytest.raises(CheckpointFormatError):
        parse_checkpoint(dump_checkpoint(params) + b"\0" * 8)


def test_invalid_dims(params):
    data = bytearray(dump_checkpoint(params))
    data[12:16] = struct.pack("<I", 0)
    with pytest.raises(CheckpointFormatError, match="dims"):
        parse_checkpoint(bytes(data))
