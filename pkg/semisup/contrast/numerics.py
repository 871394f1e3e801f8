"""
Dense float64 tensors and the numerically stable kernels every other module uses.

A Tensor is a C-contiguous ``numpy.ndarray`` of dtype float64 stored
sample-per-row: features are n x p, class distributions n x c.
"""

import hashlib
import zlib
from typing import Tuple, Union

import numpy as np
import numpy.typing as npt
from scipy.special import logsumexp

from semisup.contrast.exc import DomainError, ShapeError

Tensor = npt.NDArray[np.float64]

DEFAULT_EPS = 1e-12


def as_tensor(data, shape: Tuple[int, ...] = None) -> Tensor:
    t = np.ascontiguousarray(data, dtype=np.float64)
    if shape is not None:
        t = t.reshape(shape)
    return t


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """
    a @ b for 2-D operands.

    Results repeat bit for bit across runs on one numpy and BLAS build; other
    builds may round differently in the last digits.
    """
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(
            "matmul: cannot multiply {} by {}".format(tuple(a.shape), tuple(b.shape))
        )
    return np.matmul(a, b)


def _check_temperature(temperature: float):
    if not temperature > 0:
        raise DomainError("temperature must be > 0, got {}".format(temperature))


def row_softmax(m: Tensor, temperature: float = 1.0) -> Tensor:
    _check_temperature(temperature)
    e = np.exp((m - m.max(axis=1, keepdims=True)) / temperature)
    return e / e.sum(axis=1, keepdims=True)


def log_row_softmax(m: Tensor, temperature: float = 1.0) -> Tensor:
    _check_temperature(temperature)
    scaled = m / temperature
    return scaled - logsumexp(scaled, axis=1, keepdims=True)


def row_norms(m: Tensor) -> Tensor:
    return np.sqrt(np.sum(m * m, axis=1, keepdims=True))


def l2_normalize_rows(m: Tensor, eps: float = DEFAULT_EPS) -> Tensor:
    if not eps > 0:
        raise DomainError("eps must be > 0, got {}".format(eps))
    return m / np.maximum(row_norms(m), eps)


def checksum(t: np.ndarray) -> str:
    """
    Platform-independent content hash (shape + little-endian bytes).
    """
    h = hashlib.sha256()
    h.update(repr(tuple(t.shape)).encode("ascii"))
    h.update(np.ascontiguousarray(t).astype(t.dtype.newbyteorder("<")).tobytes())
    return h.hexdigest()


def _stream_key(key: Union[int, str]) -> int:
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    if key < 0:
        raise DomainError("stream keys must be non-negative, got {}".format(key))
    return int(key)


class Rng:
    """
    Seeded, splittable random source over the counter-based Philox generator.

    Streams derived with different keys are statistically independent, and a
    derived stream depends only on (seed, keys), never on how much the parent
    stream has been consumed.
    """

    def __init__(self, seed: int, key: Tuple[int, ...] = ()):
        if seed < 0:
            raise DomainError("seed must be non-negative, got {}".format(seed))
        self.seed = int(seed)
        self.key = tuple(key)
        sequence = np.random.SeedSequence(entropy=self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.Philox(sequence))

    def derive(self, *keys: Union[int, str]) -> "Rng":
        return Rng(self.seed, self.key + tuple(_stream_key(k) for k in keys))

    def __repr__(self):
        return "Rng(seed={}, key={})".format(self.seed, self.key)
