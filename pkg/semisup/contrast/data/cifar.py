"""
Reader for the CIFAR-10 binary distribution (cifar-10-batches-bin).

Each record is 3073 bytes: one label byte (0-9) followed by 3072 pixel bytes,
the red, green and blue 32x32 planes in row-major order.
"""

import logging
import os
from typing import List, Optional, Tuple

import numpy as np

from semisup.contrast.data import Dataset
from semisup.contrast.exc import DatasetFormatError

IMAGE_SIDE = 32
CHANNELS = 3
PIXEL_BYTES = IMAGE_SIDE * IMAGE_SIDE * CHANNELS
RECORD_BYTES = 1 + PIXEL_BYTES
CLASSES = 10

TRAIN_FILES = tuple("data_batch_{}.bin".format(i) for i in range(1, 6))
TEST_FILE = "test_batch.bin"

log = logging.getLogger(__name__)


def parse_records(
    data: bytes, source: str = "<bytes>", limit: Optional[int] = None
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Decode raw records.

    :param limit: Decode at most this many records (the full length is still
        validated).
    :return: (images n x 32 x 32 x 3 scaled to [0, 1], labels)
    """
    if len(data) == 0:
        raise DatasetFormatError("{}: file is empty".format(source))
    complete = len(data) // RECORD_BYTES
    if len(data) % RECORD_BYTES:
        raise DatasetFormatError(
            "{}: truncated record at byte offset {} ({} trailing bytes)".format(
                source, complete * RECORD_BYTES, len(data) % RECORD_BYTES
            )
        )
    records = np.frombuffer(data, dtype=np.uint8).reshape(complete, RECORD_BYTES)
    bad = np.flatnonzero(records[:, 0] >= CLASSES)
    if bad.size:
        raise DatasetFormatError(
            "{}: label byte {} > 9 at byte offset {}".format(
                source, records[bad[0], 0], int(bad[0]) * RECORD_BYTES
            )
        )
    if limit is not None:
        records = records[:limit]
    labels = records[:, 0].astype(np.int64)
    images = (
        records[:, 1:]
        .reshape(-1, CHANNELS, IMAGE_SIDE, IMAGE_SIDE)
        .transpose(0, 2, 3, 1)
        .astype(np.float64)
        / 255.0
    )
    return np.ascontiguousarray(images), labels


def read_batch_file(path: str, limit: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    with open(path, "rb") as fp:
        return parse_records(fp.read(), source=path, limit=limit)


def _read_files(paths: List[str], limit: Optional[int]) -> Tuple[np.ndarray, np.ndarray]:
    images, labels = [], []
    remaining = limit
    for path in paths:
        if remaining is not None and remaining <= 0:
            break
        x, y = read_batch_file(path, limit=remaining)
        log.debug("Read {} records from {}".format(len(y), path))
        images.append(x)
        labels.append(y)
        if remaining is not None:
            remaining -= len(y)
    return np.concatenate(images), np.concatenate(labels)


def load_cifar10(
    directory: str, subset: Optional[int] = None, test_subset: Optional[int] = None
) -> Tuple[Dataset, Dataset]:
    """
    Load the train (data_batch_1..5) and test (test_batch) splits.

    :param subset: Keep only the first `subset` training records.
    :param test_subset: Keep only the first `test_subset` test records.
    """
    paths = [os.path.join(directory, name) for name in TRAIN_FILES + (TEST_FILE,)]
    for path in paths:
        if not os.path.isfile(path):
            raise FileNotFoundError("CIFAR-10 batch file not found: {}".format(path))

    x_train, y_train = _read_files(paths[:-1], subset)
    x_test, y_test = _read_files(paths[-1:], test_subset)
    log.info(
        "Loaded CIFAR-10 from {}: {} train, {} test samples".format(
            directory, len(y_train), len(y_test)
        )
    )
    return (
        Dataset(x=x_train, y=y_train, classes=CLASSES, name="cifar10-train"),
        Dataset(x=x_test, y=y_test, classes=CLASSES, name="cifar10-test"),
    )
