"""
CSV output shared by the commands. All files are UTF-8 with LF line endings
and floats carry 9 significant digits.
"""

import csv
import math
import os
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

METRICS_HEADER = (
    "epoch",
    "lr",
    "loss_total",
    "loss_ce",
    "loss_z",
    "loss_q",
    "train_acc",
    "test_acc",
    "wall_ms",
)


def format_cell(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        if math.isnan(value):
            return "nan"
        return "%.9g" % value
    return str(value)


def _ensure_parent(path: str):
    directory = os.path.dirname(path)
    if directory and not os.path.exists(directory):
        os.makedirs(directory)


def write_csv(
    path: str,
    header: Sequence[str],
    rows: Iterable[Sequence],
    banner: Optional[Iterable[Tuple[str, str]]] = None,
) -> str:
    """
    Write a CSV file, optionally preceded by `# key=value` comment lines.
    """
    _ensure_parent(path)
    with open(path, "w", encoding="utf-8", newline="") as fp:
        for key, value in banner or ():
            fp.write("# {}={}\n".format(key, value))
        writer = csv.writer(fp, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_cell(v) for v in row])
    return path


def read_csv(path: str) -> Tuple[List[str], List[List[str]]]:
    """(header, rows) with `#` comment lines skipped."""
    with open(path, "r", encoding="utf-8", newline="") as fp:
        lines = [line for line in fp if not line.startswith("#")]
    reader = csv.reader(lines)
    header = next(reader)
    return header, list(reader)


def features_header(feature_dim: int) -> List[str]:
    return ["sample_index", "label"] + ["f{}".format(i) for i in range(feature_dim)]
