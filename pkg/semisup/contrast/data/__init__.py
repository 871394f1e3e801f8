"""
In-memory datasets, semi-supervised label splits and batch iteration.
"""

import logging
import math
from dataclasses import dataclass
from typing import Iterator, Optional, Tuple

import numpy as np

from semisup.contrast.exc import ConfigurationError, ShapeError
from semisup.contrast.numerics import Rng, Tensor, as_tensor

log = logging.getLogger(__name__)


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _shuffled(g: np.random.Generator, pool: np.ndarray) -> np.ndarray:
    # Generator.permutation rejects read-only arrays.
    return pool[g.permutation(len(pool))]


@dataclass(frozen=True, eq=False)
class ChannelStats:
    """Per-channel mean and standard deviation (last axis of a sample)."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = as_tensor(self.mean).ravel()
        std = as_tensor(self.std).ravel()
        if mean.shape != std.shape:
            raise ShapeError("mean {} and std {} differ".format(mean.shape, std.shape))
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(std)) and np.all(std > 0)):
            raise ConfigurationError("channel statistics must be finite with std > 0")
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "std", _frozen(std))


@dataclass(frozen=True, eq=False)
class Dataset:
    """
    Samples (n x d rows or n x h x w x ch images) with integer labels in
    [0, classes). Arrays are read-only.
    """

    x: Tensor
    y: np.ndarray
    classes: int
    stats: Optional[ChannelStats] = None
    name: str = ""

    def __post_init__(self):
        x = as_tensor(self.x)
        y = np.ascontiguousarray(self.y, dtype=np.int64)
        if x.ndim not in (2, 4):
            raise ShapeError("samples must be n x d or n x h x w x ch, got {}".format(x.shape))
        if x.shape[0] == 0:
            raise ShapeError("dataset is empty")
        if y.shape != (x.shape[0],):
            raise ShapeError("{} labels for {} samples".format(y.shape, x.shape[0]))
        if self.classes < 1:
            raise ConfigurationError("classes must be >= 1")
        if y.min() < 0 or y.max() >= self.classes:
            raise ConfigurationError(
                "labels must lie in [0, {}), got [{}, {}]".format(self.classes, y.min(), y.max())
            )
        object.__setattr__(self, "x", _frozen(x))
        object.__setattr__(self, "y", _frozen(y))

    def __len__(self):
        return self.x.shape[0]

    @property
    def is_image(self) -> bool:
        return self.x.ndim == 4

    @property
    def input_dim(self) -> int:
        return int(np.prod(self.x.shape[1:]))

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.y, minlength=self.classes)

    def subset(self, indices) -> "Dataset":
        indices = np.asarray(indices, dtype=np.int64)
        return Dataset(
            x=self.x[indices],
            y=self.y[indices],
            classes=self.classes,
            stats=self.stats,
            name=self.name,
        )


def compute_stats(x: Tensor) -> ChannelStats:
    """
    Per-channel statistics over every axis but the last. Constant channels
    get std 1 so standardizing them is a pure shift.
    """
    axes = tuple(range(x.ndim - 1))
    mean = x.mean(axis=axes)
    std = x.std(axis=axes)
    return ChannelStats(mean=mean, std=np.where(std > 0, std, 1.0))


def standardize(ds: Dataset, stats: Optional[ChannelStats] = None) -> Dataset:
    """
    Shift and scale every channel with `stats` (computed from `ds` when not
    given). Test splits are standardized with the training statistics.
    """
    stats = stats or compute_stats(ds.x)
    if stats.mean.shape[0] != ds.x.shape[-1]:
        raise ShapeError(
            "statistics for {} channels, data has {}".format(stats.mean.shape[0], ds.x.shape[-1])
        )
    return Dataset(
        x=(ds.x - stats.mean) / stats.std, y=ds.y, classes=ds.classes, stats=stats, name=ds.name
    )


@dataclass(frozen=True, eq=False)
class SemiSplit:
    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray

    def __post_init__(self):
        labeled = np.ascontiguousarray(self.labeled_idx, dtype=np.int64)
        unlabeled = np.ascontiguousarray(self.unlabeled_idx, dtype=np.int64)
        if np.intersect1d(labeled, unlabeled).size:
            raise ConfigurationError("labeled and unlabeled index sets overlap")
        object.__setattr__(self, "labeled_idx", _frozen(labeled))
        object.__setattr__(self, "unlabeled_idx", _frozen(unlabeled))

    def __len__(self):
        return len(self.labeled_idx) + len(self.unlabeled_idx)

    def labeled_only(self) -> "SemiSplit":
        return SemiSplit(self.labeled_idx, np.zeros(0, dtype=np.int64))


def split_semi(ds: Dataset, labels_per_class: int, rng: Rng) -> SemiSplit:
    """
    Label `labels_per_class` uniformly chosen samples of every class; the rest
    are unlabeled. Both index lists are sorted.
    """
    if labels_per_class < 1:
        raise ConfigurationError("labels_per_class must be >= 1")
    g = rng.generator
    chosen = []
    for c in range(ds.classes):
        members = np.flatnonzero(ds.y == c)
        if len(members) < labels_per_class:
            raise ConfigurationError(
                "class {} has {} samples, {} labels requested".format(
                    c, len(members), labels_per_class
                )
            )
        chosen.append(g.permutation(members)[:labels_per_class])
    labeled = np.sort(np.concatenate(chosen))
    unlabeled = np.setdiff1d(np.arange(len(ds)), labeled)
    return SemiSplit(labeled_idx=labeled, unlabeled_idx=unlabeled)


@dataclass(frozen=True, eq=False)
class Batch:
    """One step's samples, labeled rows first."""

    labeled_idx: np.ndarray
    unlabeled_idx: np.ndarray
    x: Tensor
    labels: np.ndarray

    @property
    def indices(self) -> np.ndarray:
        return np.concatenate([self.labeled_idx, self.unlabeled_idx])

    @property
    def labeled_count(self) -> int:
        return len(self.labeled_idx)

    def __len__(self):
        return len(self.labeled_idx) + len(self.unlabeled_idx)


def steps_per_epoch(split: SemiSplit, batch: int) -> int:
    """
    ceil(N / batch), raised until every step has room for at least one
    labeled sample without exceeding `batch`.
    """
    labeled, unlabeled = len(split.labeled_idx), len(split.unlabeled_idx)
    steps = math.ceil(len(split) / batch)
    while steps * batch < unlabeled + max(labeled, steps):
        steps += 1
    return steps


def batch_iter(ds: Dataset, split: SemiSplit, batch: int, rng: Rng) -> Iterator[Batch]:
    """
    One shuffled epoch over the split.

    Both pools are shuffled and cut into the same number of steps, the
    unlabeled chunks in reverse so step sizes differ by at most one and never
    exceed `batch`. A step left without a labeled sample borrows one from a
    reshuffled labeled cycle.

    Steps hold at most `batch` samples, not exactly `batch`: the epoch is
    spread evenly over `steps_per_epoch` steps instead of leaving one short
    remainder step.
    """
    total = len(split)
    if batch < 2:
        raise ConfigurationError("batch must be >= 2, got {}".format(batch))
    if batch > total:
        raise ConfigurationError("batch {} is larger than the dataset ({})".format(batch, total))
    if len(split.labeled_idx) == 0:
        raise ConfigurationError("split has no labeled samples")

    steps = steps_per_epoch(split, batch)
    g = rng.generator
    labeled_chunks = np.array_split(_shuffled(g, split.labeled_idx), steps)
    unlabeled_chunks = np.array_split(_shuffled(g, split.unlabeled_idx), steps)[::-1]

    refill: Optional[np.ndarray] = None
    borrowed = 0
    for labeled, unlabeled in zip(labeled_chunks, unlabeled_chunks):
        if len(labeled) == 0:
            if refill is None:
                log.debug(
                    "{} labeled samples for {} steps; borrowing from a labeled cycle".format(
                        len(split.labeled_idx), steps
                    )
                )
                refill = _shuffled(rng.derive("refill").generator, split.labeled_idx)
            labeled = refill[[borrowed % len(refill)]]
            borrowed += 1
        indices = np.concatenate([labeled, unlabeled])
        yield Batch(
            labeled_idx=labeled,
            unlabeled_idx=unlabeled,
            x=ds.x[indices],
            labels=ds.y[labeled],
        )


def class_balance(ds: Dataset, indices) -> Tuple[int, ...]:
    counts = np.bincount(ds.y[np.asarray(indices, dtype=np.int64)], minlength=ds.classes)
    return tuple(int(v) for v in counts)
