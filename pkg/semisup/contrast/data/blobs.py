"""
Synthetic Gaussian blobs: one isotropic Gaussian per class around the
vertices of a regular simplex.
"""

import math
from typing import Optional

import numpy as np

from semisup.contrast.data import Dataset
from semisup.contrast.exc import ConfigurationError
from semisup.contrast.numerics import Rng

MIN_SEPARATION_SPREADS = 4.0


def _helmert_basis(c: int) -> np.ndarray:
    """(c - 1) x c orthonormal rows spanning the sum-zero subspace of R^c."""
    basis = np.zeros((c - 1, c))
    for k in range(1, c):
        basis[k - 1, :k] = 1.0
        basis[k - 1, k] = -float(k)
        basis[k - 1] /= math.sqrt(k * (k + 1))
    return basis


def simplex_centers(classes: int, dim: int, separation: float) -> np.ndarray:
    """
    `classes` points in R^dim with every pairwise distance equal to
    `separation`. Needs classes <= dim + 1.
    """
    if classes < 2:
        raise ConfigurationError("blobs need at least 2 classes, got {}".format(classes))
    if classes > dim + 1:
        raise ConfigurationError(
            "{} simplex vertices do not fit in {} dimensions".format(classes, dim)
        )
    # Rows of the identity are sqrt(2) apart; project them into c - 1 coordinates.
    coords = np.eye(classes) @ _helmert_basis(classes).T
    centers = np.zeros((classes, dim))
    centers[:, : classes - 1] = coords * (separation / math.sqrt(2.0))
    return centers


def synth_blobs(
    rng: Rng,
    classes: int,
    per_class: int,
    dim: int,
    spread: float,
    separation: Optional[float] = None,
    name: str = "blobs",
) -> Dataset:
    """
    `per_class` samples ~ N(center_c, spread^2 I) for every class, class-major.

    :param separation: Center distance; defaults to (and must be at least)
        4 * spread.
    """
    if per_class < 1:
        raise ConfigurationError("per_class must be >= 1, got {}".format(per_class))
    if dim < 2:
        raise ConfigurationError("dim must be >= 2, got {}".format(dim))
    if not spread > 0:
        raise ConfigurationError("spread must be > 0, got {}".format(spread))
    if separation is None:
        separation = MIN_SEPARATION_SPREADS * spread
    if separation < MIN_SEPARATION_SPREADS * spread:
        raise ConfigurationError(
            "separation {} is below {} x spread {}".format(
                separation, MIN_SEPARATION_SPREADS, spread
            )
        )

    centers = simplex_centers(classes, dim, separation)
    noise = rng.generator.normal(0.0, spread, size=(classes, per_class, dim))
    x = (centers[:, None, :] + noise).reshape(classes * per_class, dim)
    y = np.repeat(np.arange(classes), per_class)
    return Dataset(x=x, y=y, classes=classes, name=name)
