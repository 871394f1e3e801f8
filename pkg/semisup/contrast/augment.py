"""
Augmented views: exact quarter-turn rotation, Gaussian blur, additive noise.

`make_view_pair` returns the clean view unchanged and an augmented copy drawn
per sample from a stream derived from the sample's key, so a sample's
augmentation does not depend on which batch it lands in.
"""

from typing import Literal, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.ndimage import correlate1d

from semisup.contrast.exc import DomainError, ShapeError
from semisup.contrast.numerics import Rng, Tensor, as_tensor
from semisup.contrast.utils import split_list

AugmentKind = Literal["identity", "rotate90", "gaussian_blur", "additive_noise", "compose"]

IMAGE_KINDS = frozenset({"rotate90", "gaussian_blur", "compose"})


def _number_tuple(value, cast):
    if isinstance(value, str):
        return tuple(cast(v) for v in split_list(value))
    if isinstance(value, (int, float)):
        return (value,)
    return value


class AugmentPolicy(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: AugmentKind = "additive_noise"
    turns: Tuple[int, ...] = (0, 1, 2, 3)
    sigma: Tuple[float, float] = (0.1, 2.0)
    ksize: int = Field(default=3, ge=1)
    noise_std: float = Field(default=0.1, ge=0)

    @field_validator("turns", mode="before")
    @classmethod
    def parse_turns(cls, v):
        return _number_tuple(v, int)

    @field_validator("turns")
    @classmethod
    def check_turns(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v:
            raise ValueError("at least one rotation multiple is required")
        if any(t not in (0, 1, 2, 3) for t in v):
            raise ValueError("rotation multiples must be in 0..3, got {}".format(v))
        return v

    @field_validator("sigma", mode="before")
    @classmethod
    def parse_sigma(cls, v):
        v = _number_tuple(v, float)
        # A single value is a degenerate range.
        if isinstance(v, tuple) and len(v) == 1:
            return (v[0], v[0])
        return v

    @field_validator("sigma")
    @classmethod
    def check_sigma(cls, v: Tuple[float, float]) -> Tuple[float, float]:
        lo, hi = v
        if not 0 < lo <= hi:
            raise ValueError("sigma range must satisfy 0 < lo <= hi, got {}".format(v))
        return v

    @field_validator("ksize")
    @classmethod
    def check_ksize(cls, v: int) -> int:
        if v % 2 == 0:
            raise ValueError("ksize must be odd, got {}".format(v))
        return v


def rotate90(img: Tensor, quarter_turns: int) -> Tensor:
    """Counter-clockwise rotation by quarter_turns * 90 degrees."""
    if img.ndim not in (2, 3):
        raise ShapeError("rotate90: expected h x w x ch, got {}".format(img.shape))
    if img.shape[0] != img.shape[1]:
        raise ShapeError("rotate90: image is not square: {}".format(img.shape))
    if quarter_turns not in (0, 1, 2, 3):
        raise DomainError("quarter_turns must be in 0..3, got {}".format(quarter_turns))
    return np.ascontiguousarray(np.rot90(img, k=quarter_turns, axes=(0, 1)))


def gaussian_kernel(sigma: float, ksize: int) -> Tensor:
    if not sigma > 0:
        raise DomainError("sigma must be > 0, got {}".format(sigma))
    if ksize < 1 or ksize % 2 == 0:
        raise DomainError("ksize must be a positive odd integer, got {}".format(ksize))
    offsets = np.arange(ksize) - ksize // 2
    weights = np.exp(-(offsets**2) / (2.0 * sigma**2))
    return weights / weights.sum()


def gaussian_blur(img: Tensor, sigma: float, ksize: int) -> Tensor:
    """
    Separable blur of each channel with reflect (half-sample symmetric)
    borders, which keeps constant images constant and preserves the mean.
    """
    if img.ndim not in (2, 3):
        raise ShapeError("gaussian_blur: expected h x w x ch, got {}".format(img.shape))
    kernel = gaussian_kernel(sigma, ksize)
    if ksize > min(img.shape[0], img.shape[1]):
        raise DomainError(
            "ksize {} exceeds image size {}x{}".format(ksize, img.shape[0], img.shape[1])
        )
    out = correlate1d(as_tensor(img), kernel, axis=0, mode="reflect")
    return correlate1d(out, kernel, axis=1, mode="reflect")


def _augment_sample(sample: Tensor, rng: Rng, policy: AugmentPolicy) -> Tensor:
    g = rng.generator
    kind = policy.kind
    if kind == "compose":
        kind = "rotate90" if g.random() < 0.5 else "gaussian_blur"

    if kind == "identity":
        return sample.copy()
    if kind == "additive_noise":
        return sample + g.normal(0.0, policy.noise_std, size=sample.shape)
    if kind == "rotate90":
        return rotate90(sample, int(g.choice(policy.turns)))
    lo, hi = policy.sigma
    return gaussian_blur(sample, float(g.uniform(lo, hi)), policy.ksize)


def make_view_pair(
    x: Tensor,
    rng: Rng,
    policy: AugmentPolicy,
    sample_keys: Optional[Sequence[int]] = None,
) -> Tuple[Tensor, Tensor]:
    """
    (clean view, augmented view) of a batch.

    :param sample_keys: One stream key per sample (dataset indices in
        training); defaults to the row positions.
    """
    x = as_tensor(x)
    if policy.kind in IMAGE_KINDS and x.ndim != 4:
        raise ShapeError(
            "augment kind {} needs n x h x w x ch images, got {}".format(policy.kind, x.shape)
        )
    if sample_keys is None:
        sample_keys = range(len(x))
    elif len(sample_keys) != len(x):
        raise ShapeError("{} sample keys for {} samples".format(len(sample_keys), len(x)))

    view1 = x.copy()
    if policy.kind == "identity":
        return view1, x.copy()
    view2 = np.empty_like(x)
    for i, key in enumerate(sample_keys):
        view2[i] = _augment_sample(x[i], rng.derive(int(key)), policy)
    return view1, view2
