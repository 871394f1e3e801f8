import math

import numpy as np
import pytest
from pydantic import ValidationError

from semisup.contrast.augment import (
    AugmentPolicy,
    gaussian_blur,
    gaussian_kernel,
    make_view_pair,
    rotate90,
)
from semisup.contrast.exc import DomainError, ShapeError
from semisup.contrast.numerics import Rng


@pytest.fixture
def images():
    return Rng(0).generator.random((6, 8, 8, 3))


class TestPolicy:
    def test_defaults(self):
        policy = AugmentPolicy()
        assert policy.kind == "additive_noise"
        assert policy.turns == (0, 1, 2, 3)
        assert policy.noise_std == 0.1

    def test_parses_strings(self):
        policy = AugmentPolicy(turns="1, 3", sigma="0.5")
        assert policy.turns == (1, 3)
        assert policy.sigma == (0.5, 0.5)

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"kind": "crop"},
            {"turns": (4,)},
            {"turns": ()},
            {"sigma": (2.0, 1.0)},
            {"sigma": (0.0, 1.0)},
            {"ksize": 4},
            {"noise_std": -0.1},
        ],
    )
    def test_invalid(self, kwargs):
        with pytest.raises(ValidationError):
            AugmentPolicy(**kwargs)


class TestRotate:
    def test_zero_turns(self, images):
        assert np.array_equal(rotate90(images[0], 0), images[0])

    def test_four_turns(self, images):
        img = images[0]
        out = img
        for _ in range(4):
            out = rotate90(out, 1)
        assert np.array_equal(out, img)

    def test_counter_clockwise(self):
        a, b, c, d = 1.0, 2.0, 3.0, 4.0
        img = np.array([[a, b], [c, d]])
        assert np.array_equal(rotate90(img, 1), [[b, d], [a, c]])

    def test_preserves_pixel_multiset(self, images):
        img = images[1]
        for turns in range(4):
            assert np.array_equal(np.sort(rotate90(img, turns), axis=None), np.sort(img, axis=None))

    def test_non_square(self):
        with pytest.raises(ShapeError):
            rotate90(np.zeros((2, 3, 1)), 1)

    def test_bad_turns(self):
        with pytest.raises(DomainError):
            rotate90(np.zeros((2, 2)), 4)


class TestBlur:
    def test_kernel_sums_to_one(self):
        for sigma in (0.1, 0.7, 2.0):
            assert abs(gaussian_kernel(sigma, 5).sum() - 1.0) <= 1e-12

    def test_constant_image(self):
        img = np.full((6, 6, 3), 0.37)
        assert np.allclose(gaussian_blur(img, 1.3, 5), img, atol=1e-12)

    def test_impulse(self):
        img = np.zeros((7, 7, 1))
        img[3, 3, 0] = 1.0
        k = gaussian_kernel(0.8, 3)
        out = gaussian_blur(img, 0.8, 3)
        assert np.allclose(out[2:5, 2:5, 0], np.outer(k, k), atol=1e-15)
        assert out.sum() == pytest.approx(1.0, abs=1e-12)

    def test_preserves_mean(self, images):
        img = images[2]
        assert gaussian_blur(img, 1.5, 5).mean() == pytest.approx(img.mean(), abs=1e-9)

    def test_reduces_variance(self, images):
        for img in images:
            assert gaussian_blur(img, 1.0, 3).var() <= img.var()

    @pytest.mark.parametrize("sigma,ksize", [(0.0, 3), (1.0, 4), (1.0, 9)])
    def test_invalid(self, sigma, ksize):
        with pytest.raises(DomainError):
            gaussian_blur(np.zeros((8, 8, 1)), sigma, ksize)


class TestViewPair:
    def test_identity(self, images):
        v1, v2 = make_view_pair(images, Rng(1), AugmentPolicy(kind="identity"))
        assert np.array_equal(v1, images)
        assert np.array_equal(v2, v1)

    @pytest.mark.parametrize("kind", ["rotate90", "gaussian_blur", "compose", "additive_noise"])
    def test_deterministic(self, images, kind):
        policy = AugmentPolicy(kind=kind)
        _, first = make_view_pair(images, Rng(3), policy)
        _, second = make_view_pair(images, Rng(3), policy)
        assert np.array_equal(first, second)

    def test_does_not_mutate(self, images):
        before = images.copy()
        make_view_pair(images, Rng(1), AugmentPolicy(kind="compose"))
        assert np.array_equal(images, before)

    def test_noise_magnitude(self):
        x = np.zeros((20000, 4))
        v1, v2 = make_view_pair(x, Rng(2), AugmentPolicy(noise_std=0.1))
        assert np.array_equal(v1, x)
        expected = 0.1 * math.sqrt(2 / math.pi)
        assert np.abs(v2 - v1).mean() == pytest.approx(expected, rel=0.02)

    def test_keyed_by_sample(self, images):
        policy = AugmentPolicy(kind="compose")
        _, whole = make_view_pair(images, Rng(4), policy, sample_keys=[10, 11, 12, 13, 14, 15])
        _, part = make_view_pair(images[3:], Rng(4), policy, sample_keys=[13, 14, 15])
        assert np.array_equal(whole[3:], part)

    def test_image_policy_needs_images(self):
        with pytest.raises(ShapeError):
            make_view_pair(np.zeros((4, 3)), Rng(0), AugmentPolicy(kind="rotate90"))

    def test_key_count(self, images):
        with pytest.raises(ShapeError):
            make_view_pair(images, Rng(0), AugmentPolicy(), sample_keys=[1, 2])
