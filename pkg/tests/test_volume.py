"""Unit tests for volumes, resampling and intensity normalization."""

import unittest

import numpy as np

from edgeseg.errors import ContractError
from edgeseg.volume import (
    Volume,
    VolumeKind,
    normalize_intensity,
    resample,
    resampled_shape,
    round_half_away,
)


class TestVolume(unittest.TestCase):
    def test_rejects_non_positive_spacing(self) -> None:
        with self.assertRaises(ContractError):
            Volume(np.zeros((2, 2, 2)), spacing=(1.0, 0.0, 1.0))

    def test_rejects_wrong_rank(self) -> None:
        with self.assertRaises(ContractError):
            Volume(np.zeros((2, 2)))

    def test_label_must_be_binary(self) -> None:
        with self.assertRaises(ContractError):
            Volume(np.full((2, 2, 2), 2, dtype=np.uint8), kind=VolumeKind.LABEL)

    def test_kind_from_string(self) -> None:
        v = Volume(np.zeros((2, 2, 2), dtype=np.uint8), kind="label")
        self.assertTrue(v.is_label)


class TestResample(unittest.TestCase):
    def test_shape_from_spacing_ratio(self) -> None:
        v = Volume(np.zeros((64, 64, 20), dtype=np.float32), spacing=(1.25, 1.25, 3.0))
        out = resample(v, (0.625, 0.625, 1.5))
        self.assertEqual(out.shape, (128, 128, 40))
        self.assertEqual(out.spacing, (0.625, 0.625, 1.5))

    def test_same_spacing_is_identity(self) -> None:
        data = np.random.default_rng(0).normal(size=(8, 6, 4)).astype(np.float32)
        v = Volume(data, spacing=(0.625, 0.625, 1.5), origin=(1.0, 2.0, 3.0))
        out = resample(v, (0.625, 0.625, 1.5))
        np.testing.assert_array_equal(out.data, data)
        self.assertEqual(out.origin, (1.0, 2.0, 3.0))

    def test_constant_round_trip(self) -> None:
        v = Volume(np.full((30, 25, 12), 7.25, dtype=np.float32), spacing=(0.9, 0.8, 2.2))
        there = resample(v, (0.625, 0.625, 1.5))
        back = resample(there, v.spacing, shape=v.shape)
        np.testing.assert_allclose(there.data, 7.25, atol=1e-6)
        np.testing.assert_allclose(back.data, 7.25, atol=1e-6)
        self.assertEqual(back.shape, v.shape)

    def test_label_stays_binary(self) -> None:
        mask = (np.random.default_rng(1).random((17, 13, 9)) > 0.5).astype(np.uint8)
        v = Volume(mask, spacing=(1.1, 0.7, 2.0), kind=VolumeKind.LABEL)
        out = resample(v, (0.625, 0.625, 1.5))
        self.assertTrue(set(np.unique(out.data)) <= {0, 1})
        self.assertTrue(out.is_label)

    def test_rejects_non_positive_target(self) -> None:
        v = Volume(np.zeros((4, 4, 4), dtype=np.float32))
        with self.assertRaises(ContractError):
            resample(v, (1.0, -1.0, 1.0))

    def test_minimum_size_one(self) -> None:
        self.assertEqual(resampled_shape((1, 1, 1), (0.1, 0.1, 0.1), (10.0, 10.0, 10.0)), (1, 1, 1))

    def test_round_half_away_from_zero(self) -> None:
        self.assertEqual(round_half_away(2.5), 3)
        self.assertEqual(round_half_away(3.5), 4)
        self.assertEqual(round_half_away(-2.5), -3)


class TestNormalizeIntensity(unittest.TestCase):
    def test_constant_image_becomes_zero(self) -> None:
        out = normalize_intensity(Volume(np.full((4, 4, 4), 5.0)))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_two_values(self) -> None:
        data = np.zeros((4, 4, 2))
        data[:2] = 2.0
        out = normalize_intensity(Volume(data))
        np.testing.assert_allclose(np.unique(out.data), [-1.0, 1.0], atol=1e-6)

    def test_moments(self) -> None:
        data = np.random.default_rng(2).gamma(2.0, 30.0, size=(20, 20, 10))
        out = normalize_intensity(Volume(data))
        self.assertLess(abs(float(out.data.mean(dtype=np.float64))), 1e-5)
        self.assertLess(abs(float(out.data.std(dtype=np.float64)) - 1.0), 1e-4)

    def test_idempotent(self) -> None:
        once = normalize_intensity(Volume(np.random.default_rng(3).normal(3.0, 2.0, size=(10, 10, 10))))
        twice = normalize_intensity(once)
        np.testing.assert_allclose(twice.data, once.data, atol=1e-5)

    def test_label_rejected(self) -> None:
        with self.assertRaises(ContractError):
            normalize_intensity(Volume(np.zeros((2, 2, 2), dtype=np.uint8), kind=VolumeKind.LABEL))


if __name__ == "__main__":
    unittest.main()
