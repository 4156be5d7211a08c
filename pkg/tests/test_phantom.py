"""Unit tests for synthetic ellipsoid phantoms."""

import itertools
import unittest
from dataclasses import replace

import numpy as np

from edgeseg.errors import ContractError
from edgeseg.phantom import PHANTOM_SPACING, PhantomSpec, make_ellipsoid_phantom, standard_phantom_spec


def _oracle(spec: PhantomSpec) -> np.ndarray:
    mask = np.zeros(spec.shape, dtype=np.uint8)
    for p in itertools.product(*(range(n) for n in spec.shape)):
        if sum(((i - c) / r) ** 2 for i, c, r in zip(p, spec.center, spec.radii)) <= 1.0:
            mask[p] = 1
    return mask


class TestMakeEllipsoidPhantom(unittest.TestCase):
    def test_unit_sphere_has_seven_voxels(self) -> None:
        spec = PhantomSpec(shape=(5, 5, 5), center=(2.0, 2.0, 2.0), radii=(1.0, 1.0, 1.0))
        _, mask = make_ellipsoid_phantom(spec)
        self.assertEqual(int(mask.data.sum()), 7)
        self.assertEqual(mask.data[2, 2, 2], 1)
        self.assertEqual(mask.data[3, 2, 2], 1)
        self.assertEqual(mask.data[3, 3, 2], 0)

    def test_matches_brute_force_oracle(self) -> None:
        specs = [
            PhantomSpec((12, 10, 8), (6.0, 5.0, 4.0), (4.0, 3.0, 2.5)),
            PhantomSpec((9, 11, 7), (4.5, 5.2, 3.1), (3.3, 4.1, 2.0)),
            PhantomSpec((16, 16, 6), (7.0, 8.0, 2.5), (6.5, 2.0, 2.5)),
        ]
        for spec in specs:
            with self.subTest(spec=spec):
                _, mask = make_ellipsoid_phantom(spec)
                np.testing.assert_array_equal(mask.data, _oracle(spec))

    def test_noise_free_image_has_two_values(self) -> None:
        spec = PhantomSpec((10, 10, 6), (5.0, 5.0, 3.0), (3.0, 3.0, 2.0), foreground_intensity=3.0,
                           background_intensity=-1.0)
        image, mask = make_ellipsoid_phantom(spec)
        self.assertEqual(sorted(np.unique(image.data).tolist()), [-1.0, 3.0])
        np.testing.assert_array_equal(image.data == 3.0, mask.data == 1)

    def test_same_seed_is_bit_identical(self) -> None:
        spec = standard_phantom_spec(seed=5)
        a, _ = make_ellipsoid_phantom(spec)
        b, _ = make_ellipsoid_phantom(spec)
        np.testing.assert_array_equal(a.data, b.data)

    def test_noise_is_one_c_order_draw(self) -> None:
        spec = PhantomSpec((6, 5, 4), (3.0, 2.0, 2.0), (2.0, 2.0, 1.5), noise_sigma=0.2, seed=9)
        noisy, _ = make_ellipsoid_phantom(spec)
        clean, _ = make_ellipsoid_phantom(replace(spec, noise_sigma=0.0))
        expected = np.random.Generator(np.random.Philox(key=9)).normal(0.0, 0.2, size=(6, 5, 4))
        np.testing.assert_allclose(noisy.data - clean.data, expected, atol=1e-6)

    def test_different_seed_changes_noise(self) -> None:
        a, _ = make_ellipsoid_phantom(standard_phantom_spec(seed=1))
        b, _ = make_ellipsoid_phantom(standard_phantom_spec(seed=2))
        self.assertFalse(np.array_equal(a.data, b.data))

    def test_spacing_and_kinds(self) -> None:
        image, mask = make_ellipsoid_phantom(standard_phantom_spec())
        self.assertEqual(image.spacing, PHANTOM_SPACING)
        self.assertTrue(mask.is_label)
        self.assertFalse(image.is_label)
        self.assertEqual(image.shape, (112, 112, 40))

    def test_count_monotone_in_radius(self) -> None:
        counts = []
        for rx in (2.0, 2.5, 3.0, 3.5, 4.0):
            _, mask = make_ellipsoid_phantom(PhantomSpec((12, 12, 8), (6.0, 6.0, 4.0), (rx, 3.0, 2.0)))
            counts.append(int(mask.data.sum()))
        self.assertEqual(counts, sorted(counts))

    def test_out_of_bounds_rejected(self) -> None:
        with self.assertRaises(ContractError):
            make_ellipsoid_phantom(PhantomSpec((8, 8, 8), (2.0, 4.0, 4.0), (3.0, 2.0, 2.0)))

    def test_non_positive_radius_rejected(self) -> None:
        with self.assertRaises(ContractError):
            make_ellipsoid_phantom(PhantomSpec((8, 8, 8), (4.0, 4.0, 4.0), (0.0, 2.0, 2.0)))


if __name__ == "__main__":
    unittest.main()
