"""Unit tests for case discovery, preprocessing and the patch sampler."""

import tempfile
import unittest
from pathlib import Path

import numpy as np
import torch

from edgeseg.dataset import (
    Batch,
    PatchSampler,
    Prefetcher,
    SamplerSettings,
    case_id_from_path,
    derive_seed,
    discover_cases,
    load_case,
)
from edgeseg.errors import DataError
from edgeseg.metaimage import write_metaimage
from edgeseg.phantom import PhantomSpec, make_ellipsoid_phantom

SMALL = SamplerSettings(patch_size=(16, 16, 8), max_displacement=2.0)


def _phantom_cases(n: int = 2):
    return [
        make_ellipsoid_phantom(PhantomSpec((32, 32, 16), (16.0, 16.0, 8.0), (8.0, 7.0, 4.0), noise_sigma=0.1, seed=s))
        for s in range(n)
    ]


class TestDiscovery(unittest.TestCase):
    def setUp(self) -> None:
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.dir = Path(tmp.name)

    def _touch(self, *names: str) -> None:
        for name in names:
            (self.dir / name).write_bytes(b"")

    def test_pairs_found(self) -> None:
        self._touch("Case01.mhd", "Case01_segmentation.mhd", "Case00.mha", "Case00_segmentation.mha", "notes.txt")
        cases = discover_cases(self.dir)
        self.assertEqual(list(cases), ["Case00", "Case01"])
        self.assertEqual(cases["Case01"].label.name, "Case01_segmentation.mhd")

    def test_unlabeled_image_skipped(self) -> None:
        self._touch("Case01.mhd", "Case01_segmentation.mhd", "Case02.mhd")
        with self.assertLogs("edgeseg.dataset", level="WARNING") as logs:
            cases = discover_cases(self.dir)
        self.assertEqual(list(cases), ["Case01"])
        self.assertIn("Case02.mhd", logs.output[0])

    def test_later_duplicate_wins(self) -> None:
        self._touch("Case01.mha", "Case01.mhd", "Case01_segmentation.mhd")
        self.assertEqual(discover_cases(self.dir)["Case01"].image.name, "Case01.mhd")

    def test_no_pairs(self) -> None:
        self._touch("Case01.mhd")
        with self.assertRaises(DataError):
            discover_cases(self.dir)

    def test_missing_root(self) -> None:
        with self.assertRaises(DataError):
            discover_cases(self.dir / "absent")

    def test_case_id_from_path(self) -> None:
        self.assertEqual(case_id_from_path("/data/Case07_segmentation.mhd"), "Case07")
        self.assertEqual(case_id_from_path("Case07.MHA"), "Case07")
        self.assertIsNone(case_id_from_path("Case07.raw"))

    def test_load_case_resamples(self) -> None:
        image, mask = _phantom_cases(1)[0]
        write_metaimage(image, self.dir / "Case00.mhd")
        write_metaimage(mask, self.dir / "Case00_segmentation.mhd")
        paths = discover_cases(self.dir)["Case00"]
        img, lab = load_case(paths, (1.25, 1.25, 3.0))
        self.assertEqual(img.shape, (16, 16, 8))
        self.assertEqual(lab.shape, img.shape)
        self.assertEqual(lab.spacing, (1.25, 1.25, 3.0))
        self.assertTrue(set(np.unique(lab.data)) <= {0, 1})
        self.assertAlmostEqual(float(img.data.mean()), 0.0, places=4)


class TestSampler(unittest.TestCase):
    def test_sample_shapes(self) -> None:
        sampler = PatchSampler(_phantom_cases(), SMALL, seed=3)
        batch = sampler.batch(0, 2)
        self.assertEqual(tuple(batch.images.shape), (2, 1, 16, 16, 8))
        self.assertEqual(tuple(batch.labels.shape), (2, 1, 16, 16, 8))
        self.assertEqual(
            [tuple(e.shape) for e in batch.edges], [(2, 1, 4, 4, 4), (2, 1, 8, 8, 8), (2, 1, 16, 16, 8)]
        )
        self.assertEqual(batch.images.dtype, torch.float32)
        self.assertTrue(set(torch.unique(batch.labels).tolist()) <= {0.0, 1.0})

    def test_independent_of_worker_count(self) -> None:
        cases = _phantom_cases()
        single = PatchSampler(cases, SMALL, seed=4, workers=1)
        pooled = PatchSampler(cases, SMALL, seed=4, workers=3)
        try:
            for it in (0, 5):
                a, b = single.batch(it, 4), pooled.batch(it, 4)
                self.assertTrue(torch.equal(a.images, b.images))
                self.assertTrue(torch.equal(a.labels, b.labels))
                for ea, eb in zip(a.edges, b.edges):
                    self.assertTrue(torch.equal(ea, eb))
        finally:
            pooled.close()

    def test_iterations_differ(self) -> None:
        sampler = PatchSampler(_phantom_cases(), SMALL, seed=4)
        self.assertFalse(torch.equal(sampler.batch(0, 2).images, sampler.batch(1, 2).images))

    def test_without_edges(self) -> None:
        settings = SamplerSettings(patch_size=(16, 16, 8), with_edges=False)
        self.assertEqual(PatchSampler(_phantom_cases(1), settings).batch(0, 1).edges, ())

    def test_crop_then_deform(self) -> None:
        settings = SamplerSettings(patch_size=(16, 16, 8), max_displacement=2.0, order="crop_then_deform")
        sample = PatchSampler(_phantom_cases(1), settings, seed=1).sample(0, 0)
        self.assertEqual(sample.image.shape, (16, 16, 8))
        self.assertTrue(set(np.unique(sample.label)) <= {0.0, 1.0})

    def test_no_augmentation_is_a_plain_crop(self) -> None:
        settings = SamplerSettings(patch_size=(32, 32, 16), augment=False)
        image, mask = _phantom_cases(1)[0]
        sample = PatchSampler([(image, mask)], settings).sample(0, 0)
        self.assertTrue(np.array_equal(sample.label, mask.data.astype(np.float32)))

    def test_empty_case_list(self) -> None:
        with self.assertRaises(DataError):
            PatchSampler([], SMALL)

    def test_prefetcher_matches_direct_draws(self) -> None:
        sampler = PatchSampler(_phantom_cases(), SMALL, seed=6)
        prefetch = Prefetcher(sampler, batch_size=2, start=3)
        try:
            for it in (3, 4, 5):
                self.assertTrue(torch.equal(prefetch.get().images, sampler.batch(it, 2).images))
        finally:
            prefetch.close()


class TestBatch(unittest.TestCase):
    def test_split(self) -> None:
        batch = Batch(torch.zeros(5, 1, 2, 2, 2), torch.zeros(5, 1, 2, 2, 2), (torch.zeros(5, 1, 1, 1, 1),))
        parts = list(batch.split(2))
        self.assertEqual([len(p) for p in parts], [2, 2, 1])
        self.assertEqual(tuple(parts[-1].edges[0].shape), (1, 1, 1, 1, 1))

    def test_derive_seed(self) -> None:
        self.assertEqual(derive_seed(1, 2, 3), derive_seed(1, 2, 3))
        self.assertNotEqual(derive_seed(1, 2, 3), derive_seed(1, 3, 2))


if __name__ == "__main__":
    unittest.main()
