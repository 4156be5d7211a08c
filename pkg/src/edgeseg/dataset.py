"""Training data: case discovery, preprocessing and the online patch sampler.

Cases follow the PROMISE12 naming: ``Case07.mhd`` is an image whose label is
``Case07_segmentation.mhd`` in the same directory. Images without a label are
skipped. When the same case id is found twice (e.g. ``.mhd`` and ``.mha``), the
later path in sorted order wins.

:class:`PatchSampler` draws augmented patches. Each draw is a pure function of
``(seed, iteration, slot)``, so batches do not depend on how many worker
threads produce them or in what order the threads finish.
"""

import logging
import re
from collections.abc import Iterator, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from edgeseg.augment import random_crop, sample_bspline_field, warp, warp_array
from edgeseg.edge import EdgeMapSet, edge_targets
from edgeseg.errors import DataError
from edgeseg.metaimage import read_metaimage
from edgeseg.volume import Volume, VolumeKind, normalize_intensity, resample

logger = logging.getLogger(__name__)

LABEL_SUFFIX = "_segmentation"
# Match a case file name: Case07.mhd or Case07_segmentation.mha
CASE_FILE = re.compile(r"^(?P<case>.+?)(?P<label>_segmentation)?\.(mhd|mha)$", re.IGNORECASE)


@dataclass(frozen=True)
class CasePaths:
    case_id: str
    image: Path
    label: Path


def case_id_from_path(path: str | Path) -> str | None:
    """Return the case id of an image or label file, or None if the name does not match."""
    m = CASE_FILE.match(Path(path).name)
    return m.group("case") if m else None


def discover_cases(root: str | Path) -> dict[str, CasePaths]:
    """Find image/label pairs under ``root`` (non-recursive).

    :param root: Data directory.
    :type root: str | Path
    :returns: Case id -> paths, ordered by case id.
    :rtype: dict[str, CasePaths]
    :raises DataError: If ``root`` is not a directory or holds no complete pair.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"data root is not a directory: {root}")
    images: dict[str, Path] = {}
    labels: dict[str, Path] = {}
    for path in sorted(root.iterdir()):
        m = CASE_FILE.match(path.name)
        if m is None or not path.is_file():
            continue
        (labels if m.group("label") else images)[m.group("case")] = path

    cases: dict[str, CasePaths] = {}
    for case_id in sorted(images):
        if case_id not in labels:
            logger.warning("skipping %s: no %s%s file", images[case_id].name, case_id, LABEL_SUFFIX)
            continue
        cases[case_id] = CasePaths(case_id, images[case_id], labels[case_id])
    if not cases:
        raise DataError(f"no image/label pairs found in {root}")
    return cases


def preprocess_case(
    image: Volume, label: Volume, spacing: tuple[float, float, float], normalization: str = "zscore"
) -> tuple[Volume, Volume]:
    """Resample an image/label pair to ``spacing`` and normalize the image."""
    image = resample(image, spacing)
    label = resample(label, spacing, shape=image.shape)
    if normalization == "zscore":
        image = normalize_intensity(image)
    return image, label


def load_case(paths: CasePaths, spacing: tuple[float, float, float], normalization: str = "zscore"):
    """Read and preprocess one case; returns ``(image, label)`` volumes."""
    image = read_metaimage(paths.image, VolumeKind.IMAGE)
    label = read_metaimage(paths.label, VolumeKind.LABEL)
    return preprocess_case(image, label, spacing, normalization)


@dataclass(frozen=True)
class SamplerSettings:
    patch_size: tuple[int, int, int] = (96, 96, 32)
    augment: bool = True
    max_displacement: float = 4.0
    foreground_bias: float = 0.5
    order: str = "deform_then_crop"
    extractor: str = "surface"
    with_edges: bool = True

    @classmethod
    def from_config(cls, config, with_edges: bool = True) -> "SamplerSettings":
        return cls(
            patch_size=tuple(config["augment.patch_size"]),
            augment=bool(config["augment.enabled"]),
            max_displacement=float(config["augment.max_displacement"]),
            foreground_bias=float(config["augment.foreground_bias"]),
            order=config["augment.order"],
            extractor=config["edge.extractor"],
            with_edges=with_edges,
        )


@dataclass
class TrainingSample:
    image: np.ndarray
    label: np.ndarray
    edges: EdgeMapSet | None


@dataclass
class Batch:
    """Stacked tensors ``[B, 1, x, y, z]``; ``edges`` holds three level tensors or is empty."""

    images: torch.Tensor
    labels: torch.Tensor
    edges: tuple[torch.Tensor, ...] = ()

    def __len__(self) -> int:
        return self.images.shape[0]

    def split(self, size: int) -> Iterator["Batch"]:
        """Yield consecutive micro-batches of at most ``size`` samples."""
        for start in range(0, len(self), size):
            stop = start + size
            yield Batch(self.images[start:stop], self.labels[start:stop], tuple(e[start:stop] for e in self.edges))

    def to(self, device: torch.device | str) -> "Batch":
        return Batch(self.images.to(device), self.labels.to(device), tuple(e.to(device) for e in self.edges))


def derive_seed(seed: int, *keys: int) -> int:
    """Independent 32-bit seed for a (seed, keys...) tuple."""
    return int(np.random.SeedSequence([seed, *keys]).generate_state(1)[0])


class PatchSampler:
    """Draws augmented training patches from preprocessed volumes."""

    def __init__(
        self,
        cases: Sequence[tuple[Volume, Volume]],
        settings: SamplerSettings = SamplerSettings(),
        seed: int = 0,
        workers: int = 1,
    ) -> None:
        if not cases:
            raise DataError("patch sampler needs at least one case")
        self.cases = list(cases)
        self.settings = settings
        self.seed = seed
        self.workers = max(1, workers)
        self._pool = ThreadPoolExecutor(self.workers) if self.workers > 1 else None

    def sample(self, iteration: int, slot: int) -> TrainingSample:
        """Draw the patch for position ``slot`` of the batch at ``iteration``."""
        s = self.settings
        rng = np.random.default_rng(derive_seed(self.seed, iteration, slot))
        image, label = self.cases[int(rng.integers(len(self.cases)))]
        field_seed, crop_seed = (int(v) for v in rng.integers(0, 2**31 - 1, size=2))

        if s.augment and s.order == "deform_then_crop":
            field = sample_bspline_field(image.shape, s.max_displacement, field_seed)
            image, label = warp(image, field), warp(label, field)
        patch = random_crop(image, label, crop_seed, s.patch_size, s.foreground_bias)
        patch_image, patch_label = patch.image, patch.label
        if s.augment and s.order == "crop_then_deform":
            field = sample_bspline_field(s.patch_size, s.max_displacement, field_seed)
            patch_image = warp_array(patch_image, field.displacement, nearest=False)
            patch_label = warp_array(patch_label, field.displacement, nearest=True)

        edges = edge_targets(patch_label, s.extractor) if s.with_edges else None
        return TrainingSample(patch_image.astype(np.float32), patch_label.astype(np.float32), edges)

    def batch(self, iteration: int, size: int) -> Batch:
        """Draw ``size`` samples for ``iteration`` and stack them."""
        if self._pool is None:
            samples = [self.sample(iteration, slot) for slot in range(size)]
        else:
            # map() yields in submission order whatever order the threads finish in
            samples = list(self._pool.map(lambda slot: self.sample(iteration, slot), range(size)))
        return collate(samples)

    def close(self) -> None:
        if self._pool is not None:
            self._pool.shutdown(wait=True)


def collate(samples: Sequence[TrainingSample]) -> Batch:
    images = torch.from_numpy(np.stack([s.image for s in samples])[:, None])
    labels = torch.from_numpy(np.stack([s.label for s in samples])[:, None])
    edges: tuple[torch.Tensor, ...] = ()
    if samples[0].edges is not None:
        edges = tuple(
            torch.from_numpy(np.stack([s.edges.maps[i] for s in samples]).astype(np.float32)[:, None])
            for i in range(3)
        )
    return Batch(images, labels, edges)


class Prefetcher:
    """Bounded look-ahead over ``sampler.batch`` for consecutive iterations.

    At most ``depth`` batches are in flight; results come back in iteration order.
    """

    def __init__(self, sampler: PatchSampler, batch_size: int, start: int, depth: int = 2) -> None:
        self.sampler = sampler
        self.batch_size = batch_size
        self.next_iteration = start
        self.depth = depth
        self._executor = ThreadPoolExecutor(1) if depth > 0 else None
        self._pending: list = []

    def _fill(self) -> None:
        while len(self._pending) < self.depth:
            it = self.next_iteration + len(self._pending)
            self._pending.append(self._executor.submit(self.sampler.batch, it, self.batch_size))

    def get(self) -> Batch:
        if self._executor is None:
            batch = self.sampler.batch(self.next_iteration, self.batch_size)
        else:
            self._fill()
            batch = self._pending.pop(0).result()
        self.next_iteration += 1
        return batch

    def close(self) -> None:
        if self._executor is not None:
            for future in self._pending:
                future.cancel()
            self._executor.shutdown(wait=True)
