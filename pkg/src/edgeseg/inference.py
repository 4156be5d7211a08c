"""Whole-volume prediction with overlapping sliding windows.

Windows of ``(96, 96, 32)`` voxels are placed every ``(24, 24, 8)`` voxels,
plus one final window flush with the far end of each axis when the regular
grid leaves voxels uncovered. Axes shorter than the window are padded with
the volume minimum first. Window probabilities are summed and divided by the
per-voxel window count (uniform averaging), then the padding is cropped off.
"""

import itertools
import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import torch
from scipy import ndimage

from edgeseg.augment import pad_to_size
from edgeseg.edge import SIX_CONNECTED
from edgeseg.network import SegmentationNetwork
from edgeseg.volume import Volume, VolumeKind, normalize_intensity, resample

logger = logging.getLogger(__name__)

WINDOW = (96, 96, 32)
STRIDE = (24, 24, 8)

Predictor = Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class WindowPlan:
    window: tuple[int, int, int]
    stride: tuple[int, int, int]
    origins: tuple[tuple[int, int, int], ...]
    shape: tuple[int, int, int]
    padded_shape: tuple[int, int, int]
    pad_before: tuple[int, int, int]

    def coverage(self) -> np.ndarray:
        """Number of windows covering each voxel of the padded volume."""
        counts = np.zeros(self.padded_shape, dtype=np.int32)
        for origin in self.origins:
            counts[self.window_slices(origin)] += 1
        return counts

    def window_slices(self, origin: tuple[int, int, int]) -> tuple[slice, slice, slice]:
        return tuple(slice(o, o + w) for o, w in zip(origin, self.window))

    def crop(self, padded: np.ndarray) -> np.ndarray:
        """Remove the padding from an array shaped like the padded volume."""
        return padded[tuple(slice(b, b + n) for b, n in zip(self.pad_before, self.shape))]


def _axis_origins(dim: int, window: int, stride: int) -> list[int]:
    origins = list(range(0, dim - window + 1, stride))
    if origins[-1] + window < dim:
        origins.append(dim - window)
    return origins


def plan_windows(
    shape: tuple[int, int, int], window: tuple[int, int, int] = WINDOW, stride: tuple[int, int, int] = STRIDE
) -> WindowPlan:
    """Plan the window origins covering a volume of ``shape``.

    :param shape: Volume shape before padding.
    :param window: Window size.
    :param stride: Step between regular origins.
    :returns: Plan whose windows cover every voxel of ``padded_shape``.
    :rtype: WindowPlan
    """
    shape = tuple(int(n) for n in shape)
    padded = tuple(max(n, w) for n, w in zip(shape, window))
    pad_before = tuple((p - n) // 2 for p, n in zip(padded, shape))
    per_axis = [_axis_origins(p, w, s) for p, w, s in zip(padded, window, stride)]
    origins = tuple(itertools.product(*per_axis))
    return WindowPlan(tuple(window), tuple(stride), origins, shape, padded, pad_before)


def network_predictor(model: SegmentationNetwork, device: torch.device | str = "cpu") -> Predictor:
    """Wrap a full-mode network as ``window array -> probability array``."""
    model.eval()

    def predict(window: np.ndarray) -> np.ndarray:
        with torch.no_grad():
            x = torch.from_numpy(np.ascontiguousarray(window, dtype=np.float32))[None, None].to(device)
            return model(x).prob[0, 0].cpu().numpy()

    return predict


def stitch(
    predict: Predictor,
    data: np.ndarray,
    plan: WindowPlan,
    order: Sequence[int] | None = None,
    workers: int = 1,
) -> np.ndarray:
    """Average ``predict`` over the windows of ``plan`` on a padded array.

    Windows are evaluated in ``order`` (plan order by default); results are
    accumulated in that order by the calling thread, so the output does not
    depend on ``workers``.
    """
    order = list(range(len(plan.origins))) if order is None else list(order)
    accumulated = np.zeros(plan.padded_shape, dtype=np.float64)
    counts = np.zeros(plan.padded_shape, dtype=np.int32)

    def run(index: int) -> np.ndarray:
        return predict(data[plan.window_slices(plan.origins[index])])

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = pool.map(run, order)
            for index, prob in zip(order, results):
                _accumulate(accumulated, counts, plan, index, prob)
    else:
        for index in order:
            _accumulate(accumulated, counts, plan, index, run(index))
    return accumulated / counts


def _accumulate(accumulated, counts, plan: WindowPlan, index: int, prob: np.ndarray) -> None:
    window = plan.window_slices(plan.origins[index])
    accumulated[window] += prob
    counts[window] += 1


def sliding_window_predict(
    model: SegmentationNetwork | Predictor,
    volume: Volume,
    window: tuple[int, int, int] = WINDOW,
    stride: tuple[int, int, int] = STRIDE,
    workers: int = 1,
    order: Sequence[int] | None = None,
    device: torch.device | str = "cpu",
) -> Volume:
    """Predict a foreground probability for every voxel of a volume.

    :param model: Full-mode network, or any callable mapping a window array to
        a probability array of the same shape.
    :param volume: Normalized, resampled image.
    :param window: Window size.
    :param stride: Window stride.
    :param workers: Threads evaluating windows.
    :param order: Window evaluation order (indices into the plan).
    :param device: Device for a network model.
    :returns: Float volume of probabilities in [0, 1], same shape and metadata.
    :rtype: Volume
    """
    predict = network_predictor(model, device) if isinstance(model, SegmentationNetwork) else model
    plan = plan_windows(volume.shape, window, stride)
    padded, _ = pad_to_size(volume.data.astype(np.float32), plan.padded_shape, float(volume.data.min()))
    logger.debug("predicting %d windows over %s", len(plan.origins), plan.padded_shape)
    prob = plan.crop(stitch(predict, padded, plan, order, workers))
    return Volume(prob.astype(np.float32), volume.spacing, volume.origin, VolumeKind.IMAGE)


def largest_component(mask: np.ndarray) -> np.ndarray:
    """Keep only the largest 6-connected foreground component."""
    labels, count = ndimage.label(mask, structure=SIX_CONNECTED)
    if count <= 1:
        return mask.astype(np.uint8)
    sizes = np.bincount(labels.ravel())[1:]
    return (labels == int(np.argmax(sizes)) + 1).astype(np.uint8)


def binarize(prob: Volume, threshold: float = 0.5, largest_only: bool = False) -> Volume:
    """Threshold a probability volume (``prob >= threshold``) into a label volume.

    :param prob: Probabilities in [0, 1].
    :param threshold: Inclusive threshold.
    :param largest_only: Keep only the largest 6-connected component.
    :rtype: Volume
    """
    mask = (prob.data >= threshold).astype(np.uint8)
    if largest_only:
        mask = largest_component(mask)
    return Volume(mask, prob.spacing, prob.origin, VolumeKind.LABEL)


def predict_volume(
    model: SegmentationNetwork,
    image: Volume,
    spacing: tuple[float, float, float],
    normalization: str = "zscore",
    window: tuple[int, int, int] = WINDOW,
    stride: tuple[int, int, int] = STRIDE,
    workers: int = 1,
    device: torch.device | str = "cpu",
) -> Volume:
    """Predict on an image in its own grid.

    The image is resampled to ``spacing`` and normalized, predicted with
    sliding windows, and the probability map is resampled back to the
    image's original shape and spacing.
    """
    work = resample(image, spacing)
    if normalization == "zscore":
        work = normalize_intensity(work)
    prob = sliding_window_predict(model, work, window, stride, workers, device=device)
    back = resample(prob, image.spacing, shape=image.shape)
    return back.with_data(np.clip(back.data, 0.0, 1.0))
