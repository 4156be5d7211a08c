"""Volume container with physical metadata, resampling and intensity normalization.

Arrays are indexed ``[x, y, z]`` with ``z`` the slice axis. Spacing and origin
are millimetres in the same axis order. Label volumes hold only 0 and 1.
"""

import math
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy import ndimage

from edgeseg.errors import ContractError

VARIANCE_FLOOR = 1e-8


class VolumeKind(str, Enum):
    IMAGE = "image"
    LABEL = "label"


@dataclass(frozen=True)
class Volume:
    """A rank-3 scalar field plus spacing, origin and kind.

    :ivar data: Array indexed ``[x, y, z]``.
    :ivar spacing: Voxel size in mm, strictly positive.
    :ivar origin: Physical position of voxel ``(0, 0, 0)`` in mm.
    :ivar kind: :attr:`VolumeKind.IMAGE` or :attr:`VolumeKind.LABEL`.
    """

    data: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    kind: VolumeKind = field(default=VolumeKind.IMAGE)

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ContractError(f"volume data must be rank 3 with every axis >= 1, got shape {data.shape}")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or len(origin) != 3:
            raise ContractError("spacing and origin need three components")
        if not all(s > 0 for s in spacing):
            raise ContractError(f"spacing must be strictly positive, got {spacing}")
        kind = VolumeKind(self.kind)
        if kind is VolumeKind.LABEL and not is_binary(data):
            raise ContractError("label volume holds values other than 0 and 1")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "kind", kind)

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(int(n) for n in self.data.shape)

    @property
    def is_label(self) -> bool:
        return self.kind is VolumeKind.LABEL

    def with_data(self, data: np.ndarray) -> "Volume":
        """Return a copy with new data and the same metadata."""
        return replace(self, data=data)


def is_binary(data: np.ndarray) -> bool:
    """True if every value is 0 or 1."""
    return bool(np.isin(np.unique(data), (0, 1)).all())


def round_half_away(x: float) -> int:
    """Round to the nearest integer, halves away from zero."""
    return int(math.copysign(math.floor(abs(x) + 0.5), x))


def resampled_shape(
    shape: tuple[int, ...], spacing: tuple[float, ...], target_spacing: tuple[float, ...]
) -> tuple[int, int, int]:
    """Output shape of :func:`resample`: ``round(n * spacing / target)`` per axis, at least 1."""
    return tuple(max(1, round_half_away(n * s / t)) for n, s, t in zip(shape, spacing, target_spacing))


def resample(
    volume: Volume,
    target_spacing: tuple[float, float, float],
    shape: tuple[int, int, int] | None = None,
) -> Volume:
    """Resample a volume onto ``target_spacing``.

    Images are interpolated trilinearly, labels by nearest neighbour, so a
    label stays binary. The origin is kept. Samples outside the grid take the
    nearest border value, which keeps constant images constant.

    :param volume: Input volume.
    :type volume: Volume
    :param target_spacing: Output voxel size in mm, strictly positive.
    :type target_spacing: tuple[float, float, float]
    :param shape: Force this output shape instead of the one implied by the
        spacing ratio (used to map predictions back onto an input grid).
    :type shape: tuple[int, int, int] | None
    :returns: The resampled volume with ``spacing == target_spacing``.
    :rtype: Volume
    :raises ContractError: If any target spacing component is not positive.
    """
    target_spacing = tuple(float(t) for t in target_spacing)
    if len(target_spacing) != 3 or not all(t > 0 for t in target_spacing):
        raise ContractError(f"target spacing must be three positive values, got {target_spacing}")
    out_shape = tuple(shape) if shape is not None else resampled_shape(volume.shape, volume.spacing, target_spacing)
    if out_shape == volume.shape:
        data = volume.data.copy()
    else:
        factors = [o / n for o, n in zip(out_shape, volume.shape)]
        order = 0 if volume.is_label else 1
        src = volume.data if volume.is_label else volume.data.astype(np.float32, copy=False)
        data = ndimage.zoom(src, factors, order=order, mode="nearest", grid_mode=True)
        if data.shape != out_shape:
            raise ContractError(f"resampling produced {data.shape}, expected {out_shape}")
    return replace(volume, data=data, spacing=target_spacing)


def normalize_intensity(volume: Volume) -> Volume:
    """Z-score an image volume: zero mean, unit variance over all voxels.

    The variance is floored at 1e-8, so a constant image becomes all zeros.

    :param volume: Image volume.
    :type volume: Volume
    :returns: Float32 volume with the same metadata.
    :rtype: Volume
    :raises ContractError: If ``volume`` is a label.
    """
    if volume.is_label:
        raise ContractError("normalize_intensity applies to images, not labels")
    values = volume.data.astype(np.float64)
    mean = values.mean()
    std = math.sqrt(max(values.var(), VARIANCE_FLOOR))
    return volume.with_data(((values - mean) / std).astype(np.float32))
