"""Online training augmentation: dense deformation from a 2x2x2 control grid, random crops.

With two control points per axis a cubic B-spline is underdetermined, so the
dense field is the order-1 B-spline (trilinear) interpolation of the control
lattice, whose corners sit on the volume corners. Every dense displacement is
therefore a convex combination of control displacements and is bounded by
``max_displacement`` per component.

Warping samples ``input(p + displacement(p))``: trilinear for images, nearest
neighbour for labels, clamping out-of-grid samples to the border voxel.
"""

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from edgeseg.errors import ContractError
from edgeseg.volume import Volume

CONTROL_GRID = (2, 2, 2)
PATCH_SIZE = (96, 96, 32)


@dataclass(frozen=True)
class DeformationField:
    """Per-voxel displacement ``[3, nx, ny, nz]`` in voxel units."""

    displacement: np.ndarray
    control_points: np.ndarray
    max_displacement: float
    seed: int | None = None
    control_grid: tuple[int, int, int] = CONTROL_GRID

    @property
    def shape(self) -> tuple[int, int, int]:
        return tuple(self.displacement.shape[1:])


@dataclass(frozen=True)
class Patch:
    """A training crop and where it came from in the (padded) parent volume."""

    image: np.ndarray
    label: np.ndarray
    source_origin: tuple[int, int, int]


def field_from_control_points(shape: tuple[int, int, int], control_points: np.ndarray) -> np.ndarray:
    """Interpolate a ``[3, 2, 2, 2]`` control lattice to a dense ``[3, *shape]`` field.

    :raises ContractError: If any axis is shorter than 2 or the lattice shape is wrong.
    """
    control_points = np.asarray(control_points, dtype=np.float64)
    if control_points.shape != (3, *CONTROL_GRID):
        raise ContractError(f"control points must have shape (3, 2, 2, 2), got {control_points.shape}")
    if len(shape) != 3 or min(shape) < 2:
        raise ContractError(f"deformation needs every axis >= 2, got {shape}")
    scale = tuple(n / c for n, c in zip(shape, CONTROL_GRID))
    dense = np.zeros((3, *shape), dtype=np.float32)
    for d in range(3):
        ndimage.zoom(control_points[d], zoom=scale, output=dense[d], order=1, mode="nearest")
    return dense


def sample_bspline_field(
    shape: tuple[int, int, int], max_displacement: float, seed: int
) -> DeformationField:
    """Draw a random dense deformation field.

    Each of the 8 control points gets a displacement drawn uniformly from
    ``[-max_displacement, max_displacement]`` per component.

    :param shape: Target volume shape, every axis >= 2.
    :param max_displacement: Bound in voxels; 0 yields the zero field.
    :param seed: Seed for the control-point draw.
    :rtype: DeformationField
    """
    rng = np.random.default_rng(seed)
    control = rng.uniform(-max_displacement, max_displacement, size=(3, *CONTROL_GRID))
    return DeformationField(
        displacement=field_from_control_points(tuple(shape), control),
        control_points=control,
        max_displacement=float(max_displacement),
        seed=seed,
    )


def warp_array(data: np.ndarray, displacement: np.ndarray, nearest: bool) -> np.ndarray:
    """Sample ``data`` at ``p + displacement(p)``; out-of-grid samples clamp to the border."""
    if displacement.shape[1:] != data.shape:
        raise ContractError(f"field shape {displacement.shape[1:]} does not match volume shape {data.shape}")
    grid = np.meshgrid(*(np.arange(n, dtype=np.float32) for n in data.shape), indexing="ij")
    coords = np.stack(grid) + displacement
    if nearest:
        return ndimage.map_coordinates(data, coords, order=0, mode="nearest").astype(data.dtype)
    return ndimage.map_coordinates(data.astype(np.float32, copy=False), coords, order=1, mode="nearest")


def warp(volume: Volume, field: DeformationField) -> Volume:
    """Deform a volume; labels use nearest neighbour and stay binary.

    :raises ContractError: If the field and volume shapes differ.
    """
    return volume.with_data(warp_array(volume.data, field.displacement, nearest=volume.is_label))


def pad_to_size(data: np.ndarray, size: tuple[int, int, int], fill: float) -> tuple[np.ndarray, tuple[int, ...]]:
    """Symmetrically pad axes shorter than ``size`` with ``fill``; returns ``(padded, pad_before)``."""
    pads = []
    for n, s in zip(data.shape, size):
        total = max(0, s - n)
        pads.append((total // 2, total - total // 2))
    if not any(before or after for before, after in pads):
        return data, (0, 0, 0)
    return np.pad(data, pads, mode="constant", constant_values=fill), tuple(p[0] for p in pads)


def _foreground_origin(label: np.ndarray, size: tuple[int, ...], rng: np.random.Generator) -> tuple[int, ...]:
    """Origin of a crop containing a randomly chosen foreground voxel."""
    fg = np.argwhere(label > 0)
    voxel = fg[rng.integers(len(fg))]
    origin = []
    for v, n, s in zip(voxel, label.shape, size):
        lo, hi = max(0, int(v) - s + 1), min(n - s, int(v))
        origin.append(int(rng.integers(lo, hi + 1)))
    return tuple(origin)


def random_crop(
    image: Volume,
    label: Volume,
    seed: int,
    size: tuple[int, int, int] = PATCH_SIZE,
    foreground_bias: float = 0.5,
) -> Patch:
    """Crop the same random sub-volume from an image and its label.

    Axes shorter than ``size`` are first padded symmetrically (image with its
    minimum, label with 0). With probability ``foreground_bias`` and when the
    label has foreground, the crop is placed to contain a random foreground
    voxel; otherwise the origin is uniform over all fitting positions.

    :param image: Image volume.
    :param label: Label volume of the same shape.
    :param seed: Seed for the origin draw.
    :param size: Crop size in voxels.
    :param foreground_bias: Probability of a foreground-centred crop.
    :rtype: Patch
    :raises ContractError: If image and label shapes differ.
    """
    if image.shape != label.shape:
        raise ContractError(f"image shape {image.shape} and label shape {label.shape} differ")
    img, _ = pad_to_size(image.data, size, float(image.data.min()))
    lab, _ = pad_to_size(label.data, size, 0)
    rng = np.random.default_rng(seed)
    if rng.random() < foreground_bias and lab.any():
        origin = _foreground_origin(lab, size, rng)
    else:
        origin = tuple(int(rng.integers(0, n - s + 1)) for n, s in zip(lab.shape, size))
    window = tuple(slice(o, o + s) for o, s in zip(origin, size))
    return Patch(image=img[window].copy(), label=lab[window].copy(), source_origin=origin)

