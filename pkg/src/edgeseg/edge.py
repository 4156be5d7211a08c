"""Ground-truth boundary maps and the per-scale targets for edge supervision.

The default edge of a binary mask is its 6-connected inner surface: a
foreground voxel with at least one background 6-neighbour, the volume border
counting as background. :func:`haar_edge_map` is an alternative extractor
built from a single-level 3D Haar transform.

Edge targets are produced at the three supervised decoder levels. For a
``(96, 96, 32)`` patch the levels are ``(24, 24, 16)``, ``(48, 48, 32)`` and
``(96, 96, 32)``, coarsest first.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from edgeseg.errors import ContractError
from edgeseg.volume import is_binary

# Downsampling factor of each supervised level, coarsest first.
LEVEL_FACTORS: tuple[tuple[int, int, int], ...] = ((4, 4, 2), (2, 2, 1), (1, 1, 1))

SIX_CONNECTED = ndimage.generate_binary_structure(3, 1)
EXTRACTORS = ("surface", "haar")


@dataclass(frozen=True)
class EdgeMapSet:
    """Edge maps at the three supervised levels, coarsest first."""

    maps: tuple[np.ndarray, np.ndarray, np.ndarray]

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        return tuple(m.shape for m in self.maps)


def _require_binary(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask)
    if mask.ndim != 3:
        raise ContractError(f"expected a rank-3 mask, got shape {mask.shape}")
    if not is_binary(mask):
        raise ContractError("mask must be binary")
    return mask.astype(bool)


def extract_edge_map(mask: np.ndarray) -> np.ndarray:
    """Return the 6-connected inner surface of a binary mask as uint8 0/1.

    :param mask: Binary rank-3 array.
    :type mask: numpy.ndarray
    :returns: 1 where the mask is 1 and some 6-neighbour (or the border) is 0.
    :rtype: numpy.ndarray
    :raises ContractError: If the mask is not binary.
    """
    fg = _require_binary(mask)
    interior = ndimage.binary_erosion(fg, structure=SIX_CONNECTED, border_value=0)
    return (fg & ~interior).astype(np.uint8)


def downsample_edge_map(edge: np.ndarray, factor: tuple[int, int, int]) -> np.ndarray:
    """Max-pool an edge map with window = stride = ``factor``.

    A coarse voxel is set iff any fine voxel in its block is set, so thin
    edges survive.

    :raises ContractError: If a factor does not divide the matching axis.
    """
    edge = np.asarray(edge)
    if any(f < 1 or n % f for n, f in zip(edge.shape, factor)):
        raise ContractError(f"factor {tuple(factor)} does not divide shape {edge.shape}")
    (nx, ny, nz), (fx, fy, fz) = edge.shape, factor
    blocks = edge.reshape(nx // fx, fx, ny // fy, fy, nz // fz, fz)
    return blocks.max(axis=(1, 3, 5))


def haar_edge_map(mask: np.ndarray) -> np.ndarray:
    """Edge strength from a single-level 3D Haar transform, in [0, 1].

    Each 2x2x2 block is transformed with the orthonormal Haar basis; the
    magnitude of its seven high-frequency coefficients is divided by the
    largest value a binary block can reach (sqrt 2, at four foreground voxels)
    and written back to all eight voxels of the block.

    :raises ContractError: If the mask is not binary or an axis is odd.
    """
    fg = _require_binary(mask).astype(np.float64)
    if any(n % 2 for n in fg.shape):
        raise ContractError(f"haar_edge_map needs even dimensions, got {fg.shape}")
    coeffs = fg
    # one Haar step along each axis: low = (a + b) / sqrt2, high = (a - b) / sqrt2
    for axis in range(3):
        even = np.take(coeffs, range(0, coeffs.shape[axis], 2), axis=axis)
        odd = np.take(coeffs, range(1, coeffs.shape[axis], 2), axis=axis)
        coeffs = np.stack(((even + odd) / math.sqrt(2), (even - odd) / math.sqrt(2)), axis=-1)
    # coeffs: [x/2, y/2, z/2, 2, 2, 2] with index 0 = low-pass per axis
    energy = (coeffs**2).sum(axis=(-3, -2, -1)) - coeffs[..., 0, 0, 0] ** 2
    magnitude = np.sqrt(np.clip(energy, 0.0, None) / 2.0)
    magnitude = np.clip(magnitude, 0.0, 1.0)
    return np.kron(magnitude, np.ones((2, 2, 2)))


def edge_targets(label: np.ndarray, extractor: str = "surface") -> EdgeMapSet:
    """Edge maps of ``label`` at the three supervised levels.

    :param label: Binary patch whose shape is divisible by (4, 4, 2).
    :param extractor: ``surface`` or ``haar``.
    :raises ContractError: On an unknown extractor or an indivisible shape.
    """
    if extractor == "surface":
        full = extract_edge_map(label)
    elif extractor == "haar":
        full = haar_edge_map(label).astype(np.float32)
    else:
        raise ContractError(f"unknown edge extractor {extractor!r}; expected one of {EXTRACTORS}")
    return EdgeMapSet(tuple(downsample_edge_map(full, f) for f in LEVEL_FACTORS))
