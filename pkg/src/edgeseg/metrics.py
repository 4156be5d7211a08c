"""Case-level evaluation metrics: dice, HD95, mean surface distance and relative volume difference.

Distances are in millimeters. Surfaces are the 6-connected boundary voxels of
each mask (see :func:`edgeseg.edge.extract_edge_map`). For every surface voxel
of one mask the distance to the nearest surface voxel of the other mask is
taken; both directions are pooled, HD95 is their 95th percentile (linear
interpolation) and MSD their mean.

Distance metrics are undefined when either mask is empty; they are reported
as ``None`` rather than infinity.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from edgeseg.edge import extract_edge_map
from edgeseg.errors import ContractError
from edgeseg.volume import Volume

logger = logging.getLogger(__name__)

HD_PERCENTILE = 95.0


@dataclass(frozen=True)
class SurfaceDistances:
    hd95: float
    msd: float


@dataclass(frozen=True)
class MetricsReport:
    """Metrics for one case; ``None`` marks a value that is not applicable."""

    case_id: str
    dice: float
    hd95: float | None
    msd: float | None
    rvd: float | None

    def as_dict(self) -> dict:
        return asdict(self)


def _mask(v: Volume | np.ndarray) -> np.ndarray:
    data = v.data if isinstance(v, Volume) else np.asarray(v)
    return data.astype(bool)


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ContractError(f"mask shapes differ: {a.shape} != {b.shape}")


def dice_score(a: Volume | np.ndarray, b: Volume | np.ndarray) -> float:
    """``2|A∩B| / (|A| + |B|)``, or 1.0 when both masks are empty.

    :raises ContractError: On a shape mismatch.
    """
    a, b = _mask(a), _mask(b)
    _check_same_shape(a, b)
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(a, b).sum()) / total


def directed_surface_distances(
    source: np.ndarray, target: np.ndarray, spacing: tuple[float, float, float]
) -> np.ndarray:
    """Distance (mm) from each surface voxel of ``source`` to the surface of ``target``."""
    source_surface = extract_edge_map(source.astype(np.uint8)).astype(bool)
    target_surface = extract_edge_map(target.astype(np.uint8)).astype(bool)
    distance_map = ndimage.distance_transform_edt(~target_surface, sampling=spacing)
    return distance_map[source_surface]


def surface_distances(
    a: Volume | np.ndarray, b: Volume | np.ndarray, spacing: tuple[float, float, float]
) -> SurfaceDistances | None:
    """Symmetric surface distances between two masks.

    :param a: First mask.
    :param b: Second mask, same shape.
    :param spacing: Voxel size in mm.
    :returns: HD95 and mean surface distance, or None if either mask is empty.
    :rtype: SurfaceDistances | None
    :raises ContractError: On a shape mismatch.
    """
    a, b = _mask(a), _mask(b)
    _check_same_shape(a, b)
    if not a.any() or not b.any():
        return None
    pooled = np.concatenate(
        [directed_surface_distances(a, b, spacing), directed_surface_distances(b, a, spacing)]
    )
    hd95 = float(np.percentile(pooled, HD_PERCENTILE, method="linear"))
    return SurfaceDistances(hd95=hd95, msd=float(pooled.mean()))


def relative_volume_difference(pred: Volume | np.ndarray, gt: Volume | np.ndarray) -> float | None:
    """``(|pred| - |gt|) / |gt| * 100``, or None for an empty ground truth."""
    pred, gt = _mask(pred), _mask(gt)
    gt_count = int(gt.sum())
    if gt_count == 0:
        return None
    return (int(pred.sum()) - gt_count) / gt_count * 100.0


def evaluate_case(pred: Volume, gt: Volume, case_id: str = "") -> MetricsReport:
    """Compute every metric for one predicted/ground-truth label pair.

    :param pred: Predicted label volume.
    :param gt: Ground-truth label volume on the same grid.
    :param case_id: Identifier stored in the report.
    :rtype: MetricsReport
    :raises ContractError: If shapes or spacings differ.
    """
    if pred.shape != gt.shape:
        raise ContractError(f"{case_id or 'case'}: prediction shape {pred.shape} != ground truth shape {gt.shape}")
    if not np.allclose(pred.spacing, gt.spacing):
        raise ContractError(
            f"{case_id or 'case'}: prediction spacing {pred.spacing} != ground truth spacing {gt.spacing}"
        )
    distances = surface_distances(pred, gt, gt.spacing)
    if distances is None:
        logger.warning("%s: empty mask, surface distances not applicable", case_id or "case")
    return MetricsReport(
        case_id=case_id,
        dice=dice_score(pred, gt),
        hd95=distances.hd95 if distances else None,
        msd=distances.msd if distances else None,
        rvd=relative_volume_difference(pred, gt),
    )
