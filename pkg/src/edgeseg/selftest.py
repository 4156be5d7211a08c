"""Phantom-based self-test behind ``edgeseg selftest``.

Each check exercises one property of the pipeline on synthetic data small
enough to run in seconds on a CPU. A check passes by returning a short
detail string and fails by raising; :func:`run_selftest` never stops early.
"""

import itertools
import logging
from collections.abc import Callable
from pathlib import Path

import numpy as np
import torch

from edgeseg.augment import sample_bspline_field, warp
from edgeseg.edge import extract_edge_map
from edgeseg.inference import plan_windows, sliding_window_predict
from edgeseg.losses import cross_entropy, dice_loss, edge_loss
from edgeseg.metaimage import read_metaimage, write_metaimage
from edgeseg.metrics import dice_score, surface_distances
from edgeseg.network import Mode, NetworkConfig, SegmentationNetwork
from edgeseg.phantom import PhantomSpec, ellipsoid_mask, make_ellipsoid_phantom, standard_phantom_spec
from edgeseg.trainer import TrainConfig, lr_schedule
from edgeseg.volume import Volume, VolumeKind, resample

logger = logging.getLogger(__name__)

CheckResult = tuple[str, bool, str]

CHECKS: list[tuple[str, Callable[[Path], str]]] = []


def check(name: str):
    """Register a self-test check under ``name``."""

    def register(fn: Callable[[Path], str]) -> Callable[[Path], str]:
        CHECKS.append((name, fn))
        return fn

    return register


class CheckFailed(AssertionError):
    pass


def _expect(condition: bool, message: str) -> None:
    if not condition:
        raise CheckFailed(message)


@check("phantom matches voxelwise ellipsoid oracle")
def _phantom_oracle(_: Path) -> str:
    spec = PhantomSpec(shape=(12, 10, 8), center=(6.0, 5.0, 4.0), radii=(4.0, 3.0, 2.5))
    _, mask = make_ellipsoid_phantom(spec)
    oracle = np.zeros(spec.shape, dtype=np.uint8)
    for p in itertools.product(*(range(n) for n in spec.shape)):
        if sum(((i - c) / r) ** 2 for i, c, r in zip(p, spec.center, spec.radii)) <= 1.0:
            oracle[p] = 1
    _expect(np.array_equal(mask.data, oracle), "phantom mask differs from the oracle")
    return f"{int(oracle.sum())} foreground voxels"


@check("3x3x3 cube has 26 edge voxels")
def _cube_edges(_: Path) -> str:
    mask = np.zeros((5, 5, 5), dtype=np.uint8)
    mask[1:4, 1:4, 1:4] = 1
    count = int(extract_edge_map(mask).sum())
    _expect(count == 26, f"expected 26 edge voxels, got {count}")
    return "26 edge voxels"


@check("MetaImage round trip")
def _metaimage_round_trip(output_dir: Path) -> str:
    image, mask = make_ellipsoid_phantom(standard_phantom_spec())
    image_path = write_metaimage(image, output_dir / "Case00.mhd")
    label_path = write_metaimage(mask, output_dir / "Case00_segmentation.mhd")
    image_back = read_metaimage(image_path, VolumeKind.IMAGE)
    mask_back = read_metaimage(label_path, VolumeKind.LABEL)
    _expect(np.array_equal(image_back.data, image.data), "image data changed")
    _expect(np.array_equal(mask_back.data, mask.data), "label data changed")
    _expect(np.allclose(image_back.spacing, image.spacing), "spacing changed")
    return f"wrote {image_path.name} and {label_path.name}"


@check("resampling keeps a constant image constant")
def _resample_constant(_: Path) -> str:
    volume = Volume(np.full((20, 20, 10), 3.5, dtype=np.float32), (1.0, 1.0, 2.0))
    there = resample(volume, (0.625, 0.625, 1.5))
    back = resample(there, volume.spacing, shape=volume.shape)
    _expect(np.allclose(there.data, 3.5) and np.allclose(back.data, 3.5), "constant value not preserved")
    return f"{volume.shape} -> {there.shape} -> {back.shape}"


@check("zero deformation is the identity")
def _zero_warp(_: Path) -> str:
    image, mask = make_ellipsoid_phantom(PhantomSpec((16, 16, 8), (8.0, 8.0, 4.0), (5.0, 5.0, 2.0), noise_sigma=0.1))
    field = sample_bspline_field(image.shape, 0.0, seed=1)
    _expect(np.allclose(warp(image, field).data, image.data), "image changed under the zero field")
    _expect(np.array_equal(warp(mask, field).data, mask.data), "label changed under the zero field")
    return "image and label unchanged"


@check("loss identities")
def _loss_identities(_: Path) -> str:
    y = torch.tensor([1.0, 1.0, 0.0, 0.0])
    for name, value in (
        ("dice", dice_loss(y, y)),
        ("cross entropy", cross_entropy(y, y)),
        ("edge", edge_loss(y, y)),
    ):
        _expect(abs(float(value)) <= 1e-6, f"{name} loss at perfect prediction is {float(value)}")
    half = dice_loss(torch.full((4,), 0.5), y, eps_dice=1e-9)
    _expect(abs(float(half) - 1.0 / 3.0) <= 1e-6, f"dice([1,1,0,0], 0.5) = {float(half)}, expected 1/3")
    return "perfect predictions give 0; dice example gives 1/3"


@check("learning-rate schedule")
def _lr_schedule(_: Path) -> str:
    config = TrainConfig(mode=Mode.FULL)
    rates = [lr_schedule(k, config) for k in (0, 2000, 4000)]
    expected = [1e-3, 1e-4, 1e-5]
    _expect(all(abs(a - b) <= 1e-15 for a, b in zip(rates, expected)), f"got {rates}")
    return "0.001 / 0.0001 / 0.00001 at 0 / 2000 / 4000"


@check("window plan for (120, 120, 40)")
def _window_plan(_: Path) -> str:
    plan = plan_windows((120, 120, 40))
    _expect(len(plan.origins) == 8, f"expected 8 windows, got {len(plan.origins)}")
    _expect(plan.coverage().min() >= 1, "some voxel is not covered")
    return "8 windows"


@check("stitching a constant predictor")
def _stub_stitching(_: Path) -> str:
    volume = Volume(np.zeros((120, 120, 40), dtype=np.float32), (1.0, 1.0, 1.0))
    prob = sliding_window_predict(lambda w: np.full(w.shape, 0.7), volume)
    _expect(np.allclose(prob.data, 0.7, atol=1e-6), "stitched output is not constant")
    return "constant 0.7 reproduced"


@check("metric symmetry")
def _metric_symmetry(_: Path) -> str:
    a = ellipsoid_mask((24, 24, 12), (11.0, 12.0, 6.0), (6.0, 5.0, 3.0))
    b = ellipsoid_mask((24, 24, 12), (13.0, 11.0, 6.0), (5.0, 6.0, 3.0))
    spacing = (0.625, 0.625, 1.5)
    _expect(dice_score(a, b) == dice_score(b, a), "dice is not symmetric")
    ab, ba = surface_distances(a, b, spacing), surface_distances(b, a, spacing)
    _expect(abs(ab.hd95 - ba.hd95) <= 1e-9 and abs(ab.msd - ba.msd) <= 1e-9, "surface distances not symmetric")
    return f"dice {dice_score(a, b):.4f}, hd95 {ab.hd95:.3f} mm"


@check("network output shapes")
def _network_shapes(_: Path) -> str:
    torch.manual_seed(0)
    model = SegmentationNetwork(NetworkConfig(width_multiplier=0.0625, blocks=(1, 1, 1, 1)), Mode.FULL)
    model.eval()
    with torch.no_grad():
        out = model(torch.randn(1, 1, 32, 32, 8))
    _expect(tuple(out.prob.shape[2:]) == (32, 32, 8), f"prob shape {tuple(out.prob.shape)}")
    expected = [(8, 8, 4), (16, 16, 8), (32, 32, 8)]
    shapes = [tuple(e.shape[2:]) for e in out.edge_preds]
    _expect(shapes == expected, f"edge shapes {shapes}")
    for t in (out.prob, *out.edge_preds):
        _expect(float(t.min()) >= 0.0 and float(t.max()) <= 1.0, "output outside [0, 1]")
    return f"edge maps {shapes}"


def run_selftest(output_dir: str | Path) -> list[CheckResult]:
    """Run every registered check.

    :param output_dir: Directory receiving the phantom MetaImage pair.
    :type output_dir: str | Path
    :returns: ``(name, passed, detail)`` per check, in registration order.
    :rtype: list[tuple[str, bool, str]]
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    results: list[CheckResult] = []
    for name, fn in CHECKS:
        try:
            results.append((name, True, fn(output_dir)))
        except Exception as e:  # noqa: BLE001
            logger.debug("check %r failed", name, exc_info=True)
            results.append((name, False, f"{type(e).__name__}: {e}"))
    return results
