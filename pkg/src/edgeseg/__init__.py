"""Boundary-aware 3D prostate segmentation from MR volumes.

This package trains and applies a dilated residual encoder with a multi-scale
decoder whose pyramid attention and multi-level edge attention modules are
supervised by ground-truth boundary maps at three resolutions. It reads and
writes MetaImage volumes (PROMISE12 layout), produces synthetic ellipsoid
phantoms for self-tests, and evaluates predictions with dice, HD95, mean
surface distance and relative volume difference.

Public API
----------
- :func:`read_metaimage` / :func:`write_metaimage` -- MetaImage volume I/O.
- :func:`resample` / :func:`normalize_intensity` -- Canonical-grid preprocessing.
- :func:`make_ellipsoid_phantom` -- Synthetic image/mask pair with an exact mask.
- :func:`extract_edge_map` / :func:`edge_targets` -- Boundary maps and per-scale targets.
- :func:`build_model` -- Build the network in ``pretrain`` or ``full`` mode.
- :func:`total_loss` -- Dice plus weighted edge losses.
- :func:`train` -- Run a training mode from a resolved configuration.
- :func:`sliding_window_predict` / :func:`binarize` -- Whole-volume inference.
- :func:`evaluate_case` -- Case-level metrics.
"""

from edgeseg.edge import edge_targets, extract_edge_map
from edgeseg.inference import binarize, sliding_window_predict
from edgeseg.losses import total_loss
from edgeseg.metaimage import read_metaimage, write_metaimage
from edgeseg.metrics import evaluate_case
from edgeseg.network import build_model
from edgeseg.phantom import make_ellipsoid_phantom
from edgeseg.trainer import train
from edgeseg.volume import normalize_intensity, resample

__all__ = [
    "read_metaimage",
    "write_metaimage",
    "resample",
    "normalize_intensity",
    "make_ellipsoid_phantom",
    "extract_edge_map",
    "edge_targets",
    "build_model",
    "total_loss",
    "train",
    "sliding_window_predict",
    "binarize",
    "evaluate_case",
]
