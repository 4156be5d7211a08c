"""Segmentation losses: cross entropy, soft dice, edge MSE and their deep-supervision sum.

All losses take probabilities (sigmoid outputs) and binary targets of the same
shape. Rank-5 tensors ``[batch, channel, x, y, z]`` are reduced per batch item
and then averaged over the batch; any other rank is treated as a single item.
Reductions are means, so magnitudes do not depend on the patch size.

The full training objective is ``dice + sum_i w_i * edge_i`` with ``w`` ordered
coarsest edge level first.
"""

from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any

import torch

from edgeseg.errors import ContractError


@dataclass(frozen=True)
class LossWeights:
    w: tuple[float, float, float] = (0.5, 0.8, 1.0)
    eps_log: float = 1e-7
    eps_dice: float = 1e-5

    def __post_init__(self) -> None:
        if len(self.w) != 3 or any(v < 0 for v in self.w):
            raise ContractError(f"loss weights must be three values >= 0, got {self.w}")
        if self.eps_log <= 0 or self.eps_dice <= 0:
            raise ContractError("eps_log and eps_dice must be > 0")

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "LossWeights":
        return cls(
            w=tuple(config["loss.weights"]),
            eps_log=float(config["loss.eps_log"]),
            eps_dice=float(config["loss.eps_dice"]),
        )


DEFAULT_WEIGHTS = LossWeights()


def _check_shapes(pred: torch.Tensor, target: torch.Tensor, what: str) -> None:
    if pred.shape != target.shape:
        raise ContractError(f"{what}: prediction shape {tuple(pred.shape)} != target shape {tuple(target.shape)}")


def _item_dims(t: torch.Tensor) -> tuple[int, ...]:
    return tuple(range(1, t.dim())) if t.dim() == 5 else tuple(range(t.dim()))


def cross_entropy(pred: torch.Tensor, target: torch.Tensor, eps_log: float = DEFAULT_WEIGHTS.eps_log) -> torch.Tensor:
    """Binary cross entropy averaged over voxels, ``pred`` clamped to ``[eps, 1 - eps]``.

    :raises ContractError: On a shape mismatch.
    """
    _check_shapes(pred, target, "cross_entropy")
    p = pred.clamp(eps_log, 1.0 - eps_log)
    target = target.to(p.dtype)
    per_voxel = -(target * torch.log(p) + (1.0 - target) * torch.log(1.0 - p))
    return per_voxel.mean()


def dice_loss(pred: torch.Tensor, target: torch.Tensor, eps_dice: float = DEFAULT_WEIGHTS.eps_dice) -> torch.Tensor:
    """Soft dice loss ``1 - (2 sum(y p) + eps) / (sum(y^2) + sum(p^2) + eps)``.

    Two empty masks give 0 through the smoothing term.

    :raises ContractError: On a shape mismatch.
    """
    _check_shapes(pred, target, "dice_loss")
    target = target.to(pred.dtype)
    dims = _item_dims(pred)
    intersection = (pred * target).sum(dim=dims)
    denominator = (target * target).sum(dim=dims) + (pred * pred).sum(dim=dims)
    return (1.0 - (2.0 * intersection + eps_dice) / (denominator + eps_dice)).mean()


def edge_loss(pred_edge: torch.Tensor, gt_edge: torch.Tensor) -> torch.Tensor:
    """Mean squared difference between a predicted and a ground-truth edge map.

    :raises ContractError: On a shape mismatch.
    """
    _check_shapes(pred_edge, gt_edge, "edge_loss")
    return ((pred_edge - gt_edge.to(pred_edge.dtype)) ** 2).mean()


def combine_terms(dice: torch.Tensor | float, edges: Sequence[torch.Tensor | float], weights: LossWeights):
    """``dice + sum_i w_i * edges[i]``."""
    total = dice
    for w, term in zip(weights.w, edges):
        total = total + w * term
    return total


def total_loss(
    out,
    target: torch.Tensor,
    edge_targets: Sequence[torch.Tensor],
    weights: LossWeights = DEFAULT_WEIGHTS,
) -> tuple[torch.Tensor, dict[str, float]]:
    """Full-mode objective with deep edge supervision.

    :param out: :class:`~edgeseg.network.ForwardOutput` with ``prob`` and three
        ``edge_preds``, coarsest first.
    :param target: Binary segmentation target shaped like ``out.prob``.
    :param edge_targets: Three edge targets, each shaped like its prediction.
    :param weights: Edge weights and eps constants.
    :returns: ``(total, terms)`` where ``terms`` holds ``total``, ``dice``,
        ``edge1``, ``edge2``, ``edge3`` as floats for logging.
    :raises ContractError: If any prediction/target pair differs in shape.
    """
    if len(out.edge_preds) != 3 or len(edge_targets) != 3:
        raise ContractError(
            f"expected three edge predictions and targets, got {len(out.edge_preds)} and {len(edge_targets)}"
        )
    dice = dice_loss(out.prob, target, weights.eps_dice)
    edges = [edge_loss(p, t) for p, t in zip(out.edge_preds, edge_targets)]
    total = combine_terms(dice, edges, weights)
    terms = {"total": float(total.detach()), "dice": float(dice.detach())}
    terms.update({f"edge{i + 1}": float(e.detach()) for i, e in enumerate(edges)})
    return total, terms


def pretrain_loss(
    out, target: torch.Tensor, weights: LossWeights = DEFAULT_WEIGHTS
) -> tuple[torch.Tensor, dict[str, float]]:
    """Pretrain-mode objective: cross entropy of the simple decoder's output."""
    ce = cross_entropy(out.prob, target, weights.eps_log)
    value = float(ce.detach())
    return ce, {"total": value, "ce": value}
