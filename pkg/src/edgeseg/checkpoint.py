"""Checkpoint container: named tensors with metadata, topology hashes and training state.

A checkpoint is one ``torch.save`` file holding a dict::

    format          "edgeseg-checkpoint"
    version         1
    mode            "full" | "pretrain"
    iteration       optimizer steps taken
    topology_hash   hash of the whole network topology
    encoder_hash    hash of the encoder topology only
    network         NetworkConfig as a dict
    tensors         {name: tensor}
    meta            {name: {"shape": [...], "dtype": "torch.float32"}}
    optimizer       optimizer state dict, or None

:func:`load_encoder_checkpoint` copies matching encoder tensors into a model,
which is how a pretrained encoder is transferred to a full-mode network.
"""

import logging
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import torch

from edgeseg.errors import CheckpointError
from edgeseg.network import Mode, NetworkConfig, SegmentationNetwork

logger = logging.getLogger(__name__)

FORMAT_TAG = "edgeseg-checkpoint"
FORMAT_VERSION = 1


@dataclass
class LoadReport:
    """Outcome of :func:`load_encoder_checkpoint`."""

    loaded: list[str] = field(default_factory=list)
    skipped: list[str] = field(default_factory=list)
    unexpected: list[str] = field(default_factory=list)

    @property
    def counts(self) -> tuple[int, int]:
        return len(self.loaded), len(self.skipped)


def save_checkpoint(
    path: str | Path,
    model: SegmentationNetwork,
    iteration: int,
    optimizer_state: dict[str, Any] | None = None,
) -> Path:
    """Write a checkpoint for ``model`` at ``iteration``.

    The file is written to a temporary name and renamed, so a crash never
    leaves a half-written checkpoint under the final name.

    :raises OSError: If the file cannot be written.
    """
    path = Path(path)
    tensors = {name: t.detach().cpu().clone() for name, t in model.state_dict().items()}
    container = {
        "format": FORMAT_TAG,
        "version": FORMAT_VERSION,
        "mode": model.mode.value,
        "iteration": int(iteration),
        "topology_hash": model.topology_hash(),
        "encoder_hash": model.topology_hash("encoder."),
        "network": model.config.as_dict(),
        "tensors": tensors,
        "meta": {name: {"shape": list(t.shape), "dtype": str(t.dtype)} for name, t in tensors.items()},
        "optimizer": optimizer_state,
    }
    tmp = path.with_name(path.name + ".tmp")
    torch.save(container, tmp)
    tmp.replace(path)
    logger.info("saved checkpoint %s (iteration %d)", path, iteration)
    return path


def read_checkpoint(path: str | Path) -> dict[str, Any]:
    """Load and validate a checkpoint container.

    :raises OSError: If the file is missing or unreadable.
    :raises CheckpointError: If the file is not a checkpoint or its tensors
        disagree with their recorded shape/dtype metadata.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        container = torch.load(path, map_location="cpu", weights_only=False)
    except (pickle.UnpicklingError, EOFError, RuntimeError, ValueError, KeyError, AttributeError, TypeError) as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    if not isinstance(container, dict) or container.get("format") != FORMAT_TAG:
        raise CheckpointError(f"{path} is not an edgeseg checkpoint")
    if container.get("version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {container.get('version')}")
    bad = [
        name
        for name, t in container["tensors"].items()
        if list(t.shape) != container["meta"].get(name, {}).get("shape")
        or str(t.dtype) != container["meta"].get(name, {}).get("dtype")
    ]
    if bad:
        raise CheckpointError(f"{path}: tensors disagree with their metadata", bad)
    return container


def load_model_checkpoint(path: str | Path) -> tuple[SegmentationNetwork, dict[str, Any]]:
    """Rebuild the network stored in a checkpoint and restore every tensor.

    :returns: ``(model, container)``.
    :raises CheckpointError: If the rebuilt topology does not match the stored hash.
    """
    container = read_checkpoint(path)
    model = SegmentationNetwork(NetworkConfig.from_dict(container["network"]), Mode(container["mode"]))
    if model.topology_hash() != container["topology_hash"]:
        raise CheckpointError(f"{path}: topology hash mismatch")
    model.load_state_dict(container["tensors"], strict=True)
    return model, container


def load_encoder_checkpoint(model: SegmentationNetwork, path: str | Path, strict: bool = False) -> LoadReport:
    """Copy encoder tensors from a checkpoint into ``model``.

    Every encoder tensor whose name and shape match is overwritten; decoder,
    PAM and edge-head tensors are untouched. Works across modes, so a
    pretrain-mode checkpoint can seed a full-mode network.

    :param model: Target network (modified in place).
    :param path: Checkpoint file.
    :param strict: Fail unless the encoder topology hash matches and every
        encoder tensor is present with the right shape.
    :returns: Encoder names loaded, encoder names skipped, and checkpoint
        encoder names the model does not have.
    :raises CheckpointError: In strict mode, listing the offending names; or if
        the file is not a checkpoint.
    """
    container = read_checkpoint(path)
    source = {k: v for k, v in container["tensors"].items() if k.startswith("encoder.")}
    target = model.encoder_state()

    report = LoadReport()
    updates: dict[str, torch.Tensor] = {}
    for name, tensor in target.items():
        stored = source.get(name)
        if stored is not None and stored.shape == tensor.shape:
            updates[name[len("encoder.") :]] = stored
            report.loaded.append(name)
        else:
            report.skipped.append(name)
    unexpected = sorted(set(source) - set(target))

    if strict:
        offending = report.skipped + unexpected
        if offending:
            raise CheckpointError("encoder tensors do not match", offending)
        if container["encoder_hash"] != model.topology_hash("encoder."):
            raise CheckpointError("encoder topology hash mismatch")

    with torch.no_grad():
        current = model.encoder.state_dict()
        for short_name, stored in updates.items():
            current[short_name].copy_(stored)
    report.unexpected = unexpected
    logger.info("loaded %d encoder tensors from %s, skipped %d", len(report.loaded), path, len(report.skipped))
    return report
