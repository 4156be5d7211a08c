"""Training loops for both modes.

``pretrain`` trains encoder + simple decoder with cross entropy and SGD
(momentum 0.9, lr 0.01, weight decay 1e-6). ``full`` trains encoder + edge
attention decoder with ``dice + sum w_i edge_i`` and Adam (betas 0.9/0.999),
lr 0.001 divided by 10 every 2000 iterations.

An optimizer step covers ``batch_size`` patches, processed in micro-batches
of ``micro_batch`` patches whose gradients are accumulated.
"""

import logging
import math
import os
import random
import time
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from edgeseg.checkpoint import load_encoder_checkpoint, load_model_checkpoint, save_checkpoint
from edgeseg.dataset import Batch, PatchSampler, Prefetcher, SamplerSettings, discover_cases, load_case
from edgeseg.errors import ContractError, NonFiniteLossError, UsageError
from edgeseg.logs import TrainingLog
from edgeseg.losses import LossWeights, pretrain_loss, total_loss
from edgeseg.network import Mode, NetworkConfig, SegmentationNetwork, build_model

logger = logging.getLogger(__name__)

DEFAULT_LR = {Mode.FULL: 1e-3, Mode.PRETRAIN: 1e-2}
PRETRAIN_LR_DECAY = 1e-6


@dataclass(frozen=True)
class TrainConfig:
    mode: Mode = Mode.FULL
    lr: float = 0.0
    lr_step: int = 2000
    lr_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 1e-6
    betas: tuple[float, float] = (0.9, 0.999)
    pretrain_lr_decay: str = "constant"
    epoch_volumes: int = 50
    batch_size: int = 16
    micro_batch: int = 2
    max_iterations: int = 6000
    seed: int = 0
    checkpoint_every: int = 500
    deterministic: bool = True
    device: str = "auto"
    data_root: str = ""
    encoder_checkpoint: str = ""
    strict_encoder: bool = False
    resume: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.batch_size < 1 or self.micro_batch < 1 or self.batch_size % self.micro_batch:
            raise ContractError(
                f"micro_batch ({self.micro_batch}) must be >= 1 and divide batch_size ({self.batch_size})"
            )
        if self.lr < 0 or self.lr_step < 1 or self.lr_factor <= 0 or self.epoch_volumes < 1:
            raise ContractError("learning-rate settings must be positive")

    @property
    def base_lr(self) -> float:
        return self.lr if self.lr > 0 else DEFAULT_LR[self.mode]

    @classmethod
    def from_config(cls, config: Mapping[str, Any], mode: Mode | str) -> "TrainConfig":
        t = config
        return cls(
            mode=Mode(mode),
            lr=t["train.lr"],
            lr_step=t["train.lr_step"],
            lr_factor=t["train.lr_factor"],
            momentum=t["train.momentum"],
            weight_decay=t["train.weight_decay"],
            betas=tuple(t["train.betas"]),
            pretrain_lr_decay=t["train.pretrain_lr_decay"],
            epoch_volumes=t["train.epoch_volumes"],
            batch_size=t["train.batch_size"],
            micro_batch=t["train.micro_batch"],
            max_iterations=t["train.max_iterations"],
            seed=t["train.seed"],
            checkpoint_every=t["train.checkpoint_every"],
            deterministic=t["train.deterministic"],
            device=t["train.device"],
            data_root=t["data.root"],
            encoder_checkpoint=t["train.encoder_checkpoint"],
            strict_encoder=t["train.strict_encoder"],
            resume=t["train.resume"],
        )


def lr_schedule(iteration: int, config: TrainConfig) -> float:
    """Learning rate for the optimizer step taken at ``iteration``.

    Full mode: ``base / factor ** floor(iteration / lr_step)``. Pretrain mode:
    constant ``base``, or ``base * (1 - 1e-6) ** epoch`` with
    ``pretrain_lr_decay = multiplicative``, where an epoch is ``epoch_volumes``
    patches.

    :raises ContractError: If ``iteration`` is negative.
    """
    if iteration < 0:
        raise ContractError(f"iteration must be >= 0, got {iteration}")
    base = config.base_lr
    if config.mode is Mode.FULL:
        return base / config.lr_factor ** (iteration // config.lr_step)
    if config.pretrain_lr_decay == "multiplicative":
        epoch = iteration * config.batch_size // config.epoch_volumes
        return base * (1.0 - PRETRAIN_LR_DECAY) ** epoch
    return base


@dataclass
class TrainState:
    model: SegmentationNetwork
    optimizer: torch.optim.Optimizer
    config: TrainConfig
    loss_weights: LossWeights = field(default_factory=LossWeights)
    iteration: int = 0
    device: torch.device = field(default_factory=lambda: torch.device("cpu"))
    running: dict[str, float] = field(default_factory=dict)
    last_terms: dict[str, float] = field(default_factory=dict)
    lr_override: float | None = None

    def update_running(self, terms: Mapping[str, float], momentum: float = 0.98) -> None:
        for name, value in terms.items():
            previous = self.running.get(name)
            self.running[name] = value if previous is None else momentum * previous + (1 - momentum) * value


def resolve_device(name: str) -> torch.device:
    if name == "auto":
        return torch.device("cuda" if torch.cuda.is_available() else "cpu")
    return torch.device(name)


def seed_everything(seed: int, deterministic: bool) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        os.environ.setdefault("CUBLAS_WORKSPACE_CONFIG", ":4096:8")
        torch.backends.cudnn.benchmark = False
        torch.backends.cudnn.deterministic = True
        torch.use_deterministic_algorithms(True, warn_only=True)


def make_optimizer(model: SegmentationNetwork, config: TrainConfig) -> torch.optim.Optimizer:
    lr = lr_schedule(0, config)
    if config.mode is Mode.PRETRAIN:
        return torch.optim.SGD(model.parameters(), lr=lr, momentum=config.momentum, weight_decay=config.weight_decay)
    return torch.optim.Adam(model.parameters(), lr=lr, betas=config.betas)


def _check_finite(terms: Mapping[str, float], iteration: int) -> None:
    for name, value in terms.items():
        if not math.isfinite(value):
            raise NonFiniteLossError(name, iteration, value)


def train_step(state: TrainState, batch: Batch) -> TrainState:
    """Run one optimizer step over ``batch`` (one effective batch).

    Gradients of ``len(batch) / micro_batch`` micro-batches are accumulated,
    each loss weighted by its share of the batch, then one step is taken with
    the scheduled learning rate (or ``state.lr_override``).

    :raises NonFiniteLossError: If any loss term is NaN or infinite; names the
        term and the iteration.
    """
    model, optimizer, config = state.model, state.optimizer, state.config
    model.train()
    optimizer.zero_grad(set_to_none=True)
    n = len(batch)
    sums: dict[str, float] = {}
    for micro in batch.split(config.micro_batch):
        micro = micro.to(state.device)
        out = model(micro.images)
        if config.mode is Mode.FULL:
            loss, terms = total_loss(out, micro.labels, micro.edges, state.loss_weights)
        else:
            loss, terms = pretrain_loss(out, micro.labels, state.loss_weights)
        _check_finite(terms, state.iteration)
        (loss * (len(micro) / n)).backward()
        for name, value in terms.items():
            sums[name] = sums.get(name, 0.0) + value * len(micro) / n

    lr = state.lr_override if state.lr_override is not None else lr_schedule(state.iteration, config)
    for group in optimizer.param_groups:
        group["lr"] = lr
    optimizer.step()
    state.iteration += 1
    state.last_terms = {"lr": lr, **sums}
    state.update_running(sums)
    return state


def build_state(config: TrainConfig, network: NetworkConfig, loss_weights: LossWeights) -> TrainState:
    """Seed, build the model for ``config.mode`` and its optimizer, and apply resume/transfer."""
    seed_everything(config.seed, config.deterministic)
    device = resolve_device(config.device)
    iteration = 0
    optimizer_state = None
    if config.resume:
        model, container = load_model_checkpoint(config.resume)
        if model.mode is not config.mode:
            raise UsageError(f"cannot resume a {model.mode.value} checkpoint in {config.mode.value} mode")
        iteration = container["iteration"]
        optimizer_state = container["optimizer"]
        logger.info("resuming from %s at iteration %d", config.resume, iteration)
    else:
        model = build_model(network, config.mode)
        if config.encoder_checkpoint:
            load_encoder_checkpoint(model, config.encoder_checkpoint, strict=config.strict_encoder)
    model.to(device)
    optimizer = make_optimizer(model, config)
    if optimizer_state is not None:
        optimizer.load_state_dict(optimizer_state)
    return TrainState(model, optimizer, config, loss_weights, iteration=iteration, device=device)


def checkpoint_path(run_dir: Path, iteration: int) -> Path:
    return run_dir / f"checkpoint_{iteration:06d}.pt"


def run_training(state: TrainState, sampler: PatchSampler, run_dir: str | Path) -> Path:
    """Step ``state`` up to ``max_iterations`` and return the final checkpoint path.

    Writes ``train_log.jsonl`` and checkpoints every ``checkpoint_every``
    iterations plus the final one. A fresh run also saves the initial
    parameters as iteration 0.

    :raises OSError: If a checkpoint or the log cannot be written.
    """
    config = state.config
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)

    def save() -> Path:
        return save_checkpoint(
            checkpoint_path(run_dir, state.iteration), state.model, state.iteration, state.optimizer.state_dict()
        )

    final = save() if state.iteration == 0 else checkpoint_path(run_dir, state.iteration)
    if state.iteration >= config.max_iterations:
        if not final.exists():
            final = save()
        return final

    prefetch = Prefetcher(sampler, config.batch_size, start=state.iteration)
    try:
        with TrainingLog(run_dir / "train_log.jsonl") as log:
            while state.iteration < config.max_iterations:
                started = time.perf_counter()
                train_step(state, prefetch.get())
                record = {"iteration": state.iteration, **state.last_terms}
                record["wall_time"] = time.perf_counter() - started
                log.write(record)
                if state.iteration % 50 == 0 or state.iteration == config.max_iterations:
                    logger.info(
                        "iteration %d lr %.3g loss %.4f", state.iteration, record["lr"], state.running.get("total", 0.0)
                    )
                if state.iteration % config.checkpoint_every == 0 or state.iteration == config.max_iterations:
                    final = save()
    finally:
        prefetch.close()
    return final


def load_training_cases(config: TrainConfig, spacing, normalization: str):
    """Read and preprocess every case under ``config.data_root``.

    :raises UsageError: If no data root is configured.
    :raises DataError: If the root holds no image/label pairs.
    """
    if not config.data_root:
        raise UsageError("no data root: set data.root or $EDGESEG_DATA_ROOT")
    cases = discover_cases(config.data_root)
    logger.info("loading %d cases from %s", len(cases), config.data_root)
    return [load_case(paths, spacing, normalization) for paths in cases.values()]


def train(run_config: Mapping[str, Any], mode: Mode | str, run_dir: str | Path) -> Path:
    """Train in ``mode`` as described by a resolved run config.

    :param run_config: Resolved :class:`~edgeseg.config.RunConfig`.
    :param mode: ``pretrain`` or ``full``.
    :param run_dir: Directory for checkpoints and the training log.
    :returns: Path of the final checkpoint.
    :raises DataError: If the data root holds no cases.
    :raises OSError: If checkpoints cannot be written.
    """
    config = TrainConfig.from_config(run_config, mode)
    cases = load_training_cases(config, run_config["data.spacing"], run_config["data.normalization"])
    settings = SamplerSettings.from_config(run_config, with_edges=config.mode is Mode.FULL)
    sampler = PatchSampler(cases, settings, seed=config.seed, workers=run_config["data.workers"])
    state = build_state(config, NetworkConfig.from_config(run_config), LossWeights.from_config(run_config))
    try:
        return run_training(state, sampler, run_dir)
    finally:
        sampler.close()
