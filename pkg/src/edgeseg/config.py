"""Parse run configuration files and resolve them against the key schema.

The config file is line-oriented UTF-8 text. ``[section]`` lines set a prefix
and ``key = value`` lines below them become ``section.key``; fully dotted
``section.key = value`` lines are accepted anywhere. Blank lines and lines
starting with ``#`` or ``;`` are ignored. Command-line flags of the form
``--section.key value`` override file values, which override defaults.

:func:`render_config` writes the resolved configuration back in the same
format; it is echoed into every run directory so a run can be reproduced from
its own record.
"""

import os
import re
from collections.abc import Callable, Iterator, Mapping
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import Any

from edgeseg.decoders import (
    decode_bool,
    decode_float,
    decode_float_list,
    decode_int,
    decode_int_list,
    encode_value,
)
from edgeseg.errors import UsageError

# Match section line: [augment]
SECTION_LINE = re.compile(r"^\[\s*([A-Za-z_][\w]*)\s*\]$")
# Match value line: max_displacement = 4   or   augment.max_displacement = 4
VALUE_LINE = re.compile(r"^([A-Za-z_][\w.]*)\s*=\s*(.*?)\s*$")
COMMENT_PREFIXES = ("#", ";")

DATA_ROOT_ENV = "EDGESEG_DATA_ROOT"


def _choice(*options: str) -> Callable[[str], str]:
    def decode(raw: str) -> str:
        value = raw.strip().lower()
        if value not in options:
            raise ValueError(f"expected one of {', '.join(options)}, got {raw!r}")
        return value

    return decode


def _text(raw: str) -> str:
    return raw.strip()


@dataclass(frozen=True)
class ConfigKey:
    """Schema entry for one dotted key."""

    default: Any
    decode: Callable[[str], Any]
    help: str


_triple_f = partial(decode_float_list, length=3)
_triple_i = partial(decode_int_list, length=3)

SCHEMA: dict[str, ConfigKey] = {
    "data.root": ConfigKey("", _text, f"Directory of training cases (default ${DATA_ROOT_ENV})."),
    "data.spacing": ConfigKey((0.625, 0.625, 1.5), _triple_f, "Canonical voxel spacing in mm (x y z)."),
    "data.normalization": ConfigKey("zscore", _choice("zscore", "none"), "Intensity normalization."),
    "data.workers": ConfigKey(1, decode_int, "Augmentation worker threads (1 = deterministic single worker)."),
    "augment.enabled": ConfigKey(True, decode_bool, "Apply online B-spline deformation."),
    "augment.max_displacement": ConfigKey(4.0, decode_float, "Control-point displacement bound in voxels."),
    "augment.foreground_bias": ConfigKey(0.5, decode_float, "Probability that a crop is centred on foreground."),
    "augment.patch_size": ConfigKey((96, 96, 32), _triple_i, "Training crop size in voxels (x y z)."),
    "augment.order": ConfigKey(
        "deform_then_crop", _choice("deform_then_crop", "crop_then_deform"), "Deformation/crop order."
    ),
    "edge.extractor": ConfigKey("surface", _choice("surface", "haar"), "Ground-truth edge extractor."),
    "network.width_multiplier": ConfigKey(1.0, decode_float, "Scale factor for every channel width."),
    "network.blocks": ConfigKey((3, 4, 23, 3), partial(decode_int_list, length=4), "Bottlenecks per encoder block."),
    "network.zero_init_residual": ConfigKey(False, decode_bool, "Zero-init the last norm scale of residual branches."),
    "loss.weights": ConfigKey((0.5, 0.8, 1.0), _triple_f, "Edge-loss weights, coarsest level first."),
    "loss.eps_dice": ConfigKey(1e-5, decode_float, "Dice smoothing constant."),
    "loss.eps_log": ConfigKey(1e-7, decode_float, "Probability clamp for cross entropy."),
    "train.max_iterations": ConfigKey(6000, decode_int, "Optimizer steps to run."),
    "train.batch_size": ConfigKey(16, decode_int, "Effective batch size per optimizer step."),
    "train.micro_batch": ConfigKey(2, decode_int, "Patches per forward/backward pass."),
    "train.seed": ConfigKey(0, decode_int, "Seed for parameters and augmentation."),
    "train.checkpoint_every": ConfigKey(500, decode_int, "Checkpoint cadence in iterations."),
    "train.lr": ConfigKey(0.0, decode_float, "Initial learning rate (0 = mode default: 0.001 full, 0.01 pretrain)."),
    "train.lr_step": ConfigKey(2000, decode_int, "Full mode: iterations between learning-rate drops."),
    "train.lr_factor": ConfigKey(10.0, decode_float, "Full mode: divisor applied at every drop."),
    "train.momentum": ConfigKey(0.9, decode_float, "Pretrain mode: SGD momentum."),
    "train.weight_decay": ConfigKey(1e-6, decode_float, "Pretrain mode: SGD weight decay."),
    "train.betas": ConfigKey((0.9, 0.999), partial(decode_float_list, length=2), "Full mode: Adam betas."),
    "train.pretrain_lr_decay": ConfigKey(
        "constant", _choice("constant", "multiplicative"), "Pretrain mode: keep lr constant or decay per epoch."
    ),
    "train.epoch_volumes": ConfigKey(50, decode_int, "Patches per epoch for the multiplicative decay."),
    "train.deterministic": ConfigKey(True, decode_bool, "Request deterministic kernels."),
    "train.device": ConfigKey("auto", _text, "Torch device (auto, cpu, cuda, cuda:N)."),
    "train.encoder_checkpoint": ConfigKey("", _text, "Full mode: pretrained encoder checkpoint to load."),
    "train.strict_encoder": ConfigKey(False, decode_bool, "Fail on any encoder tensor mismatch."),
    "train.resume": ConfigKey("", _text, "Checkpoint to resume from."),
    "infer.window": ConfigKey((96, 96, 32), _triple_i, "Sliding window size in voxels."),
    "infer.stride": ConfigKey((24, 24, 8), _triple_i, "Sliding window stride in voxels."),
    "infer.threshold": ConfigKey(0.5, decode_float, "Probability threshold for the label output."),
    "infer.lcc": ConfigKey(False, decode_bool, "Keep only the largest 6-connected component."),
    "infer.workers": ConfigKey(1, decode_int, "Threads evaluating windows."),
    "run.root": ConfigKey("runs", _text, "Directory under which run directories are created."),
    "log.level": ConfigKey("info", _choice("debug", "info", "warning", "error"), "Logging level."),
}


def keys_for_sections(*sections: str) -> list[str]:
    """Return the schema keys belonging to the given sections, in schema order."""
    return [k for k in SCHEMA if k.split(".", 1)[0] in sections]


class RunConfig(Mapping[str, Any]):
    """Read-only mapping of every schema key to its decoded value."""

    def __init__(self, values: Mapping[str, Any]) -> None:
        self._values = dict(values)

    def __getitem__(self, key: str) -> Any:
        return self._values[key]

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def section(self, name: str) -> dict[str, Any]:
        """Return ``{short_key: value}`` for one section (``train`` -> ``{"seed": 0, ...}``)."""
        prefix = name + "."
        return {k[len(prefix) :]: v for k, v in self._values.items() if k.startswith(prefix)}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """Parse config text into a flat dict of dotted keys to raw string values.

    :param text: File content.
    :type text: str
    :param source: Name used in error messages.
    :type source: str
    :returns: ``result[dotted_key] = raw_value``; later lines win.
    :rtype: dict[str, str]
    :raises UsageError: On a line that is neither a section, a value, a comment nor blank.
    """
    result: dict[str, str] = {}
    section: str | None = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith(COMMENT_PREFIXES):
            continue

        section_m = SECTION_LINE.match(line)
        if section_m:
            section = section_m.group(1)
            continue

        value_m = VALUE_LINE.match(line)
        if not value_m:
            raise UsageError(f"{source}:{lineno}: cannot parse line {line!r}")
        key, raw = value_m.group(1), value_m.group(2)
        if "." not in key:
            if section is None:
                raise UsageError(f"{source}:{lineno}: key '{key}' is outside any [section]")
            key = f"{section}.{key}"
        result[key] = raw
    return result


def parse_config_file(path: str | Path) -> dict[str, str]:
    """Parse a config file (UTF-8, optional BOM) into dotted keys and raw values.

    :param path: Path to the config file.
    :type path: str | Path
    :returns: Flat dict of dotted keys to raw strings.
    :rtype: dict[str, str]
    :raises OSError: If the file cannot be read.
    :raises UsageError: On malformed lines.
    """
    path = Path(path)
    return parse_config_text(path.read_text(encoding="utf-8-sig"), source=str(path))


def resolve_config(
    file_values: Mapping[str, str] | None = None,
    overrides: Mapping[str, str] | None = None,
    environ: Mapping[str, str] | None = None,
) -> RunConfig:
    """Merge defaults, file values and flag overrides into a :class:`RunConfig`.

    :param file_values: Raw values from :func:`parse_config_file`.
    :param overrides: Raw values from ``--dotted.key value`` flags.
    :param environ: Environment used for ``data.root``'s default (``os.environ`` if None).
    :returns: The resolved configuration.
    :rtype: RunConfig
    :raises UsageError: For unknown keys or values that do not decode; the key is named.
    """
    environ = os.environ if environ is None else environ
    values = {key: spec.default for key, spec in SCHEMA.items()}
    values["data.root"] = environ.get(DATA_ROOT_ENV, "")

    for layer in (file_values or {}, overrides or {}):
        for key, raw in layer.items():
            spec = SCHEMA.get(key)
            if spec is None:
                raise UsageError(f"unknown config key '{key}'")
            try:
                values[key] = spec.decode(raw)
            except ValueError as e:
                raise UsageError(f"bad value for '{key}': {e}") from e
    return RunConfig(values)


def render_config(config: Mapping[str, Any]) -> str:
    """Render a configuration as sorted ``[section]`` blocks of ``key = value`` lines.

    :param config: Resolved configuration.
    :returns: Text that :func:`parse_config_text` reads back to the same values.
    :rtype: str
    """
    sections: dict[str, list[str]] = {}
    for key in sorted(config):
        section, name = key.split(".", 1)
        sections.setdefault(section, []).append(f"{name} = {encode_value(config[key])}")
    blocks = [f"[{name}]\n" + "\n".join(lines) for name, lines in sorted(sections.items())]
    return "\n\n".join(blocks) + "\n"
