"""Unit tests for checkpoint writing, reading and encoder transfer."""

import tempfile
import unittest
from pathlib import Path

import torch

from edgeseg.checkpoint import (
    load_encoder_checkpoint,
    load_model_checkpoint,
    read_checkpoint,
    save_checkpoint,
)
from edgeseg.errors import CheckpointError
from edgeseg.network import Mode, NetworkConfig, build_model

TINY = NetworkConfig(width_multiplier=0.0625, blocks=(1, 1, 1, 1))


def _model(mode: Mode = Mode.FULL, seed: int = 0):
    torch.manual_seed(seed)
    return build_model(TINY, mode)


class TestCheckpoint(unittest.TestCase):
    def setUp(self) -> None:
        tmp = tempfile.TemporaryDirectory()
        self.addCleanup(tmp.cleanup)
        self.dir = Path(tmp.name)

    def _save(self, model, name: str = "ckpt.pt", iteration: int = 7) -> Path:
        return save_checkpoint(self.dir / name, model, iteration)

    def test_round_trip(self) -> None:
        model = _model()
        path = self._save(model)
        restored, container = load_model_checkpoint(path)
        self.assertEqual(container["iteration"], 7)
        self.assertEqual(container["mode"], "full")
        for (name, a), b in zip(model.state_dict().items(), restored.state_dict().values()):
            self.assertTrue(torch.equal(a, b), name)
        self.assertFalse((self.dir / "ckpt.pt.tmp").exists())

    def test_encoder_self_load_is_complete(self) -> None:
        path = self._save(_model(seed=1))
        target = _model(seed=2)
        report = load_encoder_checkpoint(target, path, strict=True)
        self.assertEqual(report.counts, (len(target.encoder_state()), 0))
        self.assertEqual(report.unexpected, [])
        for name, tensor in _model(seed=1).encoder_state().items():
            self.assertTrue(torch.equal(target.encoder_state()[name], tensor), name)

    def test_decoder_untouched(self) -> None:
        path = self._save(_model(seed=1))
        target = _model(seed=2)
        before = {k: v.clone() for k, v in target.state_dict().items() if not k.startswith("encoder.")}
        load_encoder_checkpoint(target, path)
        after = target.state_dict()
        for name, tensor in before.items():
            self.assertTrue(torch.equal(after[name], tensor), name)

    def test_pretrain_encoder_transfers_to_full(self) -> None:
        source = _model(Mode.PRETRAIN, seed=3)
        path = self._save(source)
        target = _model(Mode.FULL, seed=4)
        report = load_encoder_checkpoint(target, path, strict=True)
        self.assertEqual(report.counts[1], 0)
        for name, tensor in source.encoder_state().items():
            self.assertTrue(torch.equal(target.encoder_state()[name], tensor), name)

    def test_renamed_tensor_skipped(self) -> None:
        path = self._save(_model(seed=1))
        container = torch.load(path, weights_only=False)
        name = "encoder.stem.0.weight"
        container["tensors"]["encoder.stem.renamed"] = container["tensors"].pop(name)
        container["meta"]["encoder.stem.renamed"] = container["meta"].pop(name)
        torch.save(container, path)

        target = _model(seed=2)
        report = load_encoder_checkpoint(target, path)
        self.assertEqual(report.skipped, [name])
        self.assertEqual(report.unexpected, ["encoder.stem.renamed"])
        self.assertEqual(report.counts[0], len(target.encoder_state()) - 1)

        with self.assertRaises(CheckpointError) as ctx:
            load_encoder_checkpoint(_model(seed=2), path, strict=True)
        self.assertIn(name, ctx.exception.names)

    def test_width_mismatch_skips_everything(self) -> None:
        path = self._save(_model())
        wider = build_model(NetworkConfig(width_multiplier=0.125, blocks=(1, 1, 1, 1)))
        report = load_encoder_checkpoint(wider, path)
        self.assertLess(report.counts[0], report.counts[1])
        with self.assertRaises(CheckpointError):
            load_encoder_checkpoint(wider, path, strict=True)

    def test_metadata_mismatch(self) -> None:
        path = self._save(_model())
        container = torch.load(path, weights_only=False)
        container["meta"]["encoder.stem.0.weight"]["shape"] = [1]
        torch.save(container, path)
        with self.assertRaises(CheckpointError) as ctx:
            read_checkpoint(path)
        self.assertEqual(ctx.exception.names, ["encoder.stem.0.weight"])

    def test_corrupt_file(self) -> None:
        path = self.dir / "bad.pt"
        path.write_bytes(b"not a checkpoint at all")
        with self.assertRaises(CheckpointError):
            read_checkpoint(path)

    def test_foreign_container(self) -> None:
        path = self.dir / "other.pt"
        torch.save({"weights": torch.zeros(2)}, path)
        with self.assertRaises(CheckpointError):
            read_checkpoint(path)

    def test_missing_file(self) -> None:
        with self.assertRaises(FileNotFoundError):
            read_checkpoint(self.dir / "missing.pt")


if __name__ == "__main__":
    unittest.main()
