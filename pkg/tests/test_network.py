"""Unit tests for the encoder, both decoders and the assembled network."""

import unittest

import torch

from edgeseg.errors import ShapeError
from edgeseg.network import (
    Mode,
    NetworkConfig,
    SegmentationNetwork,
    SimpleDecoder,
    build_encoder,
    build_model,
    count_parameters,
)

TINY = NetworkConfig(width_multiplier=0.0625, blocks=(1, 1, 1, 1))


def _model(mode: Mode = Mode.FULL, seed: int = 0) -> SegmentationNetwork:
    torch.manual_seed(seed)
    return build_model(TINY, mode)


class TestShapes(unittest.TestCase):
    def test_full_mode_shapes(self) -> None:
        model = _model()
        with torch.no_grad():
            out = model(torch.randn(1, 1, 48, 48, 16))
        self.assertEqual(tuple(out.prob.shape), (1, 1, 48, 48, 16))
        self.assertEqual(
            [tuple(e.shape) for e in out.edge_preds],
            [(1, 1, 12, 12, 8), (1, 1, 24, 24, 16), (1, 1, 48, 48, 16)],
        )

    def test_full_size_patch(self) -> None:
        model = _model()
        with torch.no_grad():
            out = model(torch.randn(1, 1, 96, 96, 32))
        self.assertEqual(tuple(out.prob.shape[2:]), (96, 96, 32))
        self.assertEqual([tuple(e.shape[2:]) for e in out.edge_preds], [(24, 24, 16), (48, 48, 32), (96, 96, 32)])

    def test_outputs_are_probabilities(self) -> None:
        model = _model()
        with torch.no_grad():
            out = model(torch.randn(2, 1, 32, 32, 8) * 3.0)
        for t in (out.prob, *out.edge_preds):
            self.assertGreaterEqual(float(t.min()), 0.0)
            self.assertLessEqual(float(t.max()), 1.0)

    def test_pretrain_mode_has_no_edges(self) -> None:
        model = _model(Mode.PRETRAIN)
        with torch.no_grad():
            out = model(torch.randn(1, 1, 48, 48, 16))
        self.assertEqual(tuple(out.prob.shape), (1, 1, 48, 48, 16))
        self.assertEqual(out.edge_preds, ())

    def test_encoder_feature_shapes(self) -> None:
        torch.manual_seed(0)
        encoder = build_encoder(TINY)
        with torch.no_grad():
            feats = encoder(torch.randn(1, 1, 96, 96, 32))
        self.assertEqual(tuple(feats.t0.shape), (1, 4, 48, 48, 32))
        self.assertEqual(tuple(feats.e1.shape), (1, 16, 24, 24, 16))
        self.assertEqual(tuple(feats.e4.shape), (1, 128, 12, 12, 8))

    def test_illegal_input_shape(self) -> None:
        model = _model()
        for shape in ((50, 48, 16), (48, 48, 6), (4, 8, 4)):
            with self.subTest(shape=shape), self.assertRaises(ShapeError):
                model(torch.zeros(1, 1, *shape))


class TestTraining(unittest.TestCase):
    def test_gradients_reach_every_parameter(self) -> None:
        model = _model()
        model.train()
        torch.manual_seed(1)
        out = model(torch.randn(2, 1, 32, 32, 8))
        loss = out.prob.mean() + sum(e.mean() for e in out.edge_preds)
        loss.backward()
        zero = total = 0
        for name, p in model.named_parameters():
            self.assertIsNotNone(p.grad, name)
            self.assertTrue(torch.isfinite(p.grad).all(), name)
            zero += int((p.grad == 0).sum())
            total += p.numel()
        self.assertLess(zero / total, 0.05)

    def test_forward_is_deterministic(self) -> None:
        model = _model()
        x = torch.randn(1, 1, 32, 32, 8)
        with torch.no_grad():
            a, b = model(x), model(x)
        self.assertTrue(torch.equal(a.prob, b.prob))
        for ea, eb in zip(a.edge_preds, b.edge_preds):
            self.assertTrue(torch.equal(ea, eb))

    def test_coarse_levels_pass_ungated(self) -> None:
        model = _model()
        model.eval()
        decoder = model.decoder
        c3 = decoder.classifier.in_channels - 3
        with torch.no_grad():
            # Classifier inputs are [gated finest, edge1 up, edge2 up, edge3].
            decoder.classifier.weight[:, c3 : c3 + 2] = 0.0
        x = torch.randn(1, 1, 32, 32, 8)
        for level in (0, 1):
            head = decoder.mleam.heads[level]
            outs = []
            for bias in (-50.0, 50.0):
                with torch.no_grad():
                    head.weight.zero_()
                    head.bias.fill_(bias)
                    outs.append(model(x))
            with self.subTest(level=level):
                self.assertFalse(torch.equal(outs[0].edge_preds[level], outs[1].edge_preds[level]))
                torch.testing.assert_close(outs[0].prob, outs[1].prob, rtol=0.0, atol=0.0)

    def test_edge_attention_runs_once_per_forward(self) -> None:
        model = _model()
        calls = []
        model.decoder.mleam.register_forward_hook(lambda *_: calls.append(1))
        with torch.no_grad():
            out = model(torch.randn(1, 1, 32, 32, 8))
        self.assertEqual(len(calls), 1)
        self.assertEqual(len(out.edge_preds), 3)

    def test_same_seed_same_weights(self) -> None:
        a, b = _model(seed=5), _model(seed=5)
        for (name, pa), pb in zip(a.state_dict().items(), b.state_dict().values()):
            self.assertTrue(torch.equal(pa, pb), name)


class TestStructure(unittest.TestCase):
    def test_simple_decoder_is_small(self) -> None:
        config = NetworkConfig(width_multiplier=0.25)
        encoder = build_encoder(config)
        decoder = SimpleDecoder(config, encoder.out_channels["e4"])
        self.assertLess(count_parameters(decoder), 0.05 * count_parameters(encoder))

    def test_topology_hash_is_stable(self) -> None:
        a, b = _model(seed=1), _model(seed=2)
        self.assertEqual(a.topology_hash(), b.topology_hash())
        self.assertEqual(len(a.topology_hash()), 64)

    def test_encoder_hash_shared_across_modes(self) -> None:
        full, pretrain = _model(Mode.FULL), _model(Mode.PRETRAIN)
        self.assertEqual(full.topology_hash("encoder."), pretrain.topology_hash("encoder."))
        self.assertNotEqual(full.topology_hash(), pretrain.topology_hash())

    def test_width_changes_topology(self) -> None:
        other = build_model(NetworkConfig(width_multiplier=0.125, blocks=(1, 1, 1, 1)))
        self.assertNotEqual(_model().topology_hash(), other.topology_hash())

    def test_encoder_state_names(self) -> None:
        state = _model().encoder_state()
        self.assertTrue(state)
        self.assertTrue(all(name.startswith("encoder.") for name in state))

    def test_config_dict_round_trip(self) -> None:
        self.assertEqual(NetworkConfig.from_dict(TINY.as_dict()), TINY)

    def test_mode_from_string(self) -> None:
        self.assertIs(SegmentationNetwork(TINY, "pretrain").mode, Mode.PRETRAIN)


if __name__ == "__main__":
    unittest.main()
