import unittest

import pytest
import torch

from tashkeel.utils import model
from tashkeel.utils.corpus import IGNORE
from tashkeel.utils.errors import (
    LengthExceeded,
    PrefixLengthMismatch,
    ShapeMismatch,
)
from tashkeel.utils.model import ModelConfig
from tashkeel.utils.training import cross_entropy


VOCAB_SIZE = 10


def tiny_config(arch="eo", **kwargs) -> ModelConfig:
    defaults = dict(
        arch=arch,
        d_model=16,
        n_heads=2,
        n_layers_encoder=2,
        n_layers_decoder=1 if arch == "ed" else 0,
        dropout=0.1,
        max_len=16,
        vocab_size=VOCAB_SIZE,
    )
    defaults.update(kwargs)

    return ModelConfig(**defaults)


def random_batch(batch=3, length=8, seed=0, lengths=None):
    """Token ids in the non special range with right padding"""
    generator = torch.Generator().manual_seed(seed)
    token_ids = torch.randint(
        4, VOCAB_SIZE, (batch, length), generator=generator
    )
    lengths = lengths or [length] * batch
    mask = torch.zeros((batch, length), dtype=torch.long)

    for row, row_length in enumerate(lengths):
        mask[row, :row_length] = 1
        token_ids[row, row_length:] = 0

    return token_ids, mask


class TestModelConfig(unittest.TestCase):
    def test_invalid_configs_raise(self):
        cases = {
            "heads": dict(d_model=15, n_heads=2),
            "dropout": dict(dropout=1.0),
            "max_len": dict(max_len=0),
            "arch": dict(arch="rnn"),
            "decoder layers on eo": dict(n_layers_decoder=1),
        }

        for name, kwargs in cases.items():
            with self.subTest(name):
                with pytest.raises(ValueError):
                    tiny_config(**kwargs)

    def test_ffn_defaults_to_four_times_d_model(self):
        self.assertEqual(tiny_config().ffn_dim, 64)

    def test_decoder_bos_follows_class_ids(self):
        self.assertEqual(tiny_config("ed").bos_id, 15)


class TestInitParameters(unittest.TestCase):
    def test_same_seed_gives_identical_parameters(self):
        first = model.init_parameters(tiny_config(), seed=3)
        second = model.init_parameters(tiny_config(), seed=3)

        for (name, x), (_, y) in zip(
            first.named_parameters(), second.named_parameters()
        ):
            with self.subTest(name):
                self.assertTrue(torch.equal(x, y))

    def test_layer_norms_and_biases(self):
        params = dict(
            model.init_parameters(tiny_config(), seed=0).named_parameters()
        )

        with self.subTest("gains are one"):
            self.assertTrue(
                torch.all(params["encoder_layers.0.ffn_norm.weight"] == 1)
            )

        with self.subTest("norm biases are zero"):
            self.assertTrue(torch.all(params["encoder_norm.bias"] == 0))

        with self.subTest("projection biases are zero"):
            bias = params["encoder_layers.1.self_attn.q_proj.bias"]
            self.assertTrue(torch.all(bias == 0))

    def test_projection_std_close_to_target(self):
        config = tiny_config(d_model=64, n_heads=4, max_len=1024)
        params = model.init_parameters(config, seed=0).named_parameters()

        weights = torch.cat(
            [
                param.flatten()
                for name, param in params
                if name.endswith("weight") and "norm" not in name
            ]
        )

        with self.subTest("enough samples"):
            self.assertGreaterEqual(weights.numel(), 100_000)

        with self.subTest("std within 10%"):
            self.assertAlmostEqual(
                weights.std().item() / 64**-0.5, 1.0, delta=0.1
            )

    def test_manifest_determined_by_config(self):
        manifest = model.parameter_manifest(
            model.init_parameters(tiny_config("ed"), seed=0)
        )

        with self.subTest("label embedding rows"):
            self.assertEqual(manifest["label_embedding.weight"], (16, 16))

        with self.subTest("classifier"):
            self.assertEqual(manifest["classifier.weight"], (15, 16))


class TestEncoderForward(unittest.TestCase):
    def setUp(self):
        self.model = model.init_parameters(tiny_config(), seed=0)

    def test_pad_values_do_not_change_real_positions(self):
        token_ids, mask = random_batch(lengths=[8, 5, 3])
        noisy = token_ids.clone()
        n_pad = int((mask == 0).sum())
        noisy[mask == 0] = torch.randint(4, VOCAB_SIZE, (n_pad,))

        clean_out = model.encoder_forward(self.model, token_ids, mask)
        noisy_out = model.encoder_forward(self.model, noisy, mask)

        real = mask.bool()
        self.assertTrue(
            torch.allclose(clean_out[real], noisy_out[real], atol=1e-6)
        )

    def test_eval_mode_is_deterministic(self):
        token_ids, mask = random_batch()

        self.assertTrue(
            torch.equal(
                model.encoder_forward(self.model, token_ids, mask),
                model.encoder_forward(self.model, token_ids, mask),
            )
        )

    def test_dropout_active_in_train_mode(self):
        token_ids, mask = random_batch()

        torch.manual_seed(0)
        first = model.encoder_forward(self.model, token_ids, mask, True)
        second = model.encoder_forward(self.model, token_ids, mask, True)

        self.assertFalse(torch.equal(first, second))

    def test_zero_layers_is_normed_embedding(self):
        bare = model.init_parameters(tiny_config(n_layers_encoder=0), seed=0)
        token_ids, mask = random_batch()

        expected = bare.encoder_norm(
            bare.token_embedding(token_ids)
            + bare.position_embedding(torch.arange(8))
        )

        self.assertTrue(
            torch.allclose(
                model.encoder_forward(bare, token_ids, mask), expected
            )
        )

    def test_too_long_input_raises(self):
        token_ids, mask = random_batch(length=17)

        with pytest.raises(LengthExceeded, match="17 exceeds max_len 16"):
            model.encoder_forward(self.model, token_ids, mask)


class TestEoForward(unittest.TestCase):
    def setUp(self):
        self.model = model.init_parameters(tiny_config(), seed=0)

    def test_changing_last_token_changes_first_position(self):
        token_ids, mask = random_batch(batch=1)
        changed = token_ids.clone()
        changed[0, -1] = 4 if token_ids[0, -1] != 4 else 5

        first = model.eo_forward(self.model, token_ids, mask).logits
        second = model.eo_forward(self.model, changed, mask).logits

        self.assertFalse(torch.allclose(first[0, 0], second[0, 0]))

    def test_softmax_rows_sum_to_one(self):
        token_ids, mask = random_batch()
        logits = model.eo_forward(self.model, token_ids, mask).logits

        self.assertTrue(
            torch.allclose(
                torch.softmax(logits, dim=-1).sum(dim=-1),
                torch.ones(logits.shape[:-1]),
                atol=1e-6,
            )
        )

    def test_batch_of_one_equals_row_of_batch(self):
        token_ids, mask = random_batch(lengths=[8, 6, 2])
        batch_logits = model.eo_forward(self.model, token_ids, mask).logits

        for row, length in enumerate([8, 6, 2]):
            with self.subTest(row):
                single = model.eo_forward(
                    self.model,
                    token_ids[row : row + 1, :length],
                    mask[row : row + 1, :length],
                ).logits

                self.assertTrue(
                    torch.allclose(
                        single[0], batch_logits[row, :length], atol=1e-5
                    )
                )


class TestMlmForward(unittest.TestCase):
    def test_logits_over_vocabulary(self):
        bert = model.init_parameters(tiny_config("mlm"), seed=0)
        token_ids, mask = random_batch()

        self.assertEqual(
            tuple(model.mlm_forward(bert, token_ids, mask).logits.shape),
            (3, 8, VOCAB_SIZE),
        )


class TestEdForward(unittest.TestCase):
    def setUp(self):
        self.model = model.init_parameters(
            tiny_config("ed", n_layers_decoder=2), seed=0
        )
        self.token_ids, self.mask = random_batch(lengths=[8, 6, 4])
        generator = torch.Generator().manual_seed(1)
        self.labels = torch.randint(0, 15, (3, 8), generator=generator)
        self.prefix = model.shift_labels(self.labels, self.model.config.bos_id)

    def logits(self, token_ids=None, prefix=None):
        return model.ed_forward(
            self.model,
            self.token_ids if token_ids is None else token_ids,
            self.mask,
            self.prefix if prefix is None else prefix,
        ).logits

    def test_shift_labels_starts_with_bos(self):
        with self.subTest("bos"):
            self.assertTrue(torch.all(self.prefix[:, 0] == 15))

        with self.subTest("previous label"):
            self.assertTrue(
                torch.equal(self.prefix[:, 1:], self.labels[:, :-1])
            )

    def test_later_labels_do_not_change_earlier_logits(self):
        reference = self.logits()

        for j in range(1, 8):
            perturbed = self.prefix.clone()
            perturbed[:, j] = (perturbed[:, j] + 1) % 15
            logits = self.logits(prefix=perturbed)

            with self.subTest(j):
                self.assertTrue(
                    torch.allclose(
                        logits[:, :j], reference[:, :j], atol=1e-6, rtol=0
                    )
                )

    def test_input_change_reaches_every_position(self):
        changed = self.token_ids.clone()
        changed[0, 3] = 4 if changed[0, 3] != 4 else 5

        difference = (self.logits(token_ids=changed) - self.logits()).abs()

        self.assertTrue(torch.all(difference[0].sum(dim=-1) > 0))

    def test_prefix_shape_mismatch_raises(self):
        with pytest.raises(PrefixLengthMismatch):
            self.logits(prefix=self.prefix[:, :-1])


class TestGreedyDecode(unittest.TestCase):
    def setUp(self):
        self.model = model.init_parameters(
            tiny_config("ed", n_layers_decoder=2), seed=0
        )

    def test_step_logits_equal_teacher_forced_logits(self):
        for seed in range(100):
            token_ids, mask = random_batch(batch=2, length=6, seed=seed)
            decoded, step_logits = model.greedy_decode(
                self.model, token_ids, mask, return_logits=True
            )
            forced = model.ed_forward(
                self.model,
                token_ids,
                mask,
                model.shift_labels(decoded, self.model.config.bos_id),
            ).logits

            self.assertTrue(torch.allclose(step_logits, forced, atol=1e-5))

    def test_output_is_argmax_with_input_length(self):
        token_ids, mask = random_batch(batch=2, length=7)
        decoded, step_logits = model.greedy_decode(
            self.model, token_ids, mask, return_logits=True
        )

        with self.subTest("shape"):
            self.assertEqual(tuple(decoded.shape), (2, 7))

        with self.subTest("argmax"):
            self.assertTrue(torch.equal(decoded, step_logits.argmax(dim=-1)))

    def test_forced_labels_emitted(self):
        token_ids, mask = random_batch(batch=2, length=5)
        forced = torch.full_like(token_ids, IGNORE)
        forced[:, 2] = 14

        decoded = model.greedy_decode(
            self.model, token_ids, mask, forced_labels=forced
        )

        self.assertTrue(torch.all(decoded[:, 2] == 14))

    def test_too_long_input_raises(self):
        token_ids, mask = random_batch(length=17)

        with pytest.raises(LengthExceeded):
            model.greedy_decode(self.model, token_ids, mask)


class TestGradients(unittest.TestCase):
    """
    Autograd gradients of the loss against central finite differences in
    float64 on a tiny config
    """

    def check_gradients(self, arch):
        torch.manual_seed(0)
        net = model.init_parameters(
            tiny_config(arch, dropout=0.0, n_layers_encoder=1), seed=0
        ).double()
        token_ids, mask = random_batch(batch=2, length=8, lengths=[8, 5])
        n_out = VOCAB_SIZE if arch == "mlm" else 15
        targets = torch.randint(0, n_out, (2, 8))
        targets[mask == 0] = IGNORE

        def loss_fn():
            if arch == "mlm":
                logits = model.mlm_forward(net, token_ids, mask).logits
            elif arch == "eo":
                logits = model.eo_forward(net, token_ids, mask).logits
            else:
                prefix = model.shift_labels(
                    targets.clamp(min=0), net.config.bos_id
                )
                logits = model.ed_forward(net, token_ids, mask, prefix).logits

            return cross_entropy(logits, targets)[0]

        net.zero_grad()
        loss_fn().backward()
        generator = torch.Generator().manual_seed(0)
        eps = 1e-6

        for name, param in net.named_parameters():
            flat = param.data.view(-1)
            grad = param.grad.view(-1)
            picks = torch.randint(0, flat.numel(), (3,), generator=generator)

            for idx in picks.tolist():
                original = flat[idx].item()

                with torch.no_grad():
                    flat[idx] = original + eps
                    upper = loss_fn().item()
                    flat[idx] = original - eps
                    lower = loss_fn().item()
                    flat[idx] = original

                numeric = (upper - lower) / (2 * eps)
                analytic = grad[idx].item()
                tolerance = 1e-4 * max(abs(numeric), abs(analytic)) + 1e-8

                with self.subTest(name=name, index=idx):
                    self.assertLessEqual(abs(numeric - analytic), tolerance)

    def test_eo_gradients(self):
        self.check_gradients("eo")

    def test_ed_gradients(self):
        self.check_gradients("ed")

    def test_mlm_gradients(self):
        self.check_gradients("mlm")


class TestTransferPretrained(unittest.TestCase):
    def setUp(self):
        self.bert = model.init_parameters(tiny_config("mlm"), seed=7)

    def test_eo_transfer_copies_encoder(self):
        target, report = model.transfer_pretrained(
            self.bert, tiny_config("eo"), seed=0
        )
        source = dict(self.bert.named_parameters())

        with self.subTest("encoder copied"):
            for name, param in target.named_parameters():
                if name.startswith("encoder_layers"):
                    self.assertTrue(torch.equal(param, source[name]))

        with self.subTest("only the classifier is fresh"):
            self.assertEqual(
                sorted(report["fresh"]),
                ["classifier.bias", "classifier.weight"],
            )

    def test_ed_transfer_maps_upper_layers_to_decoder(self):
        target, report = model.transfer_pretrained(
            self.bert,
            tiny_config("ed", n_layers_encoder=1, n_layers_decoder=1),
            seed=0,
        )
        source = dict(self.bert.named_parameters())
        params = dict(target.named_parameters())

        with self.subTest("decoder self attention from layer 1"):
            self.assertTrue(
                torch.equal(
                    params["decoder_layers.0.self_attn.q_proj.weight"],
                    source["encoder_layers.1.self_attn.q_proj.weight"],
                )
            )

        with self.subTest("fresh modules"):
            fresh_modules = {
                x.rsplit(".", 1)[0].replace("decoder_layers.0.", "")
                for x in report["fresh"]
            }
            self.assertEqual(
                fresh_modules,
                {
                    "cross_attn.q_proj",
                    "cross_attn.k_proj",
                    "cross_attn.v_proj",
                    "cross_attn.o_proj",
                    "cross_attn_norm",
                    "label_embedding",
                    "decoder_norm",
                    "classifier",
                },
            )

    def test_mismatched_d_model_raises(self):
        with pytest.raises(ShapeMismatch, match="d_model"):
            model.transfer_pretrained(
                self.bert, tiny_config("eo", d_model=32, n_heads=2)
            )

    def test_too_few_source_layers_raises(self):
        with pytest.raises(ShapeMismatch, match="needs 3 pretrained layers"):
            model.transfer_pretrained(
                self.bert,
                tiny_config("ed", n_layers_encoder=2, n_layers_decoder=1),
            )
