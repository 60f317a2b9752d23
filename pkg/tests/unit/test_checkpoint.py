import json
import os
from shutil import rmtree
import unittest
from uuid import uuid4

import pytest
import torch

from unit import TEST_DATA_DIR
from tashkeel.utils import checkpoint
from tashkeel.utils.corpus import CharVocab
from tashkeel.utils.errors import CheckpointError
from tashkeel.utils.model import ModelConfig, init_parameters


VOCAB = CharVocab(chars=["ب", "ت", " "])


class TestCheckpoint(unittest.TestCase):
    def setUp(self):
        self.path = os.path.join(TEST_DATA_DIR, uuid4().hex)
        self.model = init_parameters(
            ModelConfig(
                arch="ed",
                d_model=16,
                n_heads=2,
                n_layers_encoder=1,
                n_layers_decoder=1,
                max_len=32,
                vocab_size=len(VOCAB),
            ),
            seed=0,
        )
        self.manifest = checkpoint.save_checkpoint(
            self.path,
            self.model,
            VOCAB,
            step=12,
            epoch=3,
            metric_history=[{"epoch": 1, "val_der": 0.5}],
            extra={"init": "scratch"},
        )

    def tearDown(self):
        rmtree(self.path)

    def rewrite_manifest(self, **changes):
        manifest_file = os.path.join(self.path, checkpoint.MANIFEST)

        with open(manifest_file, encoding="utf-8") as fh:
            manifest = json.load(fh)

        manifest.update(changes)

        with open(manifest_file, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh)

    def test_round_trip_restores_parameters(self):
        model, vocab, manifest = checkpoint.load_checkpoint(self.path)
        stored = dict(model.named_parameters())

        for name, param in self.model.named_parameters():
            with self.subTest(name):
                self.assertTrue(torch.equal(param, stored[name]))

        with self.subTest("vocab"):
            self.assertEqual(vocab.chars, VOCAB.chars)

        with self.subTest("config"):
            self.assertEqual(model.config, self.model.config)

        with self.subTest("eval mode"):
            self.assertFalse(model.training)

        with self.subTest("manifest"):
            self.assertEqual(manifest, self.manifest)

    def test_manifest_records_training_position(self):
        manifest = checkpoint.read_manifest(self.path)

        self.assertEqual(
            (
                manifest["step"],
                manifest["epoch"],
                manifest["init"],
                manifest["dtype"],
            ),
            (12, 3, "scratch", "float32-le"),
        )

    def test_arrays_indexed_in_order(self):
        offsets = [x["offset"] for x in self.manifest["arrays"]]
        counts = [x["count"] for x in self.manifest["arrays"]]

        with self.subTest("contiguous"):
            self.assertEqual(
                offsets, [sum(counts[:idx]) for idx in range(len(counts))]
            )

        with self.subTest("file size"):
            self.assertEqual(
                os.path.getsize(os.path.join(self.path, checkpoint.PARAMS)),
                4 * sum(counts),
            )

    def test_tampered_parameters_raise(self):
        params_file = os.path.join(self.path, checkpoint.PARAMS)

        with open(params_file, "r+b") as fh:
            first = fh.read(1)
            fh.seek(0)
            fh.write(bytes([first[0] ^ 0xFF]))

        with pytest.raises(CheckpointError, match="Parameter file hash"):
            checkpoint.load_checkpoint(self.path)

    def test_tampered_vocab_raises(self):
        with open(
            os.path.join(self.path, checkpoint.VOCAB), "w", encoding="utf-8"
        ) as fh:
            json.dump(CharVocab(chars=["ت", "ب", " "]).to_dict(), fh)

        with pytest.raises(CheckpointError, match="Vocabulary hash"):
            checkpoint.load_checkpoint(self.path)

    def test_other_class_table_raises(self):
        self.rewrite_manifest(class_table_hash="0" * 64)

        with pytest.raises(CheckpointError, match="class table"):
            checkpoint.load_checkpoint(self.path)

    def test_unknown_format_raises(self):
        self.rewrite_manifest(format_version=2)

        with pytest.raises(CheckpointError, match="Unsupported"):
            checkpoint.load_checkpoint(self.path)

    def test_layout_mismatch_raises(self):
        config = self.model.config.to_dict()
        config["n_layers_decoder"] = 2
        self.rewrite_manifest(model_config=config)

        with pytest.raises(CheckpointError, match="missing"):
            checkpoint.load_checkpoint(self.path)

    def test_missing_manifest_raises(self):
        with pytest.raises(CheckpointError, match="No checkpoint manifest"):
            checkpoint.load_checkpoint(os.path.join(self.path, "nothing"))
