"""
Checkpoint directories: a human readable JSON manifest plus parameter
arrays in a flat binary file of row-major little-endian float32 values.

<checkpoint>/
    manifest.json   config, hashes, step / epoch, metric history, array index
    params.bin      arrays concatenated in manifest order
    vocab.json      input vocabulary
"""

import hashlib
import json
import os
from pathlib import Path
from typing import Tuple

import numpy as np
import torch

from .arabic_text import class_table_hash
from .corpus import CharVocab
from .errors import CheckpointError
from .log import get_logger
from .model import DiacritizationTransformer, ModelConfig, parameter_manifest

log = get_logger("tashkeel")

MANIFEST = "manifest.json"
PARAMS = "params.bin"
VOCAB = "vocab.json"
FORMAT_VERSION = 1


def _sha256(data) -> str:
    return hashlib.sha256(data).hexdigest()


def save_checkpoint(
    path, model, vocab, step=0, epoch=0, metric_history=None, extra=None
) -> dict:
    """
    Write the model, its vocabulary and training position to `path`

    Parameters
    ----------
    path : str
        checkpoint directory, created if missing and overwritten if present
    model : DiacritizationTransformer
        model to save
    vocab : CharVocab
        input vocabulary the model was built for
    step : int
        optimizer steps taken
    epoch : int
        epochs completed
    metric_history : list
        per epoch metric records
    extra : dict
        additional JSON serialisable entries for the manifest

    Returns
    -------
    dict
        the written manifest
    """
    Path(path).mkdir(parents=True, exist_ok=True)

    arrays = []
    offset = 0
    blobs = []

    for name, param in model.named_parameters():
        values = param.detach().cpu().numpy().astype("<f4", copy=False)
        blobs.append(np.ascontiguousarray(values).tobytes())
        arrays.append(
            {
                "name": name,
                "shape": list(values.shape),
                "offset": offset,
                "count": int(values.size),
            }
        )
        offset += int(values.size)

    data = b"".join(blobs)

    with open(os.path.join(path, PARAMS), "wb") as fh:
        fh.write(data)

    with open(os.path.join(path, VOCAB), "w", encoding="utf-8") as fh:
        json.dump(vocab.to_dict(), fh, ensure_ascii=False, indent=4)

    manifest = {
        "format_version": FORMAT_VERSION,
        "dtype": "float32-le",
        "model_config": model.config.to_dict(),
        "vocab_hash": vocab.vocab_hash(),
        "class_table_hash": class_table_hash(),
        "step": step,
        "epoch": epoch,
        "metric_history": metric_history or [],
        "params_sha256": _sha256(data),
        "arrays": arrays,
        **(extra or {}),
    }

    with open(os.path.join(path, MANIFEST), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, ensure_ascii=False, indent=4)

    log.info(
        "Saved checkpoint at epoch %s (step %s) to %s", epoch, step, path
    )

    return manifest


def read_manifest(path) -> dict:
    manifest_file = os.path.join(path, MANIFEST)

    if not os.path.exists(manifest_file):
        raise CheckpointError(f"No checkpoint manifest found in {path}")

    with open(manifest_file, encoding="utf-8") as fh:
        return json.load(fh)


def load_checkpoint(
    path,
) -> Tuple[DiacritizationTransformer, CharVocab, dict]:
    """
    Load and verify a checkpoint directory

    Parameters
    ----------
    path : str
        checkpoint directory

    Returns
    -------
    DiacritizationTransformer
        model with the stored parameters, in eval mode
    CharVocab
        stored vocabulary
    dict
        manifest contents

    Raises
    ------
    CheckpointError
        Raised when a hash, the class table or the array layout does not
        match
    """
    log.info("Loading checkpoint from %s", path)
    manifest = read_manifest(path)

    if manifest.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"Unsupported checkpoint format {manifest.get('format_version')}"
        )

    if manifest["class_table_hash"] != class_table_hash():
        raise CheckpointError(
            "Checkpoint was written with a different diacritic class table"
        )

    with open(os.path.join(path, VOCAB), encoding="utf-8") as fh:
        vocab = CharVocab.from_dict(json.load(fh))

    if vocab.vocab_hash() != manifest["vocab_hash"]:
        raise CheckpointError(f"Vocabulary hash mismatch in {path}")

    with open(os.path.join(path, PARAMS), "rb") as fh:
        data = fh.read()

    if _sha256(data) != manifest["params_sha256"]:
        raise CheckpointError(f"Parameter file hash mismatch in {path}")

    config = ModelConfig.from_dict(manifest["model_config"])
    model = DiacritizationTransformer(config)
    expected = parameter_manifest(model)
    stored = {x["name"]: tuple(x["shape"]) for x in manifest["arrays"]}

    if expected != stored:
        reshaped = sorted(
            x for x in set(expected) & set(stored) if expected[x] != stored[x]
        )
        raise CheckpointError(
            "Stored arrays do not match the layout of the configured model:"
            f" missing {sorted(set(expected) - set(stored))}, unexpected"
            f" {sorted(set(stored) - set(expected))}, reshaped {reshaped}"
        )

    values = np.frombuffer(data, dtype="<f4")
    params = dict(model.named_parameters())

    with torch.no_grad():
        for entry in manifest["arrays"]:
            array = values[entry["offset"] : entry["offset"] + entry["count"]]
            params[entry["name"]].copy_(
                torch.from_numpy(array.reshape(entry["shape"]).copy())
            )

    model.eval()

    return model, vocab, manifest
