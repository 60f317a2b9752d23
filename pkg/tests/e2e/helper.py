"""
Simple helper functions used in most tests for building the toy corpora,
training on them and cleaning up
"""

from itertools import product
import json
from os import makedirs, path
import random
import shutil
from statistics import median
from typing import List
from uuid import uuid4

from e2e import BASE_CONFIG, TEST_DATA_DIR
from tashkeel.utils.arabic_text import DiacriticClass, LabeledSequence
from tashkeel.utils.checkpoint import load_checkpoint
from tashkeel.utils.corpus import CharVocab, build_vocab
from tashkeel.utils.training import evaluate_epoch, finetune, pretrain_mlm
from tashkeel.utils.utils import (
    CONFIG_SCHEMA,
    model_config,
    resolve_config,
    train_config,
)


RULE_LETTERS = "بتجدرسعل"

RULE_CLASSES = (
    DiacriticClass.FATHA,
    DiacriticClass.KASRA,
    DiacriticClass.DHAMMA,
    DiacriticClass.SUKOON,
    DiacriticClass.SHADDA_FATHA,
    DiacriticClass.TANWEEN_FATH,
)

# diacritic of a letter as a function of its left and right neighbours,
# "" is a word boundary
_rng = random.Random(0)
RULE_TABLE = {
    pair: _rng.choice(RULE_CLASSES)
    for pair in product(("",) + tuple(RULE_LETTERS), repeat=2)
}


def rule_word(word) -> List[DiacriticClass]:
    return [
        RULE_TABLE[
            (
                word[idx - 1] if idx else "",
                word[idx + 1] if idx + 1 < len(word) else "",
            )
        ]
        for idx in range(len(word))
    ]


def synthetic_sentence(rng) -> LabeledSequence:
    """
    One sentence of the rule language, 2-5 words of 2-5 letters

    Parameters
    ----------
    rng : random.Random
        source of the letters

    Returns
    -------
    LabeledSequence
        letters labelled by RULE_TABLE
    """
    words = [
        "".join(rng.choice(RULE_LETTERS) for _ in range(rng.randint(2, 5)))
        for _ in range(rng.randint(2, 5))
    ]
    labels = []

    for idx, word in enumerate(words):
        if idx:
            labels.append(DiacriticClass.NO_TASHKEEL)
        labels.extend(rule_word(word))

    return LabeledSequence(" ".join(words), tuple(labels))


def synthetic_corpus(n, seed) -> List[LabeledSequence]:
    rng = random.Random(seed)

    return [synthetic_sentence(rng) for _ in range(n)]


def corpus_vocab(*corpora) -> CharVocab:
    return build_vocab(x.letters for corpus in corpora for x in corpus)


def desk_config(command, **values) -> dict:
    """
    Desk profile config of a command with the shared end to end values
    and the given overrides, keys the command does not take are dropped

    Parameters
    ----------
    command : str
        CLI command
    values : dict
        overrides

    Returns
    -------
    dict
        resolved config
    """
    cli_config = {
        k: v
        for k, v in {**BASE_CONFIG, **values}.items()
        if k in CONFIG_SCHEMA[command]
    }

    return resolve_config(command, profile="desk", cli_config=cli_config)


def train_diacritizer(
    arch,
    corpus,
    vocab,
    run_dir,
    init="scratch",
    init_checkpoint=None,
    **values,
) -> List[dict]:
    """
    Fine-tune on a toy corpus with the desk profile

    Returns
    -------
    list
        metric history of the run
    """
    config = desk_config("finetune", arch=arch, **values)

    return finetune(
        arch=arch,
        init=init,
        train_config=train_config(config),
        corpus=corpus,
        vocab=vocab,
        run_dir=run_dir,
        model_config=model_config(config, vocab_size=len(vocab)),
        init_checkpoint=init_checkpoint,
    )


def pretrain_on_skeletons(corpus, vocab, run_dir, **values) -> str:
    """Masked character pretraining on the bare letters of a corpus"""
    config = desk_config("pretrain", **values)

    return pretrain_mlm(
        train_config(config),
        [x.letters for x in corpus],
        model_config(config, vocab_size=len(vocab), arch="mlm"),
        vocab,
        run_dir,
    )


def checkpoint_der(checkpoint, corpus) -> float:
    """
    DER (case ending, as a fraction) of a stored diacritizer on a corpus

    Parameters
    ----------
    checkpoint : str
        checkpoint directory
    corpus : list
        LabeledSequence references

    Returns
    -------
    float
        error rate
    """
    model, vocab, _ = load_checkpoint(checkpoint)

    return evaluate_epoch(model, model.config.arch, corpus, vocab)


def median_over_seeds(func, seeds=(0, 1, 2)) -> float:
    return median(func(seed) for seed in seeds)


def make_test_dir() -> str:
    test_dir = path.join(TEST_DATA_DIR, uuid4().hex)
    makedirs(test_dir)

    return test_dir


def cleanup_local_test_files(*test_dirs) -> None:
    """
    Clean up the test run directories, corpora and logs

    To be called from tearDownClass to revert the test set up state.
    """
    for test_dir in test_dirs:
        if path.exists(test_dir):
            shutil.rmtree(test_dir)


def read_metrics(run_dir) -> List[dict]:
    """
    Read the per epoch metrics log of a run without its wall times

    Parameters
    ----------
    run_dir : str
        run directory

    Returns
    -------
    list
        metric records
    """
    with open(
        path.join(run_dir, "metrics.jsonl"), encoding="utf8", mode="r"
    ) as fh:
        records = [json.loads(x) for x in fh if x.strip()]

    return [{k: v for k, v in x.items() if k != "wall_time"} for x in records]
