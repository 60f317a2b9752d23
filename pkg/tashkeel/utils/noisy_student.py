"""
One Noisy-Student round: a trained teacher labels sampled unlabeled
text, the pseudo-labeled data joins the labeled corpus through the same
filter, and a student warm-started from the teacher is fine-tuned on the
union with dropout active
"""

from dataclasses import dataclass, field, replace
import json
import os
import random
from typing import Dict, Iterator, List, Tuple

from .arabic_text import decode, strip_diacritics
from .checkpoint import load_checkpoint, read_manifest
from .corpus import (
    CorpusStats,
    FilterConfig,
    iter_finetune,
    split_validation,
)
from .inference import Diacritizer
from .io import (
    read_labeled_corpus,
    read_lines,
    write_json,
    write_labeled_corpus,
)
from .log import get_logger
from .training import finetune

log = get_logger("tashkeel")

ROUND_REPORT = "ns_round_report.json"
COMBINED_CORPUS = "combined_corpus.tsv"


@dataclass
class NsRoundSpec:
    teacher_checkpoint: str
    unlabeled_source: str
    combine_with: str
    sample_size: int = 1_000_000
    student_init: str = "teacher_weights"
    filters: FilterConfig = field(default_factory=FilterConfig)
    seed: int = 0
    inference_batch_size: int = 32

    def __post_init__(self):
        if self.sample_size < 0:
            raise ValueError("sample_size must not be negative")
        if self.student_init != "teacher_weights":
            raise ValueError("students are initialised from teacher_weights")


@dataclass
class PseudoLabelStats:
    total_in: int = 0
    labeled: int = 0
    skipped_empty: int = 0
    skipped_error: int = 0

    def to_dict(self) -> dict:
        return {
            "total_in": self.total_in,
            "labeled": self.labeled,
            "skipped_empty": self.skipped_empty,
            "skipped_error": self.skipped_error,
        }


def sample_lines(path, sample_size, seed) -> Tuple[List[str], int]:
    """
    Seeded sample of non-empty lines, kept in file order

    Parameters
    ----------
    path : str
        unlabeled UTF-8 text
    sample_size : int
        lines to draw
    seed : int
        sampling seed

    Returns
    -------
    list
        sampled lines
    int
        number of non-empty lines available

    Raises
    ------
    ValueError
        Raised when more lines are requested than available
    """
    lines = [x for x in read_lines(path) if x.strip()]

    if sample_size > len(lines):
        raise ValueError(
            f"sample_size ({sample_size}) exceeds the {len(lines)} unlabeled"
            f" lines available in {path}"
        )

    picked = sorted(random.Random(seed).sample(range(len(lines)), sample_size))

    return [lines[x] for x in picked], len(lines)


def pseudo_label(
    teacher, unlabeled, stats=None, batch_size=256
) -> Iterator:
    """
    Label stripped unlabeled lines with the teacher

    Lines are labeled in batches; if a batch fails the lines are retried
    one by one and those still failing are skipped and counted.

    Parameters
    ----------
    teacher : Diacritizer
        trained teacher
    unlabeled : iterable
        raw lines, existing diacritics are stripped
    stats : PseudoLabelStats | None
        counts updated in place
    batch_size : int
        lines per labeling call

    Yields
    ------
    LabeledSequence
        pseudo labeled records with provenance pseudo
    """
    stats = stats if stats is not None else PseudoLabelStats()
    pending = []

    def flush(batch):
        try:
            return list(zip(batch, teacher.label_skeletons(batch)))
        except Exception as err:
            log.warning(
                "Labeling %s lines failed (%s), retrying one by one",
                len(batch),
                err,
            )

        pairs = []

        for skeleton in batch:
            try:
                seq = teacher.label_skeletons([skeleton])[0]
                pairs.append((skeleton, seq))
            except Exception as err:
                log.warning("Skipping line that failed labeling: %s", err)
                stats.skipped_error += 1

        return pairs

    def labeled(batch):
        for skeleton, seq in flush(batch):
            assert seq.letters == skeleton, "labeling altered a skeleton"
            stats.labeled += 1

            yield seq

    for line in unlabeled:
        stats.total_in += 1
        skeleton = strip_diacritics(line)

        if not skeleton:
            stats.skipped_empty += 1
            continue

        pending.append(skeleton)

        if len(pending) >= batch_size:
            yield from labeled(pending)
            pending = []

    if pending:
        yield from labeled(pending)

    log.info(
        "Pseudo-labeled %s of %s lines (%s empty, %s failed)",
        stats.labeled,
        stats.total_in,
        stats.skipped_empty,
        stats.skipped_error,
    )


def combine_and_filter(
    labeled, pseudo, filters=None
) -> Tuple[list, Dict[str, CorpusStats]]:
    """
    Re-apply the fine-tuning filter to labeled and pseudo-labeled records
    and concatenate the survivors, labeled first

    Parameters
    ----------
    labeled : str | iterable
        labeled corpus file or LabeledSequence records
    pseudo : iterable
        pseudo labeled LabeledSequence records
    filters : FilterConfig | None
        thresholds applied identically to both sources

    Returns
    -------
    list
        training corpus with provenance kept on each record
    dict
        CorpusStats per provenance plus their sum under `total`
    """
    filters = filters or FilterConfig()

    if isinstance(labeled, (str, os.PathLike)):
        labeled = read_labeled_corpus(labeled)

    corpus = []
    stats = {}

    for provenance, records in (("gold", labeled), ("pseudo", pseudo)):
        stats[provenance] = CorpusStats()
        corpus.extend(
            replace(x, provenance=provenance)
            for x in iter_finetune(
                (decode(x) for x in records), filters, stats[provenance]
            )
        )

    stats["total"] = stats["gold"] + stats["pseudo"]

    log.info(
        "Combined corpus of %s sentences: %s gold, %s pseudo (filter %s)",
        stats["total"].kept,
        stats["gold"].kept,
        stats["pseudo"].kept,
        filters.config_hash()[:12],
    )

    return corpus, stats


def stats_file(corpus_path) -> str:
    """Sidecar stats file written next to a prepared corpus"""
    return f"{corpus_path}.stats.json"


def check_filter_parity(spec) -> None:
    """
    Compare the round filter with the one recorded in the stats file of
    the labeled corpus it combines with

    Raises
    ------
    ValueError
        Raised when the recorded filter hash differs
    """
    recorded = stats_file(spec.combine_with)

    if not os.path.exists(recorded):
        log.warning(
            "No stats file %s found, can not verify the labeled corpus was"
            " prepared with filter %s",
            recorded,
            spec.filters,
        )
        return

    with open(recorded, encoding="utf-8") as fh:
        recorded_hash = json.load(fh).get("filter_config_hash")

    if recorded_hash != spec.filters.config_hash():
        log.error(
            "Filter hash %s of the round differs from %s recorded in %s",
            spec.filters.config_hash(),
            recorded_hash,
            recorded,
        )
        raise ValueError(
            f"round filter {spec.filters} differs from the filter"
            f" {spec.combine_with} was prepared with"
        )


def student_split(
    corpus, teacher_manifest, train_config
) -> Tuple[list, list]:
    """
    Split a combined corpus for the student: validation is held out from
    the gold records only, with the seed and fraction the teacher was
    validated with, pseudo records are all trained on

    Parameters
    ----------
    corpus : list
        combine_and_filter output, gold records first
    teacher_manifest : dict
        manifest of the teacher checkpoint
    train_config : TrainConfig
        student settings, used when the teacher recorded no split

    Returns
    -------
    list
        training records, gold then pseudo
    list
        gold validation records
    """
    split = teacher_manifest.get("validation_split") or {
        "seed": train_config.seed,
        "eval_fraction": train_config.eval_fraction,
    }
    gold = [x for x in corpus if x.provenance == "gold"]
    pseudo = [x for x in corpus if x.provenance != "gold"]

    if not gold:
        raise ValueError("no gold records left to validate the student on")

    gold_train, gold_val = split_validation(
        gold, split["eval_fraction"], split["seed"]
    )

    log.info(
        "Holding out %s gold sentences for validation (seed %s, fraction %s)",
        len(gold_val),
        split["seed"],
        split["eval_fraction"],
    )

    return gold_train + pseudo, gold_val

def run_ns_round(spec, train_config, run_dir) -> Tuple[str, dict]:
    """
    Run one Noisy-Student round and write its report to the run directory

    Parameters
    ----------
    spec : NsRoundSpec
        round definition
    train_config : TrainConfig
        student optimisation settings
    run_dir : str
        run directory of the student

    Returns
    -------
    str
        student's best checkpoint
    dict
        round report

    Raises
    ------
    ValueError
        Raised when the round filter differs from the labeled corpus filter
        or when the combined corpus holds no gold record
    """
    check_filter_parity(spec)

    teacher_model, vocab, teacher_manifest = load_checkpoint(
        spec.teacher_checkpoint
    )
    teacher = Diacritizer(
        teacher_model, vocab, batch_size=spec.inference_batch_size
    )

    if spec.sample_size:
        sampled, available = sample_lines(
            spec.unlabeled_source, spec.sample_size, spec.seed
        )
    else:
        sampled, available = [], None

    label_stats = PseudoLabelStats()
    pseudo = list(pseudo_label(teacher, sampled, stats=label_stats))

    corpus, filter_stats = combine_and_filter(
        spec.combine_with, pseudo, spec.filters
    )
    write_labeled_corpus(os.path.join(run_dir, COMBINED_CORPUS), corpus)
    train_corpus, val_corpus = student_split(
        corpus, teacher_manifest, train_config
    )

    history = finetune(
        arch=teacher_model.config.arch,
        init="warm_start",
        train_config=train_config,
        corpus=train_corpus,
        vocab=vocab,
        run_dir=run_dir,
        init_checkpoint=spec.teacher_checkpoint,
        val_corpus=val_corpus,
    )

    best = os.path.join(run_dir, "checkpoints", "best")
    student_manifest = read_manifest(best)
    teacher_val = [
        x["val_der"]
        for x in teacher_manifest["metric_history"]
        if "val_der" in x
    ]

    report = {
        "stages": {
            "unlabeled_available": available,
            "sampled": len(sampled),
            **{f"pseudo_{k}": v for k, v in label_stats.to_dict().items()},
            "combined_kept": filter_stats["total"].kept,
        },
        "filter_config_hash": spec.filters.config_hash(),
        "filter_stats": {k: v.to_dict() for k, v in filter_stats.items()},
        "teacher_checkpoint": spec.teacher_checkpoint,
        "teacher_params_sha256": teacher_manifest["params_sha256"],
        "teacher_best_val_der": min(teacher_val) if teacher_val else None,
        "student_checkpoint": best,
        "student_params_sha256": student_manifest["params_sha256"],
        "student_best_val_der": min(x["val_der"] for x in history),
        "student_validation_gold": len(val_corpus),
        "seed": spec.seed,
    }
    write_json(os.path.join(run_dir, ROUND_REPORT), report)

    log.info(
        "Noisy-Student round complete, student best validation DER %.3f%%",
        report["student_best_val_der"] * 100,
    )

    return best, report
