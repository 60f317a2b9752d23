"""
Diacritic and word error rates with and without case ending
"""

from collections import Counter
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Dict, List, Optional, Tuple

from .arabic_text import DiacriticClass, encode, normalize
from .errors import (
    EmptyEvaluationSet,
    InvalidMarkCombination,
    LineCountMismatch,
    SkeletonMismatch,
)
from .log import get_logger

log = get_logger("tashkeel")

WordPairs = List[Tuple[DiacriticClass, DiacriticClass]]


class EvalMode(Enum):
    CE = "ce"
    NO_CE = "no_ce"


@dataclass
class Counts:
    positions: int = 0
    errors: int = 0
    words: int = 0
    wrong_words: int = 0

    def __add__(self, other):
        return Counts(
            **{
                x.name: getattr(self, x.name) + getattr(other, x.name)
                for x in fields(self)
            }
        )

    def der(self) -> float:
        if not self.positions:
            raise EmptyEvaluationSet("no letter positions to evaluate")

        return self.errors / self.positions

    def wer(self) -> float:
        if not self.words:
            raise EmptyEvaluationSet("no words to evaluate")

        return self.wrong_words / self.words


def pair_sequences(reference, hypothesis) -> List[WordPairs]:
    """
    Pair the labels of two encoded sequences word by word

    Parameters
    ----------
    reference : LabeledSequence
        gold sequence
    hypothesis : LabeledSequence
        system output over the same skeleton

    Returns
    -------
    list
        one list of (reference, hypothesis) label pairs per word

    Raises
    ------
    SkeletonMismatch
        Raised when the letter skeletons differ, naming the first
        divergent position
    """
    if reference.letters != hypothesis.letters:
        position = next(
            (
                idx
                for idx, (x, y) in enumerate(
                    zip(reference.letters, hypothesis.letters)
                )
                if x != y
            ),
            min(len(reference.letters), len(hypothesis.letters)),
        )
        raise SkeletonMismatch(
            position,
            reference=reference.letters[position : position + 1],
            hypothesis=hypothesis.letters[position : position + 1],
        )

    return [
        list(zip(reference.labels[start:end], hypothesis.labels[start:end]))
        for start, end in reference.word_spans()
    ]


def align(reference, hypothesis) -> List[WordPairs]:
    """
    Normalize and encode both texts (reference strictly, hypothesis in
    repair mode) and pair their labels word by word

    Parameters
    ----------
    reference : str
        gold diacritized text
    hypothesis : str
        system output

    Returns
    -------
    list
        one list of (reference, hypothesis) label pairs per word

    Raises
    ------
    InvalidMarkCombination
        Raised when the reference holds an invalid mark run
    SkeletonMismatch
        Raised when the letter skeletons differ
    """
    return pair_sequences(
        encode(normalize(reference), strict=True),
        encode(normalize(hypothesis), strict=False),
    )


def count_errors(pairs, mode=EvalMode.CE, include_no_tashkeel=True) -> Counts:
    """
    Count evaluated positions and errors. No CE drops the final letter of
    every word; a word with no counted position is not counted as a word.

    Parameters
    ----------
    pairs : list
        output of align()
    mode : EvalMode
        CE or NO_CE
    include_no_tashkeel : bool
        count positions whose reference label is NO_TASHKEEL

    Returns
    -------
    Counts
        position, error and word counts
    """
    counts = Counts()

    for word in pairs:
        counted = word if mode is EvalMode.CE else word[:-1]

        if not include_no_tashkeel:
            counted = [
                x for x in counted if x[0] is not DiacriticClass.NO_TASHKEEL
            ]

        if not counted:
            continue

        errors = sum(ref != hyp for ref, hyp in counted)
        counts.positions += len(counted)
        counts.errors += errors
        counts.words += 1
        counts.wrong_words += bool(errors)

    return counts


def der(pairs, mode=EvalMode.CE, include_no_tashkeel=True) -> float:
    """
    Diacritic error rate as a fraction

    Raises
    ------
    EmptyEvaluationSet
        Raised when no position is counted
    """
    return count_errors(pairs, mode, include_no_tashkeel).der()


def wer(pairs, mode=EvalMode.CE, include_no_tashkeel=True) -> float:
    """
    Word error rate as a fraction: a word is wrong if any of its counted
    positions is

    Raises
    ------
    EmptyEvaluationSet
        Raised when no word is counted
    """
    return count_errors(pairs, mode, include_no_tashkeel).wer()


@dataclass
class EvalReport:
    der_ce: float
    wer_ce: float
    der_noce: float
    wer_noce: float
    positions_ce: int
    positions_noce: int
    words: int
    words_noce: int
    sentences: int
    sentences_skipped: int = 0
    skip_reasons: Dict[str, int] = field(default_factory=dict)
    include_no_tashkeel: bool = True
    confusion: Optional[Dict[str, Dict[str, int]]] = None

    def to_dict(self) -> dict:
        report = {
            x.name: getattr(self, x.name)
            for x in fields(self)
            if x.name != "confusion"
        }

        for metric in ("der_ce", "wer_ce", "der_noce", "wer_noce"):
            report[metric] = round(report[metric], 3)

        if self.confusion is not None:
            report["confusion"] = self.confusion

        return report

    def format_table(self) -> str:
        """Human readable four metric table, percentages to 3 decimals"""
        rows = [
            f"{'':8}{'DER':>10}{'WER':>10}",
            f"{'CE':8}{self.der_ce:>10.3f}{self.wer_ce:>10.3f}",
            f"{'No CE':8}{self.der_noce:>10.3f}{self.wer_noce:>10.3f}",
            "",
            f"sentences: {self.sentences} evaluated,"
            f" {self.sentences_skipped} skipped",
            f"positions: {self.positions_ce} CE, {self.positions_noce} No CE",
            f"words: {self.words}",
        ]

        return "\n".join(rows) + "\n"


def build_report(
    aligned, include_no_tashkeel=True, skip_reasons=None, confusion=False
) -> EvalReport:
    """
    Aggregate counts over aligned sentences into a report

    Parameters
    ----------
    aligned : list
        align() output per evaluated sentence
    include_no_tashkeel : bool
        count reference NO_TASHKEEL positions
    skip_reasons : dict | None
        reason -> number of sentences skipped for it
    confusion : bool
        add reference x hypothesis class counts

    Returns
    -------
    EvalReport
        aggregated report

    Raises
    ------
    EmptyEvaluationSet
        Raised when no position is counted
    """
    ce = Counts()
    noce = Counts()
    matrix = Counter()

    for pairs in aligned:
        ce += count_errors(pairs, EvalMode.CE, include_no_tashkeel)
        noce += count_errors(pairs, EvalMode.NO_CE, include_no_tashkeel)

        if confusion:
            matrix.update((ref, hyp) for word in pairs for ref, hyp in word)

    skip_reasons = dict(skip_reasons or {})

    return EvalReport(
        der_ce=ce.der() * 100,
        wer_ce=ce.wer() * 100,
        der_noce=noce.der() * 100 if noce.positions else 0.0,
        wer_noce=noce.wer() * 100 if noce.words else 0.0,
        positions_ce=ce.positions,
        positions_noce=noce.positions,
        words=ce.words,
        words_noce=noce.words,
        sentences=len(aligned),
        sentences_skipped=sum(skip_reasons.values()),
        skip_reasons=skip_reasons,
        include_no_tashkeel=include_no_tashkeel,
        confusion=(
            {
                ref.tag: {
                    hyp.tag: matrix[(ref, hyp)]
                    for hyp in DiacriticClass
                    if matrix[(ref, hyp)]
                }
                for ref in DiacriticClass
                if any(matrix[(ref, x)] for x in DiacriticClass)
            }
            if confusion
            else None
        ),
    )


def evaluate_corpus(
    ref_file, hyp_file, include_no_tashkeel=True, confusion=False
) -> EvalReport:
    """
    Evaluate a system output file against a line aligned reference file.
    Lines that can not be aligned are skipped and counted by reason.

    Parameters
    ----------
    ref_file : str
        gold diacritized UTF-8 text, one sentence per line
    hyp_file : str
        system output, one sentence per line
    include_no_tashkeel : bool
        count reference NO_TASHKEEL positions
    confusion : bool
        add reference x hypothesis class counts to the report

    Returns
    -------
    EvalReport
        aggregated report

    Raises
    ------
    LineCountMismatch
        Raised when the files differ in number of lines
    """
    with open(ref_file, encoding="utf-8") as fh:
        references = fh.read().splitlines()

    with open(hyp_file, encoding="utf-8") as fh:
        hypotheses = fh.read().splitlines()

    if len(references) != len(hypotheses):
        log.error(
            "%s has %s lines, %s has %s",
            ref_file,
            len(references),
            hyp_file,
            len(hypotheses),
        )
        raise LineCountMismatch(
            f"{ref_file} ({len(references)} lines) and {hyp_file}"
            f" ({len(hypotheses)} lines) are not line aligned"
        )

    aligned = []
    skip_reasons = Counter()

    for line_no, (reference, hypothesis) in enumerate(
        zip(references, hypotheses), 1
    ):
        try:
            pairs = align(reference, hypothesis)
        except InvalidMarkCombination as err:
            log.warning(
                "Skipping line %s, invalid reference: %s", line_no, err
            )
            skip_reasons["invalid_reference"] += 1
            continue
        except SkeletonMismatch as err:
            log.warning("Skipping line %s: %s", line_no, err)
            skip_reasons["skeleton_mismatch"] += 1
            continue

        if not pairs:
            skip_reasons["empty"] += 1
            continue

        aligned.append(pairs)

    if skip_reasons:
        log.warning(
            "Skipped %s of %s sentences: %s",
            sum(skip_reasons.values()),
            len(references),
            dict(skip_reasons),
        )

    return build_report(
        aligned,
        include_no_tashkeel=include_no_tashkeel,
        skip_reasons=skip_reasons,
        confusion=confusion,
    )
