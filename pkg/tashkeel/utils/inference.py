"""
Diacritizing raw text with a trained checkpoint
"""

from typing import List

import torch

from .arabic_text import (
    ARABIC_LETTERS,
    SPACE,
    DiacriticClass,
    LabeledSequence,
    mark_free,
    normalize,
)
from .checkpoint import load_checkpoint
from .corpus import IGNORE, chunk_for_inference, collate, recombine
from .errors import CountMismatch
from .log import get_logger
from .model import predict

log = get_logger("tashkeel")


def forced_space_labels(token_ids, vocab) -> torch.Tensor:
    """NO_TASHKEEL at space positions, IGNORE everywhere else"""
    if SPACE not in vocab.id_of:
        return torch.full_like(token_ids, IGNORE)

    return torch.where(
        token_ids == vocab.space_id,
        torch.full_like(token_ids, int(DiacriticClass.NO_TASHKEEL)),
        torch.full_like(token_ids, IGNORE),
    )


def apply_labels(raw_segment, seq) -> str:
    """
    Write predicted marks after each letter of a mark free raw segment,
    leaving every other codepoint where it was

    Parameters
    ----------
    raw_segment : str
        raw text with diacritics removed
    seq : LabeledSequence
        labels predicted for normalize(raw_segment)

    Returns
    -------
    str
        diacritized segment

    Raises
    ------
    CountMismatch
        Raised when the segment letters do not match the sequence
    """
    labelled = iter(
        (letter, label)
        for letter, label in zip(seq.letters, seq.labels)
        if letter != SPACE
    )
    output = []

    for char in raw_segment:
        output.append(char)

        if char not in ARABIC_LETTERS:
            continue

        letter, label = next(labelled, (None, None))

        if letter != char:
            raise CountMismatch(
                f"segment letter {char!r} does not match labelled letter"
                f" {letter!r}"
            )

        output.append(label.marks)

    if next(labelled, None) is not None:
        raise CountMismatch("labelled sequence has more letters than segment")

    return "".join(output)


class Diacritizer:
    """
    Wraps a trained eo or ed model for batched inference over text of any
    length

    Parameters
    ----------
    model : DiacritizationTransformer
        trained model in eval mode
    vocab : CharVocab
        its input vocabulary
    batch_size : int
        segments per forward pass
    """

    def __init__(self, model, vocab, batch_size=32):
        if model.config.arch not in ("eo", "ed"):
            raise ValueError(
                f"a {model.config.arch} model can not diacritize text"
            )

        self.model = model
        self.vocab = vocab
        self.batch_size = batch_size

    @classmethod
    def from_checkpoint(cls, path, batch_size=32):
        model, vocab, _ = load_checkpoint(path)

        return cls(model, vocab, batch_size=batch_size)

    @property
    def max_len(self) -> int:
        return self.model.config.max_len

    def _predict(self, pieces) -> List[tuple]:
        """Labels for a list of bare skeletons each within max_len"""
        labels = [()] * len(pieces)
        todo = [idx for idx, piece in enumerate(pieces) if piece]

        for start in range(0, len(todo), self.batch_size):
            idxs = todo[start : start + self.batch_size]
            batch = collate(
                [
                    LabeledSequence(
                        letters=pieces[x],
                        labels=(DiacriticClass.NO_TASHKEEL,) * len(pieces[x]),
                    )
                    for x in idxs
                ],
                vocab=self.vocab,
                max_len=self.max_len,
            )
            prediction = predict(
                self.model,
                batch.token_ids,
                batch.attention_mask,
                forced_labels=forced_space_labels(batch.token_ids, self.vocab),
            )

            for row, idx in enumerate(idxs):
                length = len(pieces[idx])
                labels[idx] = tuple(prediction[row, :length].tolist())

        return labels

    def label_skeletons(
        self, skeletons, provenance="pseudo"
    ) -> List[LabeledSequence]:
        """
        Predict a class for every letter of normalized bare skeletons,
        splitting those longer than max_len at spaces

        Parameters
        ----------
        skeletons : list
            bare normalized lines
        provenance : str
            provenance recorded on the returned sequences

        Returns
        -------
        list
            one LabeledSequence per skeleton with identical letters
        """
        pieces = []
        owners = []

        for idx, skeleton in enumerate(skeletons):
            chunks = chunk_for_inference(skeleton, self.max_len)

            for segment, separator in chunks:
                pieces.append(segment)
                owners.append((idx, separator))

        predicted = self._predict(pieces)
        labels = [[] for _ in skeletons]

        for (idx, separator), piece_labels in zip(owners, predicted):
            labels[idx].extend(piece_labels)
            labels[idx].extend([DiacriticClass.NO_TASHKEEL] * len(separator))

        return [
            LabeledSequence(letters=x, labels=tuple(y), provenance=provenance)
            for x, y in zip(skeletons, labels)
        ]

    def diacritize_lines(self, lines) -> List[str]:
        """
        Diacritize raw lines. Existing marks are replaced, punctuation and
        any other codepoints are kept in place.

        Parameters
        ----------
        lines : list
            raw text lines without newlines

        Returns
        -------
        list
            diacritized lines in input order
        """
        chunked = [
            chunk_for_inference(mark_free(line), self.max_len)
            for line in lines
        ]
        segments = [segment for chunks in chunked for segment, _ in chunks]
        labelled = iter(
            self.label_skeletons(
                [normalize(x) for x in segments], provenance="predicted"
            )
        )

        output = []

        for chunks in chunked:
            output.append(
                recombine(
                    [
                        apply_labels(segment, next(labelled))
                        for segment, _ in chunks
                    ],
                    [separator for _, separator in chunks],
                )
            )

        log.debug(
            "Diacritized %s lines in %s segments", len(lines), len(segments)
        )

        return output

    def diacritize_line(self, line) -> str:
        return self.diacritize_lines([line])[0]
