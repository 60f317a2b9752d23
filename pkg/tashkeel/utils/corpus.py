"""
Corpus preparation: fine-tuning filter, pretraining truncation,
punctuation chunking for long inputs, character vocabulary and batching
"""

from collections import Counter
from dataclasses import asdict, dataclass, field, fields
import hashlib
import json
import random
import re
from typing import Dict, Iterable, Iterator, List, Optional, Tuple

import torch

from .arabic_text import (
    ARABIC_LETTERS,
    SPACE,
    DiacriticClass,
    LabeledSequence,
    decode,
    dtl_ratio,
    encode,
    normalize,
    strip_diacritics,
)
from .errors import CountMismatch, EmptyCorpus, SequenceTooLong, TashkeelError
from .log import get_logger

log = get_logger("tashkeel")

IGNORE = -100

PUNCTUATION_SEPARATORS = ".,;:!?،؛؟\n"

# a separator is one punctuation mark plus any punctuation and plain
# whitespace directly following it, kept verbatim
_PUNCTUATION_CLASS = re.escape(PUNCTUATION_SEPARATORS)
_SEPARATOR_REGEX = re.compile(
    rf"[{_PUNCTUATION_CLASS}][{_PUNCTUATION_CLASS} \t\r]*"
)


@dataclass
class CorpusStats:
    total_in: int = 0
    kept: int = 0
    dropped_length: int = 0
    dropped_dtl: int = 0
    dropped_encode_error: int = 0
    dropped_malformed: int = 0
    chars_kept: int = 0
    words_kept: int = 0

    def __add__(self, other):
        return CorpusStats(
            **{
                x.name: getattr(self, x.name) + getattr(other, x.name)
                for x in fields(self)
            }
        )

    @property
    def dropped(self) -> int:
        return (
            self.dropped_length
            + self.dropped_dtl
            + self.dropped_encode_error
            + self.dropped_malformed
        )

    def is_balanced(self) -> bool:
        return self.total_in == self.kept + self.dropped

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class FilterConfig:
    """Thresholds of the fine-tuning corpus filter"""

    min_len: int = 6
    max_len: int = 1024
    min_dtl: float = 0.60

    def config_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(asdict(self), sort_keys=True).encode()
        ).hexdigest()


def _decode_line(line) -> Optional[str]:
    """Decode a raw line to str, None if it is not valid UTF-8"""
    if isinstance(line, bytes):
        try:
            line = line.decode("utf-8")
        except UnicodeDecodeError:
            return None

    return line.rstrip("\r\n")


def iter_finetune(lines, config, stats) -> Iterator[LabeledSequence]:
    """
    Lazily filter diacritized lines, updating `stats` in place as lines
    are consumed.

    Each line is normalized and encoded in repair mode; the length rule
    is applied to the canonical rendering of the repaired sequence
    (letters + marks + spaces) so that filtering its own output drops
    nothing.

    Parameters
    ----------
    lines : iterable
        str or bytes lines of diacritized text
    config : FilterConfig
        filter thresholds
    stats : CorpusStats
        counters to update

    Yields
    ------
    LabeledSequence
        surviving sequences
    """
    for line in lines:
        stats.total_in += 1
        text = _decode_line(line)

        if text is None:
            stats.dropped_malformed += 1
            log.debug("Skipping malformed UTF-8 line %s", stats.total_in)
            continue

        try:
            seq = encode(normalize(text), strict=False)
            canonical = decode(seq)

            if not config.min_len <= len(canonical) <= config.max_len:
                stats.dropped_length += 1
                continue

            ratio = dtl_ratio(seq)
        except TashkeelError as err:
            stats.dropped_encode_error += 1
            log.debug("Line %s failed encoding: %s", stats.total_in, err)
            continue

        if ratio < config.min_dtl:
            stats.dropped_dtl += 1
            continue

        stats.kept += 1
        stats.chars_kept += len(canonical)
        stats.words_kept += len(seq.word_spans())

        yield seq


def filter_finetune(
    lines, config=None
) -> Tuple[List[LabeledSequence], CorpusStats]:
    """
    Apply the fine-tuning length and DTL filters to diacritized lines

    Parameters
    ----------
    lines : iterable
        str or bytes lines of diacritized text
    config : FilterConfig
        filter thresholds, defaults to 6 / 1024 / 0.60

    Returns
    -------
    list
        surviving LabeledSequence records in input order
    CorpusStats
        exact counts of kept and dropped lines
    """
    config = config or FilterConfig()
    stats = CorpusStats()
    kept = list(iter_finetune(lines, config, stats))

    log.info(
        "Filtered %s lines: %s kept | %s too short / long | %s below DTL %s"
        " | %s encode errors | %s malformed",
        stats.total_in,
        stats.kept,
        stats.dropped_length,
        stats.dropped_dtl,
        config.min_dtl,
        stats.dropped_encode_error,
        stats.dropped_malformed,
    )

    return kept, stats


def truncate_at_space(text, max_len) -> str:
    """
    Truncate text to at most max_len characters at the last space at or
    before max_len, dropping the partial final word. Text with no such
    space is cut hard at max_len.

    Parameters
    ----------
    text : str
        text to truncate
    max_len : int
        maximum length

    Returns
    -------
    str
        truncated text
    """
    if len(text) <= max_len:
        return text

    cut = text.rfind(SPACE, 0, max_len + 1)

    if cut <= 0:
        return text[:max_len]

    return text[:cut]


def prepare_pretrain(lines, max_len=512) -> Iterator[str]:
    """
    Turn raw lines into bare letter skeletons of at most max_len
    characters for MLM pretraining

    Parameters
    ----------
    lines : iterable
        str or bytes lines
    max_len : int
        maximum output length

    Yields
    ------
    str
        non-empty bare lines
    """
    for line in lines:
        text = _decode_line(line)

        if text is None:
            continue

        text = truncate_at_space(strip_diacritics(text), max_len)

        if text:
            yield text


def _split_long(segment, separator, max_len) -> List[Tuple[str, str]]:
    """Split one over-long segment at the last space under max_len"""
    pieces = []

    while len(segment) > max_len:
        cut = segment.rfind(SPACE, 0, max_len + 1)

        if cut <= 0:
            pieces.append((segment[:max_len], ""))
            segment = segment[max_len:]
        else:
            pieces.append((segment[:cut], SPACE))
            segment = segment[cut + 1 :]

    pieces.append((segment, separator))

    return pieces


def chunk_for_inference(text, max_len=1024) -> List[Tuple[str, str]]:
    """
    Split raw text on punctuation into (segment, separator) pairs whose
    concatenation reproduces the text exactly. Segments longer than
    max_len are further split at the last space under the limit.

    Parameters
    ----------
    text : str
        raw text, may hold punctuation and diacritics
    max_len : int
        maximum segment length

    Returns
    -------
    list
        list of (segment, separator) tuples
    """
    chunks = []
    start = 0

    for match in _SEPARATOR_REGEX.finditer(text):
        chunks.extend(
            _split_long(text[start : match.start()], match.group(0), max_len)
        )
        start = match.end()

    if start < len(text) or not chunks:
        chunks.extend(_split_long(text[start:], "", max_len))

    return chunks


def recombine(segments, separators) -> str:
    """
    Interleave (diacritized) segments with their separators

    Parameters
    ----------
    segments : list
        segments in order
    separators : list
        separator following each segment

    Returns
    -------
    str
        reconstructed text

    Raises
    ------
    CountMismatch
        Raised when the two lists differ in length
    """
    if len(segments) != len(separators):
        raise CountMismatch(
            f"{len(segments)} segments can not be combined with"
            f" {len(separators)} separators"
        )

    return "".join(x + y for x, y in zip(segments, separators))


@dataclass
class CharVocab:
    """
    Bidirectional map between input characters and integer ids. Ids 0-3
    are reserved for the special tokens.
    """

    chars: List[str]
    id_of: Dict[str, int] = field(init=False, repr=False)

    PAD = 0
    MASK = 1
    BOS = 2
    UNK = 3
    SPECIALS = ("<pad>", "<mask>", "<bos>", "<unk>")

    def __post_init__(self):
        if len(set(self.chars)) != len(self.chars):
            raise ValueError("vocabulary characters are not unique")

        self.id_of = {
            char: idx
            for idx, char in enumerate(self.chars, len(self.SPECIALS))
        }

    def __len__(self):
        return len(self.SPECIALS) + len(self.chars)

    def char_of(self, idx) -> str:
        if idx < len(self.SPECIALS):
            return self.SPECIALS[idx]

        return self.chars[idx - len(self.SPECIALS)]

    def lookup(self, char) -> int:
        return self.id_of.get(char, self.UNK)

    def encode(self, text) -> List[int]:
        return [self.lookup(x) for x in text]

    @property
    def space_id(self) -> int:
        return self.lookup(SPACE)

    def to_dict(self) -> dict:
        return {"specials": list(self.SPECIALS), "chars": self.chars}

    @classmethod
    def from_dict(cls, data):
        if tuple(data.get("specials", cls.SPECIALS)) != cls.SPECIALS:
            raise ValueError(
                f"vocabulary specials {data.get('specials')} do not match"
                f" {list(cls.SPECIALS)}"
            )

        return cls(chars=list(data["chars"]))

    def vocab_hash(self) -> str:
        return hashlib.sha256(
            json.dumps(self.to_dict(), ensure_ascii=False).encode("utf-8")
        ).hexdigest()


def build_vocab(corpus) -> CharVocab:
    """
    Build the input vocabulary from normalized text: letters most frequent
    first with ties broken by codepoint, then the space. Diacritic marks
    are not part of it.

    Parameters
    ----------
    corpus : iterable
        normalized lines (diacritized or bare)

    Returns
    -------
    CharVocab
        frozen vocabulary

    Raises
    ------
    EmptyCorpus
        Raised when the corpus holds no letters
    """
    counts = Counter()

    for line in corpus:
        counts.update(x for x in line if x in ARABIC_LETTERS or x == SPACE)

    if not any(x in ARABIC_LETTERS for x in counts):
        raise EmptyCorpus("no Arabic letters found to build vocabulary from")

    chars = sorted(
        (x for x in counts if x != SPACE), key=lambda x: (-counts[x], ord(x))
    )

    if SPACE in counts:
        chars.append(SPACE)

    log.info("Built vocabulary of %s characters", len(chars))

    return CharVocab(chars=chars)


@dataclass
class Batch:
    token_ids: torch.Tensor
    label_ids: torch.Tensor
    attention_mask: torch.Tensor

    @property
    def lengths(self) -> torch.Tensor:
        return self.attention_mask.sum(dim=1)

    def decoder_targets(self) -> torch.Tensor:
        """Gold class ids with spaces and padding filled as NO_TASHKEEL"""
        return self.label_ids.masked_fill(
            self.label_ids == IGNORE, int(DiacriticClass.NO_TASHKEEL)
        )


def collate(seqs, vocab, max_len) -> Batch:
    """
    Pad a list of sequences into one batch; spaces and padding carry
    IGNORE labels

    Parameters
    ----------
    seqs : list
        LabeledSequence records
    vocab : CharVocab
        input vocabulary
    max_len : int
        maximum allowed sequence length

    Returns
    -------
    Batch
        padded batch

    Raises
    ------
    SequenceTooLong
        Raised when a sequence is longer than max_len
    """
    for idx, seq in enumerate(seqs):
        if len(seq) > max_len:
            raise SequenceTooLong(index=idx, length=len(seq), max_len=max_len)

    width = max(len(x) for x in seqs)

    token_ids = torch.full((len(seqs), width), vocab.PAD, dtype=torch.long)
    label_ids = torch.full((len(seqs), width), IGNORE, dtype=torch.long)
    attention_mask = torch.zeros((len(seqs), width), dtype=torch.long)

    for row, seq in enumerate(seqs):
        length = len(seq)
        token_ids[row, :length] = torch.tensor(vocab.encode(seq.letters))
        attention_mask[row, :length] = 1
        label_ids[row, :length] = torch.tensor(
            [
                IGNORE if char == SPACE else int(label)
                for char, label in zip(seq.letters, seq.labels)
            ]
        )

    return Batch(
        token_ids=token_ids, label_ids=label_ids, attention_mask=attention_mask
    )


def make_batches(
    seqs, vocab, batch_size=32, max_len=1024, shuffle_seed=None
) -> Iterator[Batch]:
    """
    Yield padded batches, shuffled deterministically when a seed is given

    Parameters
    ----------
    seqs : list
        LabeledSequence records
    vocab : CharVocab
        input vocabulary
    batch_size : int
        sequences per batch, the last batch may be smaller
    max_len : int
        maximum allowed sequence length
    shuffle_seed : int | None
        seed for the order of sequences, None keeps input order

    Yields
    ------
    Batch
        padded batches
    """
    order = list(range(len(seqs)))

    if shuffle_seed is not None:
        random.Random(shuffle_seed).shuffle(order)

    for start in range(0, len(order), batch_size):
        yield collate(
            [seqs[x] for x in order[start : start + batch_size]],
            vocab=vocab,
            max_len=max_len,
        )


def split_validation(seqs, eval_fraction, seed) -> Tuple[list, list]:
    """
    Carve a deterministic validation split from the corpus

    Parameters
    ----------
    seqs : list
        full corpus
    eval_fraction : float
        fraction to hold out, at least one record is held out
    seed : int
        shuffle seed

    Returns
    -------
    list
        training records
    list
        validation records
    """
    order = list(range(len(seqs)))
    random.Random(seed).shuffle(order)

    n_eval = max(1, round(len(seqs) * eval_fraction))
    held_out = set(order[:n_eval])

    return (
        [x for idx, x in enumerate(seqs) if idx not in held_out],
        [x for idx, x in enumerate(seqs) if idx in held_out],
    )
