"""
Codec between diacritized Arabic text and (letter skeleton, label
sequence) pairs, plus the normalization applied before encoding.

Labels are one of the 15 diacritic classes; each class has a canonical
mark string of at most two codepoints, with shadda always emitted first.
"""

from dataclasses import dataclass, field
from enum import Enum, IntEnum
import hashlib
from typing import List, Tuple, Union

from .errors import InvalidMarkCombination, NoLetters
from .log import get_logger

log = get_logger("tashkeel")


FATHATAN = "\u064b"
DAMMATAN = "\u064c"
KASRATAN = "\u064d"
FATHA = "\u064e"
DAMMA = "\u064f"
KASRA = "\u0650"
SHADDA = "\u0651"
SUKUN = "\u0652"

SPACE = " "

DIACRITIC_MARKS = frozenset(chr(x) for x in range(0x064B, 0x0653))

# hamza / alef forms (0622, 0623, 0625) and ta marbuta (0629) fall inside
# the first block; tatweel (0640) and superscript alef (0670) are excluded
ARABIC_LETTERS = frozenset(
    [chr(x) for x in range(0x0621, 0x063B)]
    + [chr(x) for x in range(0x0641, 0x064B)]
)


class CodepointKind(Enum):
    ARABIC_LETTER = "ArabicLetter"
    DIACRITIC_MARK = "DiacriticMark"
    SPACE = "Space"
    OTHER = "Other"


class DiacriticClass(IntEnum):
    FATHA = 0
    KASRA = 1
    DHAMMA = 2
    TANWEEN_FATH = 3
    TANWEEN_KASR = 4
    TANWEEN_DHAMM = 5
    SHADDA = 6
    SHADDA_FATHA = 7
    SHADDA_KASRA = 8
    SHADDA_DHAMMA = 9
    SHADDA_TANWEEN_FATH = 10
    SHADDA_TANWEEN_KASR = 11
    SHADDA_TANWEEN_DHAMM = 12
    SUKOON = 13
    NO_TASHKEEL = 14

    @property
    def tag(self) -> str:
        """Class name as written in the exported class table"""
        return "".join(x.capitalize() for x in self.name.split("_"))

    @property
    def marks(self) -> str:
        """Canonical mark string, shadda first"""
        return _CLASS_MARKS[self]


N_CLASSES = len(DiacriticClass)

_CLASS_MARKS = {
    DiacriticClass.FATHA: FATHA,
    DiacriticClass.KASRA: KASRA,
    DiacriticClass.DHAMMA: DAMMA,
    DiacriticClass.TANWEEN_FATH: FATHATAN,
    DiacriticClass.TANWEEN_KASR: KASRATAN,
    DiacriticClass.TANWEEN_DHAMM: DAMMATAN,
    DiacriticClass.SHADDA: SHADDA,
    DiacriticClass.SHADDA_FATHA: SHADDA + FATHA,
    DiacriticClass.SHADDA_KASRA: SHADDA + KASRA,
    DiacriticClass.SHADDA_DHAMMA: SHADDA + DAMMA,
    DiacriticClass.SHADDA_TANWEEN_FATH: SHADDA + FATHATAN,
    DiacriticClass.SHADDA_TANWEEN_KASR: SHADDA + KASRATAN,
    DiacriticClass.SHADDA_TANWEEN_DHAMM: SHADDA + DAMMATAN,
    DiacriticClass.SUKOON: SUKUN,
    DiacriticClass.NO_TASHKEEL: "",
}

_MARKS_TO_CLASS = {frozenset(v): k for k, v in _CLASS_MARKS.items()}


@dataclass(frozen=True)
class LabeledSequence:
    """
    Aligned letter skeleton and per letter diacritic class.

    `letters` holds Arabic letters and single inner spaces; every space
    carries NO_TASHKEEL. `dropped_marks` and `provenance` are bookkeeping
    and take no part in equality.
    """

    letters: str
    labels: Tuple[DiacriticClass, ...]
    dropped_marks: int = field(default=0, compare=False)
    provenance: str = field(default="gold", compare=False)

    def __post_init__(self):
        object.__setattr__(
            self, "labels", tuple(DiacriticClass(x) for x in self.labels)
        )

        if len(self.letters) != len(self.labels):
            raise ValueError(
                f"letters ({len(self.letters)}) and labels"
                f" ({len(self.labels)}) differ in length"
            )

        if self.letters.startswith(SPACE) or self.letters.endswith(SPACE):
            raise ValueError("letter skeleton has a leading or trailing space")

        if SPACE * 2 in self.letters:
            raise ValueError("letter skeleton has consecutive spaces")

        for idx, (char, label) in enumerate(zip(self.letters, self.labels)):
            if char == SPACE:
                if label is not DiacriticClass.NO_TASHKEEL:
                    raise ValueError(
                        f"space at position {idx} labelled {label.tag}"
                    )
            elif char not in ARABIC_LETTERS:
                raise ValueError(
                    f"U+{ord(char):04X} at position {idx} is not an Arabic"
                    " letter"
                )

    def __len__(self):
        return len(self.letters)

    @property
    def n_letters(self) -> int:
        return len(self.letters) - self.letters.count(SPACE)

    def word_spans(self) -> List[Tuple[int, int]]:
        """
        Start (inclusive) and end (exclusive) positions of every word

        Returns
        -------
        list
            list of (start, end) tuples in order
        """
        spans = []
        start = 0

        for idx, char in enumerate(self.letters):
            if char == SPACE:
                spans.append((start, idx))
                start = idx + 1

        if self.letters:
            spans.append((start, len(self.letters)))

        return spans


def classify_codepoint(cp: Union[str, int]) -> CodepointKind:
    """
    Classify a single codepoint

    Parameters
    ----------
    cp : str | int
        single character or integer codepoint

    Returns
    -------
    CodepointKind
        kind of the codepoint
    """
    char = chr(cp) if isinstance(cp, int) else cp

    if char in DIACRITIC_MARKS:
        return CodepointKind.DIACRITIC_MARK
    if char in ARABIC_LETTERS:
        return CodepointKind.ARABIC_LETTER
    if char == SPACE:
        return CodepointKind.SPACE

    return CodepointKind.OTHER


def _canonical_mark_run(marks) -> str:
    """Deduplicate a mark run and move shadda to the front"""
    unique = list(dict.fromkeys(marks))

    if SHADDA in unique:
        unique.remove(SHADDA)
        unique.insert(0, SHADDA)

    return "".join(unique)


def normalize(text) -> str:
    """
    Remove everything but Arabic letters, diacritic marks and single
    inner spaces, and put every letter's mark run in canonical order.
    Marks with no letter before them are dropped.

    Whitespace of any kind is folded to a plain space first so words
    separated by tabs or newlines stay separate.

    Parameters
    ----------
    text : str
        text to normalize

    Returns
    -------
    str
        normalized text, may be empty
    """
    kept = []

    for char in text:
        if char.isspace():
            char = SPACE

        kind = classify_codepoint(char)

        if kind is CodepointKind.OTHER:
            continue

        # spaces and marks need a preceding letter run
        if kind is not CodepointKind.ARABIC_LETTER and (
            not kept or kept[-1] == SPACE
        ):
            continue

        kept.append(char)

    while kept and kept[-1] == SPACE:
        kept.pop()

    output = []
    idx = 0

    while idx < len(kept):
        char = kept[idx]
        output.append(char)
        idx += 1

        if classify_codepoint(char) is not CodepointKind.ARABIC_LETTER:
            continue

        end = idx
        while end < len(kept) and kept[end] in DIACRITIC_MARKS:
            end += 1

        output.append(_canonical_mark_run(kept[idx:end]))
        idx = end

    return "".join(output)


def marks_to_class(marks, position=0, strict=True) -> DiacriticClass:
    """
    Map the mark run following one letter to its diacritic class

    Parameters
    ----------
    marks : str
        marks following the letter, in any order
    position : int
        letter position, reported on error
    strict : bool
        if False, repair invalid runs by keeping shadda (if present) and
        the last other mark

    Returns
    -------
    DiacriticClass
        class of the mark run

    Raises
    ------
    InvalidMarkCombination
        Raised in strict mode when the run is not one of the 15 classes
    """
    key = frozenset(marks)

    if key in _MARKS_TO_CLASS:
        return _MARKS_TO_CLASS[key]

    if strict:
        raise InvalidMarkCombination(position=position, marks=marks)

    others = [x for x in marks if x != SHADDA]
    repaired = ({SHADDA} & key) | ({others[-1]} if others else set())

    return _MARKS_TO_CLASS[frozenset(repaired)]


def encode(text, strict=True) -> LabeledSequence:
    """
    Split normalized text into letters and one diacritic class per letter.

    Marks with no preceding letter (at the start of the text or after a
    space) are dropped and counted on the returned sequence.

    Parameters
    ----------
    text : str
        output of normalize()
    strict : bool
        fail on invalid mark runs if True, else repair them

    Returns
    -------
    LabeledSequence
        aligned letters and labels

    Raises
    ------
    InvalidMarkCombination
        Raised in strict mode for a mark run outside the class table
    ValueError
        Raised if the text contains codepoints normalize() removes
    """
    letters = []
    labels = []
    dropped = 0
    idx = 0

    while idx < len(text):
        char = text[idx]
        kind = classify_codepoint(char)

        if kind is CodepointKind.ARABIC_LETTER:
            end = idx + 1
            while end < len(text) and text[end] in DIACRITIC_MARKS:
                end += 1

            labels.append(
                marks_to_class(
                    text[idx + 1 : end], position=len(letters), strict=strict
                )
            )
            letters.append(char)
            idx = end
            continue

        if kind is CodepointKind.SPACE:
            if letters and letters[-1] != SPACE:
                letters.append(SPACE)
                labels.append(DiacriticClass.NO_TASHKEEL)
        elif kind is CodepointKind.DIACRITIC_MARK:
            dropped += 1
        else:
            raise ValueError(
                f"U+{ord(char):04X} at offset {idx} is not part of normalized"
                " text"
            )

        idx += 1

    if letters and letters[-1] == SPACE:
        letters.pop()
        labels.pop()

    if dropped:
        log.debug("Dropped %s marks with no preceding letter", dropped)

    return LabeledSequence(
        letters="".join(letters), labels=tuple(labels), dropped_marks=dropped
    )


def decode(seq) -> str:
    """
    Interleave letters with the canonical marks of their labels

    Parameters
    ----------
    seq : LabeledSequence
        sequence to render

    Returns
    -------
    str
        diacritized text
    """
    return "".join(
        letter + label.marks for letter, label in zip(seq.letters, seq.labels)
    )


def strip_diacritics(text) -> str:
    """
    Normalize text and remove every diacritic mark

    Parameters
    ----------
    text : str
        text to strip

    Returns
    -------
    str
        bare letter skeleton
    """
    return normalize("".join(x for x in text if x not in DIACRITIC_MARKS))


def count_marks(seq) -> int:
    """Number of mark codepoints in the canonical decoding of seq"""
    return sum(len(x.marks) for x in seq.labels)


def dtl_ratio(seq) -> float:
    """
    Diacritics to letters ratio, counting mark codepoints (so a shadda
    with a vowel counts twice) over Arabic letter positions

    Parameters
    ----------
    seq : LabeledSequence
        encoded sequence

    Returns
    -------
    float
        ratio, may exceed 1

    Raises
    ------
    NoLetters
        Raised when the sequence holds no letters
    """
    if not seq.n_letters:
        raise NoLetters("DTL ratio undefined for a sequence with no letters")

    return count_marks(seq) / seq.n_letters


def class_table_rows() -> List[Tuple[int, str, str]]:
    """
    Rows of the exported class table

    Returns
    -------
    list
        (id, name, codepoints) per class, codepoints as U+XXXX joined by +
    """
    return [
        (
            int(cls),
            cls.tag,
            "+".join(f"U+{ord(x):04X}" for x in cls.marks),
        )
        for cls in DiacriticClass
    ]


def format_class_table() -> str:
    lines = ["id\tname\tcodepoints"]
    lines.extend("\t".join(str(x) for x in row) for row in class_table_rows())

    return "\n".join(lines) + "\n"


def class_table_hash() -> str:
    """SHA-256 of the exported class table, stored in checkpoints"""
    return hashlib.sha256(format_class_table().encode("utf-8")).hexdigest()


def write_class_table(path) -> None:
    """
    Write the class table as TSV so third parties can verify the codec

    Parameters
    ----------
    path : str
        file to write
    """
    log.info("Writing diacritic class table to %s", path)

    with open(path, mode="w", encoding="utf-8") as fh:
        fh.write(format_class_table())


def mark_free(text: str) -> str:
    """Remove diacritic marks only, leaving every other codepoint intact"""
    return "".join(x for x in text if x not in DIACRITIC_MARKS)
