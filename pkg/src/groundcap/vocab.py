"""Closed vocabulary and whitespace tokenizer shared by all text-producing code.

The vocabulary is frozen at import time: special tokens first, then the class
labels, colors, size adjectives, relation words and function words used by the
sentence templates.  Token id == line number when dumped to a vocab file.
"""

from __future__ import annotations

PAD = "<pad>"
SOS = "<sos>"
EOS = "<eos>"
UNK = "<unk>"

SPECIAL_TOKENS = [PAD, SOS, EOS, UNK]

CLASS_LABELS = [
    "bed", "bookshelf", "cabinet", "chair", "counter", "curtain", "desk",
    "door", "dresser", "lamp", "monitor", "nightstand", "pillow", "plant",
    "refrigerator", "shelf", "sofa", "table", "toilet", "window",
]

COLOR_NAMES = [
    "red", "green", "blue", "yellow", "white", "black", "brown", "purple",
]

SIZE_ADJECTIVES = ["large", "small"]

RELATION_WORDS = [
    "near", "far", "from", "left", "right", "front", "behind", "beside",
    "of", "in",
]

FUNCTION_WORDS = ["the", "a", "is", "there", "and", "it", "."]

WORDS = CLASS_LABELS + COLOR_NAMES + SIZE_ADJECTIVES + RELATION_WORDS + FUNCTION_WORDS

TOKENS = SPECIAL_TOKENS + WORDS

TOKEN_TO_ID = {tok: i for i, tok in enumerate(TOKENS)}

PAD_ID = TOKEN_TO_ID[PAD]
SOS_ID = TOKEN_TO_ID[SOS]
EOS_ID = TOKEN_TO_ID[EOS]
UNK_ID = TOKEN_TO_ID[UNK]

VOCAB_SIZE = len(TOKENS)

# span_map entries use this id for spans that refer to no scene object
# (negative prompt labels).
NO_OBJECT = -1


class UnknownTokenError(ValueError):
    """Raised when text contains a word outside the closed vocabulary."""


def tokenize(text: str) -> list[str]:
    """Lowercase whitespace tokenization."""
    return text.lower().split()


def encode(text: str, add_specials: bool = True) -> list[int]:
    """Map text to token ids, wrapping with SOS/EOS when ``add_specials``.

    Raises UnknownTokenError on out-of-vocabulary words.
    """
    ids = []
    for tok in tokenize(text):
        if tok not in TOKEN_TO_ID:
            raise UnknownTokenError(f"unknown token {tok!r}")
        ids.append(TOKEN_TO_ID[tok])
    if add_specials:
        return [SOS_ID] + ids + [EOS_ID]
    return ids


def decode(ids, strip_specials: bool = True) -> str:
    """Map token ids back to a space-joined string."""
    words = []
    for i in ids:
        i = int(i)
        if i < 0 or i >= VOCAB_SIZE:
            raise UnknownTokenError(f"token id {i} outside vocabulary")
        if strip_specials and i in (PAD_ID, SOS_ID, EOS_ID):
            continue
        words.append(TOKENS[i])
    return " ".join(words)


def strip_specials(ids) -> list[int]:
    """Drop PAD/SOS/EOS and anything after the first EOS."""
    out = []
    for i in ids:
        i = int(i)
        if i == EOS_ID:
            break
        if i in (PAD_ID, SOS_ID):
            continue
        out.append(i)
    return out


def write_vocab_file(path) -> None:
    """One token per line; token id equals line number."""
    with open(path, "w") as f:
        for tok in TOKENS:
            f.write(tok + "\n")


def read_vocab_file(path) -> list[str]:
    with open(path) as f:
        return [line.rstrip("\n") for line in f if line.strip()]
