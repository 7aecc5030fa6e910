"""Fixed symbol table shared by the benchmark generators and the decoder.

The table is a closed vocabulary of 64 ids: a handful of control tokens,
the scene words (colors, shapes, relations, directions), digits, and task
markers used by the question templates. Ids are stable across runs; the
table is serialized into every checkpoint manifest so saved models stay
self-describing.
"""

from __future__ import annotations

from .errors import InvalidArgumentError

PAD = "<pad>"
BOS = "<bos>"
ANS = "<ans>"
END = "<end>"

_WORDS = [
    PAD, BOS, ANS, END,
    # task markers
    "rel", "count", "mot", "view", "cap",
    # colors
    "red", "green", "blue", "yellow",
    # shapes
    "square", "circle", "triangle",
    # relation answers
    "left", "right", "above", "below",
    # extra motion answers
    "up", "down", "none",
    # yes/no answers
    "yes", "no",
    # counting answers
    "1", "2", "3", "4", "5", "6",
    # template punctuation
    "opt", "?",
]

VOCAB_SIZE = 64

_ID = {w: i for i, w in enumerate(_WORDS)}

PAD_ID = _ID[PAD]
BOS_ID = _ID[BOS]
ANS_ID = _ID[ANS]
END_ID = _ID[END]


def token_id(word: str) -> int:
    if word not in _ID:
        raise InvalidArgumentError(f"unknown symbol {word!r}")
    return _ID[word]


def token_ids(words: list[str]) -> list[int]:
    return [token_id(w) for w in words]


def token_word(i: int) -> str:
    if not 0 <= i < VOCAB_SIZE:
        raise InvalidArgumentError(f"token id {i} outside vocabulary of size {VOCAB_SIZE}")
    return _WORDS[i] if i < len(_WORDS) else f"<unused{i}>"


def token_words(ids: list[int]) -> list[str]:
    return [token_word(i) for i in ids]


def symbol_table() -> list[str]:
    """The full table in id order, including reserved unused slots."""
    return [token_word(i) for i in range(VOCAB_SIZE)]
