"""Encoding field contents as fixed-length id sequences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import PositionOutOfRange, WordNotInMalDict
from .dictionary import (
    CLASS_MAL,
    FieldDictionary,
    OOV_ID,
    PAD_ID,
    tokenize_content,
)


@dataclass(frozen=True)
class MalPos:
    """One forced insertion: put ``word`` at token ``position``."""

    position: int
    word: bytes


@dataclass
class TokenSequence:
    field: str
    ids: np.ndarray  # (L,) int64
    template: tuple[bytes, ...]

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.ids.ndim != 1:
            raise ValueError(f"ids must be 1-D, got shape {self.ids.shape}")


def encode_field(
    content: bytes, fd: FieldDictionary, field: str, length: int
) -> TokenSequence:
    """Tokenize and map words to ids, truncated / PAD-filled to ``length``.

    Unknown words (and every word of a field with no vocabulary) map to the
    OOV id. The delimiter template is kept in full for later rejoining.
    """
    if length < 1:
        raise ValueError(f"length must be >= 1, got {length}")
    words, template = tokenize_content(content)
    vocab = fd.vocab(field)
    ids = np.full(length, PAD_ID, dtype=np.int64)
    for i, w in enumerate(words[:length]):
        ids[i] = vocab.id_of(w) if vocab is not None else OOV_ID
    return TokenSequence(field=field, ids=ids, template=tuple(template))


def decode_ids(ids: np.ndarray, fd: FieldDictionary, field: str) -> list[bytes]:
    """Map ids back to words; PAD and OOV produce nothing."""
    vocab = fd.vocab(field)
    words: list[bytes] = []
    for ident in np.asarray(ids).tolist():
        if ident in (PAD_ID, OOV_ID) or vocab is None:
            continue
        w = vocab.word_of(int(ident))
        if w is not None:
            words.append(w)
    return words


def inject_malicious(
    seq: TokenSequence, mal_pos: list[MalPos] | tuple[MalPos, ...], fd: FieldDictionary
) -> TokenSequence:
    """Overwrite token positions with malicious-dictionary word ids.

    Every word must come from the field's mal partition; that is the whole
    point of the insertion, so anything else raises WordNotInMalDict.
    """
    vocab = fd.vocab(seq.field)
    ids = seq.ids.copy()
    for mp in mal_pos:
        if not 0 <= mp.position < len(ids):
            raise PositionOutOfRange(
                f"position {mp.position} outside sequence of length {len(ids)}"
            )
        entry = vocab.words.get(mp.word) if vocab is not None else None
        if entry is None or entry.cls != CLASS_MAL:
            raise WordNotInMalDict(
                f"{mp.word!r} is not a malicious-dictionary word of field {seq.field!r}"
            )
        ids[mp.position] = entry.ident
    return TokenSequence(field=seq.field, ids=ids, template=seq.template)
