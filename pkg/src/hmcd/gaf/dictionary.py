"""Field-level word dictionaries built from labeled traffic.

Every HTTP message decomposes into (field name, content string) pairs: the
start line contributes one pair (a request's method names the field and the
target is its content; a response uses the status code), and each header
contributes its name and value. Content strings split into words on a fixed
delimiter set; the delimiter runs between words are kept as a template so
that a word sequence can be joined back into a syntactically plausible
string.

Per field, words are partitioned by where they were seen:

- gray: seen in both malicious and benign traffic
- mal:  seen only in malicious traffic
- ben:  seen only in benign traffic

A word must appear strictly more than ``threshold`` times (combined count
for gray words, own-corpus count otherwise) to earn an id. Ids 0 and 1 are
reserved for padding and out-of-vocabulary; content ids are assigned in
(frequency descending, word ascending) order so a rebuild on equal data is
byte-identical.
"""

from __future__ import annotations

import base64
import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from ..errors import CorruptRecord, EmptyCorpus, FormatVersionMismatch
from ..http.message import Flow, HttpMessage

DELIMITERS = frozenset(b"?=&,;:/ ")
PAD_ID = 0
OOV_ID = 1
FIRST_WORD_ID = 2

CLASS_MAL = "mal"
CLASS_GRAY = "gray"
CLASS_BEN = "ben"


def tokenize_content(content: bytes) -> tuple[list[bytes], list[bytes]]:
    """Split into (words, template).

    Words are maximal runs of non-delimiter bytes. The template holds the
    delimiter runs around them: template[0] is the prefix run, template[i]
    the run before word i, template[-1] the suffix run, so that
    rejoin(words, template) == content and len(template) == len(words) + 1.
    """
    words: list[bytes] = []
    template: list[bytes] = []
    word = bytearray()
    run = bytearray()
    for i in range(len(content)):
        b = content[i : i + 1]
        if b[0] in DELIMITERS:
            if word:
                template.append(bytes(run))
                words.append(bytes(word))
                word.clear()
                run.clear()
            run += b
        else:
            word += b
    if word:
        template.append(bytes(run))
        words.append(bytes(word))
        template.append(b"")
    else:
        template.append(bytes(run))
    return words, template


def rejoin(words: Sequence[bytes], template: Sequence[bytes], fill: bytes = b"&") -> bytes:
    """Join words with a delimiter template; exact inverse of tokenize.

    The template's first and last runs stay pinned as prefix and suffix.
    Interior runs separate consecutive words; if the word list is longer
    than the template provides for, ``fill`` separates the extras.
    """
    template = list(template)
    pre = template[0] if template else b""
    post = template[-1] if len(template) >= 2 else b""
    seps = template[1:-1]
    out = bytearray(pre)
    for i, w in enumerate(words):
        if i > 0:
            out += seps[i - 1] if i - 1 < len(seps) else fill
        out += w
    out += post
    return bytes(out)


def message_fields(msg: HttpMessage) -> list[tuple[str, bytes]]:
    """(field name, content) pairs for one message.

    The start line's field is named by the method (requests) or the status
    code (responses); each header's field is its lower-cased name.
    """
    pairs: list[tuple[str, bytes]] = []
    if msg.is_request:
        if msg.method is not None:
            pairs.append((msg.method.decode("latin-1"), msg.target or b""))
    elif msg.status_code is not None:
        pairs.append((str(msg.status_code), msg.reason or b""))
    for name, value in msg.headers:
        pairs.append((name.decode("latin-1").lower(), value))
    return pairs


@dataclass
class WordEntry:
    ident: int
    freq: int
    cls: str  # mal / gray / ben


@dataclass
class FieldVocab:
    words: dict[bytes, WordEntry] = field(default_factory=dict)

    def __post_init__(self):
        self._by_id: dict[int, bytes] | None = None

    def word_of(self, ident: int) -> bytes | None:
        if self._by_id is None:
            self._by_id = {e.ident: w for w, e in self.words.items()}
        return self._by_id.get(ident)

    def id_of(self, word: bytes) -> int:
        entry = self.words.get(word)
        return entry.ident if entry is not None else OOV_ID

    def mal_words(self) -> list[bytes]:
        return sorted(w for w, e in self.words.items() if e.cls == CLASS_MAL)

    def by_class(self, cls: str) -> dict[bytes, WordEntry]:
        """One of the three partition maps (mal / gray / ben)."""
        return {w: e for w, e in self.words.items() if e.cls == cls}

    def size(self) -> int:
        """Highest id + 1; the one-hot width needed to encode this field."""
        if not self.words:
            return FIRST_WORD_ID
        return max(e.ident for e in self.words.values()) + 1


@dataclass
class FieldDictionary:
    threshold: int
    fields: dict[str, FieldVocab] = field(default_factory=dict)

    def vocab(self, field_name: str) -> FieldVocab | None:
        return self.fields.get(field_name)


def _count_words(flows: Iterable[Flow]) -> dict[str, Counter]:
    counts: dict[str, Counter] = {}
    for flow in flows:
        for msg in flow.messages:
            for fname, content in message_fields(msg):
                words, _ = tokenize_content(content)
                if words:
                    counts.setdefault(fname, Counter()).update(words)
    return counts


def build_dictionary(
    mal_flows: Sequence[Flow], ben_flows: Sequence[Flow], threshold: int = 5
) -> FieldDictionary:
    """Count words per field in both corpora and partition the vocabulary."""
    if not mal_flows or not ben_flows:
        raise EmptyCorpus("dictionary needs both a malicious and a benign corpus")
    if threshold < 0:
        raise ValueError(f"threshold must be >= 0, got {threshold}")
    mal_counts = _count_words(mal_flows)
    ben_counts = _count_words(ben_flows)
    fd = FieldDictionary(threshold=threshold)
    for fname in sorted(set(mal_counts) | set(ben_counts)):
        mc = mal_counts.get(fname, Counter())
        bc = ben_counts.get(fname, Counter())
        kept: list[tuple[bytes, int, str]] = []
        for word in set(mc) | set(bc):
            m, b = mc.get(word, 0), bc.get(word, 0)
            if m and b:
                cls, freq = CLASS_GRAY, m + b
            elif m:
                cls, freq = CLASS_MAL, m
            else:
                cls, freq = CLASS_BEN, b
            if freq > threshold:
                kept.append((word, freq, cls))
        if not kept:
            continue
        vocab = FieldVocab()
        kept.sort(key=lambda t: (-t[1], t[0]))
        for ident, (word, freq, cls) in enumerate(kept, start=FIRST_WORD_ID):
            vocab.words[word] = WordEntry(ident=ident, freq=freq, cls=cls)
        fd.fields[fname] = vocab
    return fd


# ---------------------------------------------------------------------------
# persistence: a plain text file, one [field] section per field, one
# word<TAB>id<TAB>freq<TAB>class line per word

_FORMAT = "hmcd-dictionary"
_VERSION = 1
_CLASSES = {CLASS_MAL, CLASS_GRAY, CLASS_BEN}


def _escape(data: bytes) -> str:
    # words never contain the delimiter bytes but may hold tabs or
    # arbitrary high bytes; keep the file one-line-per-word regardless
    return "".join(
        chr(b) if 0x21 <= b <= 0x7E and b != 0x25 else "%%%02X" % b for b in data
    )


def _unescape(text: str) -> bytes:
    out = bytearray()
    i = 0
    while i < len(text):
        if text[i] == "%":
            out.append(int(text[i + 1 : i + 3], 16))
            i += 3
        else:
            out.append(ord(text[i]))
            i += 1
    return bytes(out)


def _dictionary_doc(fd: FieldDictionary) -> dict:
    """Canonical structure hashed to bind GAN checkpoints to a dictionary."""
    return {
        "format": _FORMAT,
        "version": _VERSION,
        "threshold": fd.threshold,
        "fields": {
            fname: {
                base64.b64encode(w).decode("ascii"): [e.ident, e.freq, e.cls]
                for w, e in sorted(vocab.words.items())
            }
            for fname, vocab in sorted(fd.fields.items())
        },
    }


def dictionary_hash(fd: FieldDictionary) -> str:
    blob = json.dumps(_dictionary_doc(fd), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def save_dictionary(fd: FieldDictionary, path: str | Path, meta: dict | None = None) -> None:
    """Write the textual dictionary file; ``meta`` rides along as a comment."""
    lines = [f"# {_FORMAT} v{_VERSION}", f"# threshold {fd.threshold}"]
    if meta:
        lines.append("# meta " + json.dumps(meta, sort_keys=True))
    for fname in sorted(fd.fields):
        vocab = fd.fields[fname]
        lines.append("")
        lines.append("[%s]" % _escape(fname.encode("latin-1")))
        for word, e in sorted(vocab.words.items(), key=lambda kv: kv[1].ident):
            lines.append("%s\t%d\t%d\t%s" % (_escape(word), e.ident, e.freq, e.cls))
    Path(path).write_text("\n".join(lines) + "\n")


def load_dictionary(path: str | Path) -> FieldDictionary:
    raw = Path(path).read_text().splitlines()
    if not raw or raw[0] != f"# {_FORMAT} v{_VERSION}":
        raise FormatVersionMismatch(f"not a {_FORMAT} v{_VERSION} file: {path}")
    threshold: int | None = None
    fd = FieldDictionary(threshold=0)
    current: FieldVocab | None = None
    for lineno, line in enumerate(raw[1:], start=2):
        if not line:
            continue
        if line.startswith("# threshold "):
            threshold = int(line.split()[2])
        elif line.startswith("#"):
            continue
        elif line.startswith("[") and line.endswith("]"):
            current = FieldVocab()
            fd.fields[_unescape(line[1:-1]).decode("latin-1")] = current
        else:
            parts = line.split("\t")
            if len(parts) != 4 or current is None or parts[3] not in _CLASSES:
                raise CorruptRecord(f"bad dictionary line: {line!r}", lineno)
            try:
                entry = WordEntry(int(parts[1]), int(parts[2]), parts[3])
                current.words[_unescape(parts[0])] = entry
            except ValueError as exc:
                raise CorruptRecord(f"bad dictionary line: {exc}", lineno) from exc
    if threshold is None:
        raise FormatVersionMismatch(f"no threshold line in {path}")
    fd.threshold = threshold
    return fd
