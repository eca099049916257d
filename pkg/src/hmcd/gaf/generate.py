"""Generation of adversarial flows: sample field content, splice, validate.

The pipeline trains one GAN per targeted field on benign content sequences
that have had malicious-dictionary words injected at random positions, then
manufactures flows by taking a benign flow as a template, replacing the
targeted fields of its first request with decoded generator output (again
with forced malicious-word insertion), and keeping everything else.

A generated flow only counts if its messages serialize, re-parse strictly,
and re-serialize byte for byte, and if at least one malicious-dictionary
word survives into the wire bytes. Each flow gets a bounded number of
attempts before the pipeline gives up loudly.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Sequence

import numpy as np

from ..errors import InsufficientData, NoTemplates, ValidationFailed
from ..http.message import Direction, Flow, HttpMessage, Label, serialize_message, validate_message
from ..http.parser import parse_http_message
from .dictionary import CLASS_MAL, FieldDictionary, rejoin, tokenize_content
from .encoder import MalPos, TokenSequence, decode_ids, inject_malicious
from .gan import FieldGan, FieldGanConfig, sample_tokens, train_field_gan

START_LINE_FIELD = "@start-line"

MalPosSampler = Callable[[np.random.Generator, str, FieldDictionary, int], list[MalPos]]


@dataclass(frozen=True)
class GenerationConfig:
    fields: tuple[str, ...] = (START_LINE_FIELD, "user-agent")
    max_retries: int = 10
    max_train_sequences: int = 2000
    gan: FieldGanConfig = FieldGanConfig()


def default_mal_pos_sampler(
    rng: np.random.Generator, field_name: str, fd: FieldDictionary, length: int
) -> list[MalPos]:
    """One or two malicious words at distinct random positions."""
    vocab = fd.vocab(field_name)
    mal = vocab.mal_words() if vocab is not None else []
    if not mal:
        return []
    count = int(rng.integers(1, min(2, len(mal), length) + 1))
    positions = rng.choice(length, size=count, replace=False)
    return [MalPos(int(p), mal[int(rng.integers(0, len(mal)))]) for p in positions]


def _encode_words(words: list[bytes], fd: FieldDictionary, field_name: str, length: int):
    vocab = fd.vocab(field_name)
    ids = np.zeros(length, dtype=np.int64)
    for i, w in enumerate(words[:length]):
        ids[i] = vocab.id_of(w) if vocab is not None else 1
    return ids


def _request_field_contents(flows: Sequence[Flow], field_name: str) -> list[bytes]:
    """All request contents of one concrete field across a corpus."""
    out: list[bytes] = []
    for flow in flows:
        for msg in flow.messages:
            if not msg.is_request:
                continue
            if field_name == (msg.method or b"").decode("latin-1"):
                out.append(msg.target or b"")
            else:
                value = msg.header_value(field_name.encode("latin-1"))
                if value is not None:
                    out.append(value)
    return out


def resolve_fields(flows: Sequence[Flow], selectors: Sequence[str]) -> list[str]:
    """Expand selectors to concrete field names present in the corpus.

    The start-line selector becomes one field per request method seen;
    header selectors pass through when any request carries that header.
    """
    methods: list[str] = []
    headers: set[str] = set()
    for flow in flows:
        for msg in flow.messages:
            if msg.is_request:
                m = (msg.method or b"").decode("latin-1")
                if m and m not in methods:
                    methods.append(m)
                headers.update(n.decode("latin-1").lower() for n, _ in msg.headers)
    out: list[str] = []
    for sel in selectors:
        if sel == START_LINE_FIELD:
            out.extend(m for m in methods if m not in out)
        elif sel.lower() in headers and sel.lower() not in out:
            out.append(sel.lower())
    return out


def train_generation_gans(
    benign_flows: Sequence[Flow],
    fd: FieldDictionary,
    config: GenerationConfig = GenerationConfig(),
) -> dict[str, FieldGan]:
    """Train one GAN per targeted field that has data and a vocabulary.

    Training sequences are the benign contents of the field, encoded and
    given random malicious-word insertions, mirroring what generation will
    later splice into templates.
    """
    concrete = resolve_fields(benign_flows, config.fields)
    if not concrete:
        raise NoTemplates("no targeted field occurs in the benign corpus")
    gans: dict[str, FieldGan] = {}
    for field_name in concrete:
        vocab = fd.vocab(field_name)
        if vocab is None:
            continue
        contents = _request_field_contents(benign_flows, field_name)
        if len(contents) > config.max_train_sequences:
            pick_rng = np.random.default_rng([config.gan.seed, 29])
            idx = pick_rng.choice(len(contents), config.max_train_sequences, replace=False)
            contents = [contents[i] for i in sorted(idx)]
        inject_rng = np.random.default_rng([config.gan.seed, 31])
        has_mal = bool(vocab.mal_words())
        sequences: list[TokenSequence] = []
        for content in contents:
            words, template = tokenize_content(content)
            ids = _encode_words(words, fd, field_name, config.gan.seq_len)
            seq = TokenSequence(field_name, ids, tuple(template))
            if has_mal:
                mal_pos = default_mal_pos_sampler(
                    inject_rng, field_name, fd, config.gan.seq_len
                )
                seq = inject_malicious(seq, mal_pos, fd)
            sequences.append(seq)
        if len(sequences) < config.gan.batch_size:
            continue
        gans[field_name] = train_field_gan(
            sequences, vocab.size(), config.gan, field_name=field_name
        )
    if not gans:
        raise InsufficientData(
            "no targeted field had enough sequences to train on "
            f"(fields tried: {concrete}, batch size {config.gan.batch_size})"
        )
    return gans


def sample_and_decode(
    gan: FieldGan,
    fd: FieldDictionary,
    rng: np.random.Generator,
    template_content: bytes = b"",
    mal_pos: list[MalPos] | None = None,
) -> bytes:
    """One generated content string for the GAN's field.

    Tokens come from the generator; malicious words are then forced in (at
    sampled positions unless explicit ``mal_pos`` is given) and the decoded
    words are joined with the template content's delimiter structure.
    """
    z = rng.standard_normal((1, gan.config.noise_dim))
    ids = sample_tokens(gan, z)[0]
    _, template = tokenize_content(template_content)
    seq = TokenSequence(gan.field, ids, tuple(template))
    if mal_pos is None:
        mal_pos = default_mal_pos_sampler(rng, gan.field, fd, gan.config.seq_len)
    if mal_pos:
        seq = inject_malicious(seq, mal_pos, fd)
    words = decode_ids(seq.ids, fd, gan.field)
    return rejoin(words, seq.template)


def _mal_word_bytes(fd: FieldDictionary, fields: Sequence[str]) -> list[bytes]:
    out: list[bytes] = []
    for fname in fields:
        vocab = fd.vocab(fname)
        if vocab:
            out.extend(w for w, e in vocab.words.items() if e.cls == CLASS_MAL)
    return out


def _rewrite_request(
    req: HttpMessage,
    fd: FieldDictionary,
    gans: dict[str, FieldGan],
    rng: np.random.Generator,
    mal_pos_sampler: MalPosSampler,
) -> HttpMessage:
    method_field = (req.method or b"").decode("latin-1")
    out = req
    if method_field in gans:
        content = sample_and_decode(
            gans[method_field], fd, rng, req.target or b"",
            mal_pos_sampler(rng, method_field, fd, gans[method_field].config.seq_len),
        )
        out = replace(out, target=content)
    for field_name, gan in gans.items():
        if field_name == method_field:
            continue
        current = out.header_value(field_name.encode("latin-1"))
        if current is None:
            continue
        content = sample_and_decode(
            gan, fd, rng, current,
            mal_pos_sampler(rng, field_name, fd, gan.config.seq_len),
        )
        out = out.with_header(field_name.encode("latin-1"), content)
    return replace(out, raw=b"")


def _flow_is_valid(flow: Flow, mal_words: list[bytes]) -> bool:
    saw_mal = False
    for msg in flow.messages:
        if validate_message(msg):
            return False
        wire = serialize_message(msg)
        back = parse_http_message(wire, msg.direction, msg.ts_micros)
        if serialize_message(back) != wire:
            return False
        if msg.is_request and any(w in wire for w in mal_words):
            saw_mal = True
    return saw_mal


def generate_flows(
    n: int,
    templates: Sequence[Flow],
    fd: FieldDictionary,
    gans: dict[str, FieldGan],
    mal_pos_sampler: MalPosSampler | None = None,
    seed: int = 0,
    max_retries: int = 10,
) -> list[Flow]:
    """Produce ``n`` labeled-malicious flows spliced from benign templates.

    Raises NoTemplates when no template flow contains a request, and
    ValidationFailed when some flow cannot be made valid within
    ``max_retries`` attempts.
    """
    usable = [t for t in templates if any(m.is_request for m in t.messages)]
    if not usable:
        raise NoTemplates("no template flow contains a request")
    if not gans:
        raise InsufficientData("no trained field GANs supplied")
    sampler = mal_pos_sampler or default_mal_pos_sampler
    mal_words = _mal_word_bytes(fd, list(gans))
    rng = np.random.default_rng([seed, 41])
    out: list[Flow] = []
    for i in range(n):
        flow = None
        for _ in range(max_retries):
            tpl = usable[int(rng.integers(0, len(usable)))]
            rewritten_first = False
            msgs: list[HttpMessage] = []
            for msg in tpl.messages:
                if msg.is_request and not rewritten_first:
                    msgs.append(_rewrite_request(msg, fd, gans, rng, sampler))
                    rewritten_first = True
                else:
                    msgs.append(msg)
            candidate = Flow(
                flow_id=f"gaf-{i:06d}",
                key=tpl.key,
                messages=tuple(msgs),
                label=Label.MALICIOUS,
            )
            if _flow_is_valid(candidate, mal_words):
                flow = candidate
                break
        if flow is None:
            raise ValidationFailed(
                f"could not generate a valid flow for slot {i} in {max_retries} attempts"
            )
        out.append(flow)
    return out
