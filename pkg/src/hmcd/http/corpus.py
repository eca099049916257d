"""Flow corpus serialization: NDJSON records plus a manifest sidecar.

Line 1 of the corpus file is a format header; each following line is one
flow: its id, label, quintuple, and messages as (direction, timestamp,
base64 wire bytes) triples. Storing wire bytes rather than parsed fields
keeps the file language-neutral and byte-exact; load re-parses leniently,
which reproduces exactly the message the bytes originally parsed to.
Messages that were synthesized rather than captured (no raw bytes) are
serialized strictly at save time.

The sidecar at ``<path>.manifest`` records counts, a source tag and a
checksum; load refuses corpora whose sidecar does not match, so silent
truncation cannot leak into an experiment.
"""

from __future__ import annotations

import base64
import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

from ..errors import (
    CorruptRecord,
    FormatVersionMismatch,
    InvalidMessage,
    ManifestMismatch,
    MessageParseError,
)
from .message import (
    Direction,
    Flow,
    FlowKey,
    HttpMessage,
    Label,
    messages_equivalent,
    serialize_message,
)
from .parser import parse_http_message

FORMAT_NAME = "hmcd-corpus"
FORMAT_VERSION = 1


@dataclass
class CorpusManifest:
    format: str
    version: int
    records: int
    labels: dict[str, int]
    sha256: str
    response_only_flows: int
    source: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(text: str) -> bytes:
    return base64.b64decode(text.encode("ascii"), validate=True)


def _message_wire(msg: HttpMessage) -> bytes:
    """Bytes that will re-parse to this message.

    The captured bytes win when present; a message whose fields have
    drifted from its capture is refused rather than silently rewritten.
    """
    if msg.raw:
        reparsed = parse_http_message(msg.raw, msg.direction, msg.ts_micros, lenient=True)
        if not messages_equivalent(reparsed, msg):
            raise InvalidMessage(
                "message fields disagree with their raw capture; "
                "clear raw after editing fields"
            )
        return msg.raw
    return serialize_message(msg)


def _message_to_json(msg: HttpMessage) -> dict:
    return {
        "direction": msg.direction.value,
        "ts_micros": msg.ts_micros,
        "raw": _b64(_message_wire(msg)),
    }


def _message_from_json(obj: dict) -> HttpMessage:
    return parse_http_message(
        _unb64(obj["raw"]),
        Direction(obj["direction"]),
        ts_micros=int(obj["ts_micros"]),
        lenient=True,
    )


def _flow_to_json(flow: Flow) -> dict:
    return {
        "flow_id": flow.flow_id,
        "label": flow.label.value,
        "key": asdict(flow.key),
        "messages": [_message_to_json(m) for m in flow.messages],
    }


def _flow_from_json(obj: dict) -> Flow:
    return Flow(
        flow_id=obj["flow_id"],
        key=FlowKey(**obj["key"]),
        messages=tuple(_message_from_json(m) for m in obj["messages"]),
        label=Label(obj["label"]),
    )


def manifest_path(path: str | Path) -> Path:
    return Path(str(path) + ".manifest")


def save_corpus(
    flows: Sequence[Flow],
    path: str | Path,
    meta: dict | None = None,
    source: str = "",
) -> CorpusManifest:
    """Write flows as NDJSON and a ``.manifest`` sidecar; returns the manifest.

    ``meta`` (a provenance block, say) rides along in the header line;
    ``source`` tags where the corpus came from (say "ingest" or "gaf").
    """
    path = Path(path)
    header: dict = {"format": FORMAT_NAME, "version": FORMAT_VERSION}
    if meta:
        header["meta"] = meta
    lines = [json.dumps(header)]
    labels = {lab.value: 0 for lab in Label}
    response_only = 0
    for flow in flows:
        labels[flow.label.value] += 1
        if not any(m.is_request for m in flow.messages):
            response_only += 1
        lines.append(json.dumps(_flow_to_json(flow), separators=(",", ":")))
    blob = ("\n".join(lines) + "\n").encode("utf-8")
    path.write_bytes(blob)
    manifest = CorpusManifest(
        format=FORMAT_NAME,
        version=FORMAT_VERSION,
        records=len(flows),
        labels=labels,
        sha256=hashlib.sha256(blob).hexdigest(),
        response_only_flows=response_only,
        source=source,
    )
    manifest_path(path).write_text(json.dumps(manifest.to_dict(), indent=2) + "\n")
    return manifest


def load_corpus(path: str | Path) -> tuple[list[Flow], CorpusManifest]:
    """Read a corpus written by save_corpus, verifying the manifest.

    Raises FormatVersionMismatch for an unknown header or version,
    CorruptRecord (with its 1-based line number) for an unreadable record,
    and ManifestMismatch when the sidecar is absent or disagrees with the
    file contents.
    """
    path = Path(path)
    if not path.exists():
        raise ManifestMismatch(f"corpus not found: {path}")
    mpath = manifest_path(path)
    if not mpath.exists():
        raise ManifestMismatch(f"manifest sidecar not found: {mpath}")
    try:
        minfo = json.loads(mpath.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestMismatch(f"manifest is not valid JSON: {exc}") from exc

    blob = path.read_bytes()
    digest = hashlib.sha256(blob).hexdigest()
    if minfo.get("sha256") != digest:
        raise ManifestMismatch(
            f"corpus checksum {digest} does not match manifest {minfo.get('sha256')}"
        )

    lines = blob.decode("utf-8").splitlines()
    if not lines:
        raise FormatVersionMismatch("corpus file is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise CorruptRecord(f"unreadable header: {exc}", 1) from exc
    if header.get("format") != FORMAT_NAME:
        raise FormatVersionMismatch(f"not a {FORMAT_NAME} file: {header!r}")
    if header.get("version") != FORMAT_VERSION:
        raise FormatVersionMismatch(
            f"corpus version {header.get('version')} unsupported (expected {FORMAT_VERSION})"
        )

    flows: list[Flow] = []
    for lineno, text in enumerate(lines[1:], start=2):
        if not text.strip():
            continue
        try:
            flows.append(_flow_from_json(json.loads(text)))
        except (
            json.JSONDecodeError,
            KeyError,
            ValueError,
            TypeError,
            MessageParseError,
        ) as exc:
            raise CorruptRecord(f"unreadable flow record: {exc}", lineno) from exc

    if minfo.get("records") != len(flows):
        raise ManifestMismatch(
            f"manifest says {minfo.get('records')} records, file has {len(flows)}"
        )
    manifest = CorpusManifest(
        format=minfo.get("format", FORMAT_NAME),
        version=int(minfo.get("version", FORMAT_VERSION)),
        records=len(flows),
        labels=dict(minfo.get("labels", {})),
        sha256=digest,
        response_only_flows=int(minfo.get("response_only_flows", 0)),
        source=str(minfo.get("source", "")),
    )
    return flows, manifest
