"""Hierarchical feature extraction for HTTP flows.

Three views are taken of every flow:

- per-packet byte images: the wire form of each of the first two messages,
  truncated or zero-padded to 800 bytes, reshaped to 20 x 40 and mapped to
  [0, 1] by dividing by 255
- per-packet statistics: a 41-dim vector of structural lengths and counts
- per-flow statistics: a 64-dim vector of message counts by kind plus the
  packet length sequence

Identifying content (request target, Host value) is removed by ``scrub``
before imaging so the classifier cannot latch onto deployment-specific
strings. Statistics are raw counts; scaling to [0, 1] happens separately in
``StatScaler`` so the scaling constants can be fit on training data only.
"""

from __future__ import annotations

import base64
import json
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.exceptions import NotFittedError

from .errors import CorruptRecord, EmptyFit, FormatVersionMismatch
from .http.message import Direction, Flow, HttpMessage, Label

IMAGE_SHAPE = (20, 40)
IMAGE_BYTES = IMAGE_SHAPE[0] * IMAGE_SHAPE[1]
PKT_STAT_DIM = 41
FLOW_STAT_DIM = 64
PACKET_SLOTS = 2
MAX_FLOW_MESSAGES = 50
# header slots in the packet-stat vector: lengths of the first 18 names/values
_HEADER_SLOTS = 18
_LENGTH_SEQ = 50


def scrub(msg: HttpMessage, extra_headers: Sequence[bytes] = ()) -> HttpMessage:
    """Strip deployment-identifying content from a message.

    The request target collapses to "/" and any Host value is emptied.
    More headers (say Cookie or Referer) can be emptied the same way via
    ``extra_headers``; none are by default. The stale raw capture is
    dropped since it no longer matches the fields.
    """
    out = msg
    if msg.is_request and msg.target is not None:
        out = replace(out, target=b"/")
    for name in (b"Host", *extra_headers):
        if out.header_value(name) is not None:
            out = out.with_header(name, b"")
    if out is not msg or out.headers != msg.headers:
        out = replace(out, raw=b"")
    return out


def wire_bytes(msg: HttpMessage) -> bytes:
    """Canonical wire rendering used for imaging and length statistics.

    Unlike serialize_message this never refuses: missing fields render as
    empty so even messages that only parsed leniently still produce stable
    bytes.
    """
    version = b"HTTP/%d.%d" % (msg.version_major, msg.version_minor)
    if msg.is_request:
        start = b"%s %s %s" % (msg.method or b"", msg.target or b"", version)
    else:
        reason = msg.reason if msg.reason is not None else b""
        start = b"%s %d %s" % (version, msg.status_code or 0, reason)
    parts = [start]
    for name, value in msg.headers:
        parts.append(b"%s: %s" % (name, value))
    parts.append(b"")
    parts.append(msg.body)
    return b"\r\n".join(parts)


def packet_to_image(msg: HttpMessage) -> np.ndarray:
    """20 x 40 grayscale image of the first 800 wire bytes, scaled to [0, 1]."""
    data = wire_bytes(msg)[:IMAGE_BYTES]
    buf = np.zeros(IMAGE_BYTES, dtype=np.float64)
    buf[: len(data)] = np.frombuffer(data, dtype=np.uint8)
    return (buf / 255.0).reshape(IMAGE_SHAPE)


def packet_stats(msg: HttpMessage) -> np.ndarray:
    """41-dim per-packet statistics vector.

    Layout: [0] packet type (request 1, response 2); [1] target length for
    requests, reason-phrase length for responses; [2] version as
    major*10+minor; [3] header count; [4..21] first 18 header name lengths;
    [22..39] first 18 header value lengths; [40] body length.

    Lengths are of the original (unscrubbed) content; scrubbing keeps the
    target's text out of the image but its length stays a feature.
    """
    v = np.zeros(PKT_STAT_DIM, dtype=np.float64)
    if msg.is_request:
        v[0] = 1.0
        v[1] = float(len(msg.target)) if msg.target is not None else 0.0
    else:
        v[0] = 2.0
        v[1] = float(len(msg.reason)) if msg.reason is not None else 0.0
    v[2] = float(msg.version_major * 10 + msg.version_minor)
    v[3] = float(len(msg.headers))
    for i, (name, value) in enumerate(msg.headers[:_HEADER_SLOTS]):
        v[4 + i] = float(len(name))
        v[4 + _HEADER_SLOTS + i] = float(len(value))
    v[40] = float(len(msg.body))
    return v


_METHOD_SLOT = {b"GET": 1, b"POST": 2, b"HEAD": 3, b"OPTIONS": 4}


def flow_stats(flow: Flow) -> np.ndarray:
    """64-dim per-flow statistics vector.

    Layout: [0] request count; [1..5] GET/POST/HEAD/OPTIONS/other request
    counts; [6] response count; [7..11] 1xx/2xx/3xx/4xx/(5xx and above)
    response counts; [12] responses with no classifiable status; [13] mean
    message byte length; [14..63] message byte lengths of the first 50
    messages, zero padded. Lengths come from the captured bytes when the
    message still carries them, else from the canonical rendering.
    """
    v = np.zeros(FLOW_STAT_DIM, dtype=np.float64)
    lengths = []
    for msg in flow.messages:
        lengths.append(len(msg.raw) if msg.raw else len(wire_bytes(msg)))
        if msg.is_request:
            v[0] += 1
            slot = _METHOD_SLOT.get((msg.method or b"").upper(), 5)
            v[slot] += 1
        else:
            v[6] += 1
            code = msg.status_code or 0
            if 100 <= code < 500:
                v[7 + (code // 100 - 1)] += 1
            elif code >= 500:
                v[11] += 1
            else:
                v[12] += 1
    if lengths:
        v[13] = float(np.mean(lengths))
        seq = lengths[:_LENGTH_SEQ]
        v[14 : 14 + len(seq)] = seq
    return v


@dataclass
class Sample:
    """Feature bundle for one flow."""

    flow_id: str
    label: Label
    images: np.ndarray  # (PACKET_SLOTS, 20, 40)
    pkt: np.ndarray  # (PACKET_SLOTS, 41)
    flow: np.ndarray  # (64,)


def featurize_flow(flow: Flow) -> Sample | None:
    """Extract the full feature bundle; None means the flow is discarded.

    Flows longer than MAX_FLOW_MESSAGES messages are discarded outright.
    Flows shorter than PACKET_SLOTS messages have their remaining packet
    slots zero filled.
    """
    if len(flow.messages) > MAX_FLOW_MESSAGES:
        return None
    images = np.zeros((PACKET_SLOTS,) + IMAGE_SHAPE, dtype=np.float64)
    pkt = np.zeros((PACKET_SLOTS, PKT_STAT_DIM), dtype=np.float64)
    for i, msg in enumerate(flow.messages[:PACKET_SLOTS]):
        images[i] = packet_to_image(scrub(msg))
        pkt[i] = packet_stats(msg)
    return Sample(flow.flow_id, flow.label, images, pkt, flow_stats(flow))


def featurize_flows(flows: Iterable[Flow]) -> tuple[list[Sample], list[str]]:
    """Featurize a corpus; returns (samples, discarded flow ids)."""
    samples: list[Sample] = []
    discarded: list[str] = []
    for flow in flows:
        s = featurize_flow(flow)
        if s is None:
            discarded.append(flow.flow_id)
        else:
            samples.append(s)
    return samples, discarded


# ---------------------------------------------------------------------------
# Min-max scaling of the statistics vectors


@dataclass
class ScalerParams:
    lo: np.ndarray
    hi: np.ndarray


def fit_scaler(rows: np.ndarray) -> ScalerParams:
    """Per-dimension min/max over an (N, D) matrix. EmptyFit if N == 0."""
    rows = np.asarray(rows, dtype=np.float64)
    if rows.ndim != 2 or rows.shape[0] == 0:
        raise EmptyFit(f"cannot fit scaler on shape {rows.shape}")
    return ScalerParams(lo=rows.min(axis=0), hi=rows.max(axis=0))


def apply_scaler(rows: np.ndarray, params: ScalerParams) -> np.ndarray:
    """(x - lo) / (hi - lo), clamped to [0, 1]; constant dimensions map to 0."""
    rows = np.asarray(rows, dtype=np.float64)
    span = params.hi - params.lo
    safe = np.where(span > 0, span, 1.0)
    out = (rows - params.lo) / safe
    out = np.where(span > 0, out, 0.0)
    return np.clip(out, 0.0, 1.0)


class StatScaler(BaseEstimator, TransformerMixin):
    """Min-max scaler over the packet and flow statistic vectors of Samples.

    fit() learns per-dimension ranges from the training samples; transform()
    returns new Samples with both statistics vectors mapped into [0, 1].
    Dimensions that were constant during fit map to 0; values outside the
    fitted range clamp, so transform never produces values outside [0, 1].
    """

    def fit(self, X: Sequence[Sample], y=None):
        samples = list(X)
        if not samples:
            raise EmptyFit("no samples to fit scaler on")
        pkt_rows = np.concatenate([s.pkt for s in samples], axis=0)
        flow_rows = np.stack([s.flow for s in samples], axis=0)
        self.pkt_params_ = fit_scaler(pkt_rows)
        self.flow_params_ = fit_scaler(flow_rows)
        return self

    def transform(self, X: Sequence[Sample]) -> list[Sample]:
        if not hasattr(self, "pkt_params_"):
            raise NotFittedError("StatScaler.transform called before fit")
        out = []
        for s in X:
            out.append(
                Sample(
                    flow_id=s.flow_id,
                    label=s.label,
                    images=s.images,
                    pkt=apply_scaler(s.pkt, self.pkt_params_),
                    flow=apply_scaler(s.flow[None, :], self.flow_params_)[0],
                )
            )
        return out


def samples_to_arrays(
    samples: Sequence[Sample],
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Stack samples into (images, pkt, flow, labels) arrays.

    Labels: benign 0, malicious 1. Unlabeled samples are rejected since
    nothing downstream can train or score on them.
    """
    if not samples:
        raise EmptyFit("no samples to stack")
    labels = np.zeros(len(samples), dtype=np.int64)
    for i, s in enumerate(samples):
        if s.label is Label.MALICIOUS:
            labels[i] = 1
        elif s.label is not Label.BENIGN:
            raise ValueError(f"sample {s.flow_id} has label {s.label}")
    images = np.stack([s.images for s in samples])
    pkt = np.stack([s.pkt for s in samples])
    flow = np.stack([s.flow for s in samples])
    return images, pkt, flow, labels


# ---------------------------------------------------------------------------
# Feature dump format: one JSON header line, then one record per sample with
# the image planes as base64 bytes and both statistics vectors as plain lists.

FEATURES_FORMAT = "hmcd-features"
FEATURES_VERSION = 1


def _image_bytes(images: np.ndarray) -> bytes:
    return np.rint(images * 255.0).astype(np.uint8).tobytes()


def save_features(
    samples: Sequence[Sample],
    discarded: Sequence[str],
    path: str | Path,
    extra_header: dict | None = None,
) -> None:
    header = {
        "format": FEATURES_FORMAT,
        "version": FEATURES_VERSION,
        "samples": len(samples),
        "discarded": list(discarded),
    }
    header.update(extra_header or {})
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for s in samples:
            rec = {
                "flow_id": s.flow_id,
                "label": s.label.value,
                "images": base64.b64encode(_image_bytes(s.images)).decode("ascii"),
                "pkt_stats": [list(row) for row in s.pkt],
                "flow_stat": list(s.flow),
            }
            fh.write(json.dumps(rec) + "\n")


def load_features(path: str | Path) -> tuple[list[Sample], list[str], dict]:
    """Read a feature dump; returns (samples, discarded flow ids, header)."""
    lines = Path(path).read_text().splitlines()
    if not lines:
        raise FormatVersionMismatch(f"{path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise FormatVersionMismatch(f"unreadable feature header: {exc}") from exc
    if header.get("format") != FEATURES_FORMAT or header.get("version") != FEATURES_VERSION:
        raise FormatVersionMismatch(
            f"expected {FEATURES_FORMAT} v{FEATURES_VERSION}, "
            f"got {header.get('format')!r} v{header.get('version')!r}"
        )
    samples = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            planes = np.frombuffer(base64.b64decode(rec["images"]), dtype=np.uint8)
            images = planes.reshape((PACKET_SLOTS,) + IMAGE_SHAPE) / 255.0
            samples.append(
                Sample(
                    flow_id=rec["flow_id"],
                    label=Label(rec["label"]),
                    images=images,
                    pkt=np.array(rec["pkt_stats"], dtype=np.float64).reshape(
                        PACKET_SLOTS, PKT_STAT_DIM
                    ),
                    flow=np.array(rec["flow_stat"], dtype=np.float64).reshape(
                        FLOW_STAT_DIM
                    ),
                )
            )
        except (KeyError, ValueError, TypeError) as exc:
            raise CorruptRecord(f"bad feature record: {exc}", lineno) from exc
    if len(samples) != header.get("samples"):
        raise CorruptRecord(
            f"header claims {header.get('samples')} samples, found {len(samples)}",
            len(lines),
        )
    return samples, list(header.get("discarded", [])), header
