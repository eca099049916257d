"""Shared builders for the test suite.

The helpers construct well-formed messages and flows with minimal typing;
tests mutate the returned objects via dataclasses.replace where needed.
The toy corpus factory makes a linearly separable classification problem:
the class signal lives in the User-Agent header (never scrubbed) plus the
method and body length, so both the image and statistics paths carry it.
"""

from __future__ import annotations

import numpy as np
import pytest

from hmcd.http.message import Direction, Flow, FlowKey, HttpMessage, Label


def make_key(i: int = 0, src_port: int = 40000) -> FlowKey:
    return FlowKey(
        src_ip=f"10.{(i >> 16) & 255}.{(i >> 8) & 255}.{i & 255 or 1}",
        src_port=src_port + (i % 20000),
        dst_ip="192.0.2.10",
        dst_port=80,
        transport="TCP",
    )


def req(
    target: bytes = b"/",
    method: bytes = b"GET",
    headers=((b"Host", b"a.example"),),
    body: bytes = b"",
    ts: int = 0,
    raw: bytes = b"",
) -> HttpMessage:
    return HttpMessage(
        direction=Direction.REQUEST,
        ts_micros=ts,
        method=method,
        target=target,
        headers=tuple(headers),
        body=body,
        raw=raw,
    )


def resp(
    status: int = 200,
    reason: bytes = b"OK",
    headers=(),
    body: bytes = b"",
    ts: int = 1,
    raw: bytes = b"",
) -> HttpMessage:
    return HttpMessage(
        direction=Direction.RESPONSE,
        ts_micros=ts,
        status_code=status,
        reason=reason,
        headers=tuple(headers),
        body=body,
        raw=raw,
    )


def make_flow(messages, label=Label.UNLABELED, flow_id="t-000001", i=0) -> Flow:
    return Flow(flow_id=flow_id, key=make_key(i), messages=tuple(messages), label=label)


def toy_flow(i: int, malicious: bool, rng: np.random.Generator) -> Flow:
    """One separable request/response pair; signal in UA, method, body."""
    if malicious:
        ua = b"EvilBot/%d.%d" % (rng.integers(1, 9), rng.integers(0, 9))
        method, target = b"POST", b"/gate.php?id=%d" % rng.integers(0, 999)
        body = b"k=" + bytes(rng.integers(97, 123, 40).astype(np.uint8))
    else:
        ua = b"Mozilla/5.0 (X11; rv:%d.0)" % rng.integers(60, 120)
        method, target = b"GET", b"/page/%d.html" % rng.integers(0, 999)
        body = b""
    headers = [
        (b"Host", b"site-%d.example" % rng.integers(0, 50)),
        (b"User-Agent", ua),
        (b"Accept", b"text/html"),
    ]
    if body:
        headers.append((b"Content-Length", b"%d" % len(body)))
    r1 = req(target=target, method=method, headers=headers, body=body, ts=i * 1000)
    n = int(rng.integers(5, 200))
    r2 = resp(
        status=200,
        reason=b"OK",
        headers=((b"Server", b"httpd"), (b"Content-Length", b"%d" % n)),
        body=bytes(rng.integers(32, 127, n).astype(np.uint8)),
        ts=i * 1000 + 500,
    )
    label = Label.MALICIOUS if malicious else Label.BENIGN
    prefix = "mal" if malicious else "ben"
    return make_flow([r1, r2], label=label, flow_id=f"{prefix}-{i:06d}", i=i)


def toy_corpus(n_per_class: int, seed: int = 0) -> tuple[list[Flow], list[Flow]]:
    """(malicious flows, benign flows), each linearly separable."""
    rng = np.random.default_rng([seed, 77])
    mal = [toy_flow(i, True, rng) for i in range(n_per_class)]
    ben = [toy_flow(i + n_per_class, False, rng) for i in range(n_per_class)]
    return mal, ben


@pytest.fixture
def small_corpus():
    return toy_corpus(12, seed=3)
