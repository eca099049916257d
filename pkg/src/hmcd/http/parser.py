"""HTTP/1.x wire parser.

Strict mode follows RFC 7230 line grammar: CRLF terminators only, single
spaces in the start line, no obsolete line folding, token header names.
Lenient mode exists because malware traffic is frequently sloppy; it accepts
bare LF terminators, a missing reason phrase, whitespace padding around
header names, and line folding, recording a warning for each deviation so
callers can tell how dirty the input was.

Every parse error carries the byte offset where parsing failed.

Out of scope by design: chunked transfer decoding, HTTP/2, TLS. A
Transfer-Encoding header is kept as an opaque header and the remainder of
the input is treated as the body.
"""

from __future__ import annotations

from ..errors import MalformedHeader, MalformedStartLine, MessageParseError, TruncatedMessage
from .message import TOKEN_CHARS, _VALUE_OK, Direction, HttpMessage


def _split_lines(raw: bytes, lenient: bool, warnings: list[str]):
    """Yield (line, offset) pairs for the header block; return body offset.

    Stops after consuming the blank line that terminates the header block.
    """
    lines: list[tuple[bytes, int]] = []
    pos = 0
    while True:
        if lenient:
            nl = raw.find(b"\n", pos)
            if nl == -1:
                raise TruncatedMessage("header block never terminated", len(raw))
            if nl > pos and raw[nl - 1 : nl] == b"\r":
                line = raw[pos : nl - 1]
            else:
                line = raw[pos:nl]
                warnings.append(f"bare LF line terminator at byte {nl}")
            nxt = nl + 1
        else:
            crlf = raw.find(b"\r\n", pos)
            if crlf == -1:
                raise TruncatedMessage("header block never terminated", len(raw))
            line = raw[pos:crlf]
            if b"\n" in line:
                bad = pos + line.find(b"\n")
                if not lines:
                    raise MalformedStartLine("bare LF inside start line", bad)
                raise MalformedHeader("bare LF inside header line", bad)
            nxt = crlf + 2
        if line == b"":
            if not lines:
                if lenient:
                    # robustness: skip empty line(s) before the start line
                    warnings.append(f"empty line before start line at byte {pos}")
                    pos = nxt
                    continue
                raise MalformedStartLine("message begins with an empty line", pos)
            return lines, nxt
        lines.append((line, pos))
        pos = nxt


def _parse_version(token: bytes, offset: int) -> tuple[int, int]:
    if (
        len(token) == 8
        and token[:5] == b"HTTP/"
        and token[5:6].isdigit()
        and token[6:7] == b"."
        and token[7:8].isdigit()
    ):
        return token[5] - 0x30, token[7] - 0x30
    raise MalformedStartLine(f"malformed HTTP version {token!r}", offset)


def _parse_request_line(line: bytes, offset: int, lenient: bool, warnings: list[str]):
    if lenient and b"  " in line:
        warnings.append("request line contains repeated spaces")
        parts = [p for p in line.split(b" ") if p]
    else:
        parts = line.split(b" ")
    if len(parts) != 3:
        raise MalformedStartLine(
            "request line is not 'method SP target SP version'", offset
        )
    method, target, version = parts
    if not method or not set(method) <= TOKEN_CHARS:
        raise MalformedStartLine(f"method {method!r} is not a token", offset)
    if not target:
        raise MalformedStartLine("empty request target", offset)
    ver_off = offset + len(line) - len(version)
    major, minor = _parse_version(version, ver_off)
    return method, target, major, minor


def _parse_status_line(line: bytes, offset: int, lenient: bool, warnings: list[str]):
    sp = line.find(b" ")
    if sp == -1:
        raise MalformedStartLine("status line is not 'version SP status SP reason'", offset)
    major, minor = _parse_version(line[:sp], offset)
    rest = line[sp + 1 :]
    code_part, sep, reason = rest.partition(b" ")
    reason_out: bytes | None
    if sep:
        reason_out = reason
    elif lenient:
        warnings.append("status line missing reason phrase")
        reason_out = None
    else:
        raise MalformedStartLine("status line missing reason phrase separator", offset)
    if len(code_part) != 3 or not code_part.isdigit():
        raise MalformedStartLine(
            f"status code {code_part!r} is not three digits", offset + sp + 1
        )
    return int(code_part), reason_out, major, minor


def parse_http_message(
    raw: bytes,
    direction: Direction,
    ts_micros: int = 0,
    lenient: bool = False,
) -> HttpMessage:
    """Parse one HTTP/1.x message from ``raw``.

    The caller states the direction; a request cannot be told from a
    response reliably once traffic is malformed, and flow assembly already
    knows which side sent the bytes.
    """
    raw = bytes(raw)
    warnings: list[str] = []
    lines, body_start = _split_lines(raw, lenient, warnings)

    start_line, start_off = lines[0]
    if direction is Direction.REQUEST:
        method, target, major, minor = _parse_request_line(
            start_line, start_off, lenient, warnings
        )
        status, reason = None, None
    else:
        status, reason, major, minor = _parse_status_line(
            start_line, start_off, lenient, warnings
        )
        method, target = None, None

    headers: list[tuple[bytes, bytes]] = []
    for line, off in lines[1:]:
        if line[:1] in (b" ", b"\t"):
            if not lenient:
                raise MalformedHeader("obsolete line folding", off)
            if not headers:
                raise MalformedHeader("continuation line before any header", off)
            warnings.append(f"folded header line at byte {off}")
            name, value = headers[-1]
            headers[-1] = (name, (value + b" " + line.strip(b" \t")).strip(b" \t"))
            continue
        colon = line.find(b":")
        if colon == -1:
            raise MalformedHeader("header line has no colon", off)
        if colon == 0:
            raise MalformedHeader("header name is empty", off)
        name = line[:colon]
        if not set(name) <= TOKEN_CHARS:
            if lenient and set(name.rstrip(b" \t")) <= TOKEN_CHARS and name.rstrip(b" \t"):
                warnings.append(f"whitespace before colon at byte {off}")
                name = name.rstrip(b" \t")
            else:
                raise MalformedHeader(f"illegal byte in header name {name!r}", off)
        value = line[colon + 1 :].strip(b" \t")
        if not set(value) <= _VALUE_OK:
            raise MalformedHeader("control byte in header value", off)
        headers.append((name, value))

    body = raw[body_start:]
    cl_value = None
    for name, value in headers:
        if name.lower() == b"content-length":
            if cl_value is not None and value != cl_value:
                if not lenient:
                    raise MalformedHeader("conflicting Content-Length headers", 0)
                warnings.append("conflicting Content-Length headers; first wins")
                continue
            cl_value = value
    if cl_value is not None:
        if not cl_value.isdigit():
            if not lenient:
                raise MalformedHeader(f"Content-Length {cl_value!r} is not a number", 0)
            warnings.append("unparseable Content-Length ignored")
        else:
            declared = int(cl_value)
            if len(body) < declared:
                if not lenient:
                    raise TruncatedMessage(
                        f"body has {len(body)} of {declared} declared bytes", len(raw)
                    )
                warnings.append(
                    f"body shorter than Content-Length ({len(body)} < {declared})"
                )
            elif len(body) > declared:
                if not lenient:
                    raise MessageParseError(
                        "bytes remain after declared body length", body_start + declared
                    )
                warnings.append(
                    f"body longer than Content-Length ({len(body)} > {declared})"
                )

    return HttpMessage(
        direction=direction,
        ts_micros=ts_micros,
        method=method,
        target=target,
        status_code=status,
        reason=reason,
        version_major=major,
        version_minor=minor,
        headers=tuple(headers),
        body=body,
        raw=raw,
        warnings=tuple(warnings),
    )
