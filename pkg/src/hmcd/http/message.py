"""Data model for HTTP/1.x messages and assembled flows.

Messages keep their header list ordered and byte-exact (names and values are
bytes, never str) because downstream feature extraction and generation both
care about the wire form. Text fields that are structurally constrained
(method token, version digits, status code) are validated by
``validate_message``; ``serialize_message`` refuses to emit anything that
could not be re-parsed.
"""

from __future__ import annotations

import enum
import ipaddress
from dataclasses import dataclass, field, replace

from ..errors import InvalidMessage

# RFC 7230 token characters, the only bytes legal in header names and methods.
TOKEN_CHARS = frozenset(
    b"!#$%&'*+-.^_`|~0123456789"
    b"ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    b"abcdefghijklmnopqrstuvwxyz"
)

# Bytes allowed in a header value: visible ASCII, space, tab, and obs-text.
_VALUE_OK = frozenset(range(0x21, 0x7F)) | {0x20, 0x09} | set(range(0x80, 0x100))


class Direction(str, enum.Enum):
    REQUEST = "request"
    RESPONSE = "response"


class Label(str, enum.Enum):
    BENIGN = "benign"
    MALICIOUS = "malicious"
    UNLABELED = "unlabeled"


@dataclass(frozen=True)
class FlowKey:
    """Transport quintuple identifying one side of a conversation."""

    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    transport: str = "TCP"

    def __post_init__(self):
        ipaddress.ip_address(self.src_ip)
        ipaddress.ip_address(self.dst_ip)
        for port in (self.src_port, self.dst_port):
            if not 0 <= port <= 65535:
                raise ValueError(f"port {port} out of range")

    def reversed(self) -> "FlowKey":
        return FlowKey(self.dst_ip, self.dst_port, self.src_ip, self.src_port, self.transport)


@dataclass
class HttpMessage:
    direction: Direction
    ts_micros: int
    # request line
    method: bytes | None = None
    target: bytes | None = None
    # status line
    status_code: int | None = None
    reason: bytes | None = None
    # shared
    version_major: int = 1
    version_minor: int = 1
    headers: tuple[tuple[bytes, bytes], ...] = ()
    body: bytes = b""
    # original wire bytes when the message came from a parse; not compared
    raw: bytes = field(default=b"", compare=False)
    warnings: tuple[str, ...] = field(default=(), compare=False)

    @property
    def is_request(self) -> bool:
        return self.direction is Direction.REQUEST

    def header_value(self, name: bytes) -> bytes | None:
        """First header value whose name matches case-insensitively."""
        lname = name.lower()
        for hname, hval in self.headers:
            if hname.lower() == lname:
                return hval
        return None

    def with_header(self, name: bytes, value: bytes) -> "HttpMessage":
        """Copy with the first case-insensitive match of ``name`` replaced.

        Appends the header if it was not present.
        """
        lname = name.lower()
        out = []
        done = False
        for hname, hval in self.headers:
            if not done and hname.lower() == lname:
                out.append((hname, value))
                done = True
            else:
                out.append((hname, hval))
        if not done:
            out.append((name, value))
        return replace(self, headers=tuple(out))


def _version_bytes(msg: HttpMessage) -> bytes:
    return b"HTTP/%d.%d" % (msg.version_major, msg.version_minor)


def validate_message(msg: HttpMessage) -> list[str]:
    """Check a message against the wire grammar; return a list of problems.

    An empty list means ``serialize_message`` will accept the message and the
    strict parser will read the serialized bytes back unchanged.
    """
    problems: list[str] = []
    if msg.direction is Direction.REQUEST:
        if not msg.method:
            problems.append("request has no method")
        elif not set(msg.method) <= TOKEN_CHARS:
            problems.append(f"method {msg.method!r} contains non-token bytes")
        if not msg.target:
            problems.append("request has no target")
        elif b" " in msg.target or b"\r" in msg.target or b"\n" in msg.target:
            problems.append("target contains whitespace")
        if msg.status_code is not None:
            problems.append("request carries a status code")
    else:
        if msg.status_code is None:
            problems.append("response has no status code")
        elif not 100 <= msg.status_code <= 599:
            problems.append(f"status code {msg.status_code} out of range")
        if msg.reason is None:
            problems.append("response has no reason phrase")
        elif b"\r" in msg.reason or b"\n" in msg.reason:
            problems.append("reason phrase contains line break")
        if msg.method is not None or msg.target is not None:
            problems.append("response carries request-line fields")
    if not (0 <= msg.version_major <= 9 and 0 <= msg.version_minor <= 9):
        problems.append(
            f"version {msg.version_major}.{msg.version_minor} not single digits"
        )
    for i, (name, value) in enumerate(msg.headers):
        if not name:
            problems.append(f"header {i} has empty name")
        elif not set(name) <= TOKEN_CHARS:
            problems.append(f"header {i} name {name!r} contains non-token bytes")
        if not set(value) <= _VALUE_OK:
            problems.append(f"header {i} value contains control bytes")
        elif value[:1] in (b" ", b"\t") or value[-1:] in (b" ", b"\t"):
            # OWS around values does not survive a parse round trip.
            problems.append(f"header {i} value has leading or trailing whitespace")
    cl = msg.header_value(b"Content-Length")
    if cl is not None:
        if not cl.isdigit():
            problems.append("Content-Length is not a non-negative integer")
        elif int(cl) != len(msg.body):
            problems.append(
                f"Content-Length {int(cl)} does not match body length {len(msg.body)}"
            )
    return problems


def serialize_message(msg: HttpMessage) -> bytes:
    """Emit the exact wire form: start line, headers, blank line, body.

    Raises InvalidMessage when the message fails ``validate_message``.
    """
    problems = validate_message(msg)
    if problems:
        raise InvalidMessage("; ".join(problems))
    if msg.direction is Direction.REQUEST:
        start = b"%s %s %s" % (msg.method, msg.target, _version_bytes(msg))
    else:
        start = b"%s %d %s" % (_version_bytes(msg), msg.status_code, msg.reason)
    lines = [start]
    for name, value in msg.headers:
        lines.append(b"%s: %s" % (name, value))
    lines.append(b"")
    lines.append(msg.body)
    return b"\r\n".join(lines)


def messages_equivalent(a: HttpMessage, b: HttpMessage) -> bool:
    """Structural equality, ignoring raw bytes and parse warnings."""
    return (
        a.direction == b.direction
        and a.ts_micros == b.ts_micros
        and a.method == b.method
        and a.target == b.target
        and a.status_code == b.status_code
        and a.reason == b.reason
        and a.version_major == b.version_major
        and a.version_minor == b.version_minor
        and a.headers == b.headers
        and a.body == b.body
    )


@dataclass
class Flow:
    """One quintuple conversation segment: time-ordered messages, one label."""

    flow_id: str
    key: FlowKey
    messages: tuple[HttpMessage, ...]
    label: Label = Label.UNLABELED

    def requests(self) -> list[HttpMessage]:
        return [m for m in self.messages if m.is_request]

    def responses(self) -> list[HttpMessage]:
        return [m for m in self.messages if not m.is_request]
