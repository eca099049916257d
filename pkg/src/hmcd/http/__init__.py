from .message import (
    Direction,
    Flow,
    FlowKey,
    HttpMessage,
    Label,
    messages_equivalent,
    serialize_message,
    validate_message,
)
from .parser import parse_http_message
from .flows import assemble_flows, normalize_key
from .corpus import CorpusManifest, load_corpus, save_corpus

__all__ = [
    "Direction",
    "Flow",
    "FlowKey",
    "HttpMessage",
    "Label",
    "messages_equivalent",
    "serialize_message",
    "validate_message",
    "parse_http_message",
    "assemble_flows",
    "normalize_key",
    "CorpusManifest",
    "load_corpus",
    "save_corpus",
]
