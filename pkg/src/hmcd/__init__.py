"""hmcd: detection of HTTP-based malicious communication flows.

Pipeline pieces, in dependency order:

- ``hmcd.http``: HTTP/1.x parsing, flow assembly, corpus files
- ``hmcd.features``: hierarchical packet/flow feature extraction
- ``hmcd.nn``: numpy reverse-mode autodiff, layers, Adam, gradient checks
- ``hmcd.classifier``: hybrid CNN + LSTM + DNN flow classifier
- ``hmcd.gaf``: field dictionary and GAN-based adversarial flow generation
- ``hmcd.evaluation``: confusion counts, macro metrics, experiment harness
- ``hmcd.cli``: the ``hmcd`` command
"""

from . import errors
from .http import (
    Direction,
    Flow,
    FlowKey,
    HttpMessage,
    Label,
    assemble_flows,
    load_corpus,
    parse_http_message,
    save_corpus,
    serialize_message,
    validate_message,
)

__version__ = "0.1.0"

__all__ = [
    "errors",
    "Direction",
    "Flow",
    "FlowKey",
    "HttpMessage",
    "Label",
    "assemble_flows",
    "load_corpus",
    "parse_http_message",
    "save_corpus",
    "serialize_message",
    "validate_message",
    "__version__",
]
