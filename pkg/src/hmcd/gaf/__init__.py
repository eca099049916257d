from .dictionary import (
    DELIMITERS,
    FieldDictionary,
    build_dictionary,
    dictionary_hash,
    load_dictionary,
    message_fields,
    rejoin,
    save_dictionary,
    tokenize_content,
)
from .encoder import MalPos, TokenSequence, decode_ids, encode_field, inject_malicious
from .gan import FieldGan, FieldGanConfig, gradient_penalty, load_field_gan, sample_tokens, save_field_gan, train_field_gan
from .generate import GenerationConfig, generate_flows, sample_and_decode, train_generation_gans

__all__ = [
    "DELIMITERS",
    "FieldDictionary",
    "build_dictionary",
    "dictionary_hash",
    "load_dictionary",
    "message_fields",
    "rejoin",
    "save_dictionary",
    "tokenize_content",
    "MalPos",
    "TokenSequence",
    "decode_ids",
    "encode_field",
    "inject_malicious",
    "FieldGan",
    "FieldGanConfig",
    "gradient_penalty",
    "load_field_gan",
    "sample_tokens",
    "save_field_gan",
    "train_field_gan",
    "GenerationConfig",
    "generate_flows",
    "sample_and_decode",
    "train_generation_gans",
]
