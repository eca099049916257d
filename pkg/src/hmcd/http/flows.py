"""Group parsed messages into flows by transport quintuple.

A flow is one client<->server conversation segment: all messages whose
quintuple matches in either direction, time ordered, split wherever the
conversation goes quiet for longer than the idle gap.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from .message import Direction, Flow, FlowKey, HttpMessage, Label


def normalize_key(key: FlowKey, direction: Direction) -> FlowKey:
    """Canonical (client -> server) orientation of a quintuple.

    Requests already point client to server; responses are flipped so both
    sides of a conversation share one grouping key.
    """
    if direction is Direction.RESPONSE:
        return key.reversed()
    return key


def assemble_flows(
    records: Iterable[tuple[FlowKey, HttpMessage]],
    idle_gap_s: float = 60.0,
    label: Label = Label.UNLABELED,
    id_prefix: str = "flow",
) -> list[Flow]:
    """Assemble (key, message) records into time-ordered flows.

    Messages sharing a canonical quintuple form one conversation. The
    conversation is sorted by timestamp (ties keep input order) and split
    into separate flows wherever the gap between consecutive messages
    exceeds ``idle_gap_s``. Flow ids are assigned deterministically in
    first-seen key order, then chronologically within a key.
    """
    if idle_gap_s <= 0:
        raise ValueError(f"idle_gap_s must be positive, got {idle_gap_s}")
    groups: dict[FlowKey, list[HttpMessage]] = {}
    order: list[FlowKey] = []
    for key, msg in records:
        canon = normalize_key(key, msg.direction)
        if canon not in groups:
            groups[canon] = []
            order.append(canon)
        groups[canon].append(msg)

    gap_micros = int(idle_gap_s * 1_000_000)
    flows: list[Flow] = []
    counter = 0
    for key in order:
        msgs = sorted(groups[key], key=lambda m: m.ts_micros)
        segment: list[HttpMessage] = []
        for msg in msgs:
            if segment and msg.ts_micros - segment[-1].ts_micros > gap_micros:
                flows.append(
                    Flow(f"{id_prefix}-{counter:06d}", key, tuple(segment), label)
                )
                counter += 1
                segment = []
            segment.append(msg)
        if segment:
            flows.append(Flow(f"{id_prefix}-{counter:06d}", key, tuple(segment), label))
            counter += 1
    return flows


def split_labels(flows: Sequence[Flow]) -> tuple[list[Flow], list[Flow]]:
    """Convenience partition into (malicious, benign); unlabeled dropped."""
    mal = [f for f in flows if f.label is Label.MALICIOUS]
    ben = [f for f in flows if f.label is Label.BENIGN]
    return mal, ben
