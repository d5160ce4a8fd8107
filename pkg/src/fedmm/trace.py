"""Structured audit log of the federation protocol.

Every broadcast and upload is recorded with its payload size, which lets
tests check mechanically that (a) clients only ever move their own
modalities, (b) prototypes first appear in round 2, and (c) upload sizes
do not depend on how much data a client holds. record() is the
enforcement point: a violating event raises instead of being logged.
"""

import csv
from dataclasses import dataclass

from .errors import ProtocolError

BROADCAST = "broadcast"
UPLOAD = "upload"
_DIRECTION_ORDER = {BROADCAST: 0, UPLOAD: 1}

EXTRACTOR_WEIGHTS = "extractor_weights"
CLASS_MEANS = "class_means"
PROTOTYPES = "prototypes"
PAYLOAD_KINDS = (EXTRACTOR_WEIGHTS, CLASS_MEANS, PROTOTYPES)

_FLOAT_BYTES = 8


@dataclass(frozen=True)
class TraceEvent:
    round: int
    direction: str
    client_id: int
    payload_kind: str
    modality: int
    payload_bytes: int


def payload_size(kind: str, payload) -> int:
    """Wire size of a payload in bytes: 8 per float64 coordinate plus 8
    per scalar count."""
    if kind == EXTRACTOR_WEIGHTS:
        return payload.n_params() * _FLOAT_BYTES
    if kind == CLASS_MEANS:
        # {class: (mean, count)}: embedding floats + one scalar count each
        return sum((len(mean) + 1) * _FLOAT_BYTES for mean, _ in payload.values())
    if kind == PROTOTYPES:
        return sum(len(v) * _FLOAT_BYTES for v in payload.entries.values())
    raise ProtocolError(f"unknown payload kind '{kind}'")


class ProtocolTrace:
    """Append-only event log bound to the run's topology masks."""

    def __init__(self, masks: dict):
        self.masks = {cid: tuple(sorted(m)) for cid, m in masks.items()}
        self.events = []

    def record(self, event: TraceEvent):
        if event.payload_kind not in PAYLOAD_KINDS:
            raise ProtocolError(f"unknown payload kind '{event.payload_kind}'")
        if event.direction not in _DIRECTION_ORDER:
            raise ProtocolError(f"unknown direction '{event.direction}'")
        mask = self.masks.get(event.client_id)
        if mask is None:
            raise ProtocolError(f"unknown client {event.client_id}")
        if event.modality not in mask:
            raise ProtocolError(
                f"client {event.client_id} touched modality {event.modality} "
                f"outside its mask {list(mask)}"
            )
        if event.payload_kind == PROTOTYPES and event.round < 2:
            raise ProtocolError(
                f"prototype broadcast in round {event.round}; prototypes only "
                "exist from round 2"
            )
        self.events.append(event)

    def record_broadcast(self, round_, client_id, kind, modality, payload):
        self.record(
            TraceEvent(round_, BROADCAST, client_id, kind, modality,
                       payload_size(kind, payload))
        )

    def record_upload(self, round_, client_id, kind, modality, payload):
        self.record(
            TraceEvent(round_, UPLOAD, client_id, kind, modality,
                       payload_size(kind, payload))
        )

    def sorted_events(self):
        return sorted(
            self.events,
            key=lambda e: (e.round, _DIRECTION_ORDER[e.direction], e.client_id,
                           e.modality, e.payload_kind),
        )

    def audit(self):
        """Report per-(round, client) upload volumes and any violations.

        record() already rejects bad events, so violations here can only
        come from events injected directly into .events.
        """
        violations = []
        upload_volumes = {}
        for e in self.events:
            mask = self.masks.get(e.client_id)
            if mask is None or e.modality not in mask:
                violations.append(f"client {e.client_id} outside mask: {e}")
            if e.payload_kind == PROTOTYPES and e.round < 2:
                violations.append(f"round-{e.round} prototype broadcast: {e}")
            if e.direction == UPLOAD:
                key = (e.round, e.client_id)
                upload_volumes[key] = upload_volumes.get(key, 0) + e.payload_bytes
        return {
            "n_events": len(self.events),
            "violations": violations,
            "upload_bytes_per_round_client": upload_volumes,
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(
                ["round", "direction", "client_id", "payload_kind", "modality",
                 "payload_bytes"]
            )
            for e in self.sorted_events():
                w.writerow(
                    [e.round, e.direction, e.client_id, e.payload_kind, e.modality,
                     e.payload_bytes]
                )
