"""Binary codec for shuffled messages and the per-link byte ledger.

Envelope (little-endian): ``b"PTDM"``, phase u8, source u16, dest u16,
payload length u32, then the payload. Payload fields follow declaration
order with f64 numerics, u64 ids and u8 presence flags.
"""

from __future__ import annotations

import enum
import struct
import threading
from collections import defaultdict
from dataclasses import dataclass
from typing import Optional, Union

MAGIC = b"PTDM"
_ENVELOPE = struct.Struct("<4sBHHI")
_THRESHOLD = struct.Struct("<d")
_PRUNED = struct.Struct("<QB")
_PARTIAL = struct.Struct("<QBddd")
_REPORT = struct.Struct("<Qd")
_CANDIDATE: dict[int, struct.Struct] = {}


def _candidate_struct(d: int) -> struct.Struct:
    st = _CANDIDATE.get(d)
    if st is None:
        st = _CANDIDATE[d] = struct.Struct(f"<QQ{d}ddQddd")
    return st


class Phase(enum.IntEnum):
    CANDIDATE = 1      # filtering mapper -> filtering reducer
    THRESHOLD = 2      # filtering mapper -> every other reducer
    PARTIAL_SCORE = 3  # filtering reducer -> refinement mapper (home of t)
    RESULT = 4         # refinement mapper -> master
    DIRECT = 5         # filtering mapper -> master, for already exact candidates


class WireError(ValueError):
    pass


@dataclass(frozen=True)
class CandidateEmission:
    key: int
    object_id: int
    instance_id: int
    attrs: tuple[float, ...]
    prob: float
    node_id: int
    lb: float
    ub: float
    tau: float

    def sort_key(self):
        return (self.key, self.object_id, self.instance_id, self.node_id)


@dataclass(frozen=True)
class ThresholdBroadcast:
    tau: float


@dataclass(frozen=True)
class PartialScoreEmission:
    object_id: int
    # None is the prune signal; otherwise (t.LB, t.dS, tau)
    value: Optional[tuple[float, float, float]]

    def __post_init__(self):
        if self.value is not None and self.value[1] < 0.0:
            raise WireError("partial score must be non-negative")


@dataclass(frozen=True)
class ScoreReport:
    object_id: int
    score: float


Payload = Union[CandidateEmission, ThresholdBroadcast, PartialScoreEmission, ScoreReport]


def _encode_payload(phase: Phase, msg: Payload) -> bytes:
    if phase is Phase.CANDIDATE:
        return _candidate_struct(len(msg.attrs)).pack(
            msg.object_id, msg.instance_id, *msg.attrs, msg.prob, msg.node_id, msg.lb, msg.ub, msg.tau)
    if phase is Phase.THRESHOLD:
        return _THRESHOLD.pack(msg.tau)
    if phase is Phase.PARTIAL_SCORE:
        if msg.value is None:
            return _PRUNED.pack(msg.object_id, 0)
        return _PARTIAL.pack(msg.object_id, 1, *msg.value)
    if phase in (Phase.RESULT, Phase.DIRECT):
        return _REPORT.pack(msg.object_id, msg.score)
    raise WireError(f"unknown phase {phase}")


def _decode_payload(phase: Phase, dest: int, buf: bytes) -> Payload:
    try:
        if phase is Phase.CANDIDATE:
            d, rem = divmod(len(buf), 8)
            d -= 7
            if rem or d < 1:
                raise WireError(f"candidate payload of {len(buf)} bytes")
            v = _candidate_struct(d).unpack(buf)
            return CandidateEmission(dest, v[0], v[1], tuple(v[2:2 + d]), v[2 + d],
                                     v[3 + d], v[4 + d], v[5 + d], v[6 + d])
        if phase is Phase.THRESHOLD:
            return ThresholdBroadcast(*_THRESHOLD.unpack(buf))
        if phase is Phase.PARTIAL_SCORE:
            oid, flag = _PRUNED.unpack_from(buf)
            if flag == 0 and len(buf) == 9:
                return PartialScoreEmission(oid, None)
            if flag == 1 and len(buf) == 33:
                return PartialScoreEmission(oid, struct.unpack_from("<ddd", buf, 9))
            raise WireError(f"bad partial-score payload (flag {flag}, {len(buf)} bytes)")
        if phase in (Phase.RESULT, Phase.DIRECT):
            return ScoreReport(*_REPORT.unpack(buf))
    except struct.error as exc:
        raise WireError(str(exc)) from exc
    raise WireError(f"unknown phase {phase}")


def encode(phase: Phase, source: int, dest: int, msg: Payload) -> bytes:
    payload = _encode_payload(phase, msg)
    return _ENVELOPE.pack(MAGIC, int(phase), source, dest, len(payload)) + payload


def decode(buf: bytes) -> tuple[Phase, int, int, Payload]:
    if len(buf) < _ENVELOPE.size:
        raise WireError("truncated envelope")
    magic, phase, src, dst, n = _ENVELOPE.unpack_from(buf)
    if magic != MAGIC:
        raise WireError(f"bad magic {magic!r}")
    if len(buf) != _ENVELOPE.size + n:
        raise WireError(f"payload length {n} disagrees with buffer")
    try:
        phase = Phase(phase)
    except ValueError as exc:
        raise WireError(f"unknown phase {phase}") from exc
    return phase, src, dst, _decode_payload(phase, dst, buf[_ENVELOPE.size:])


class CommLedger:
    """Message count and encoded byte total per (source, dest, phase)."""

    def __init__(self):
        self._lock = threading.Lock()
        self._cells: dict[tuple[int, int, int], list[int]] = defaultdict(lambda: [0, 0])

    def charge(self, source: int, dest: int, phase: Phase, nbytes: int) -> None:
        with self._lock:
            cell = self._cells[(source, dest, int(phase))]
            cell[0] += 1
            cell[1] += nbytes

    def rows(self) -> list[tuple[int, int, int, int, int]]:
        return sorted((s, d, p, c, b) for (s, d, p), (c, b) in self._cells.items())

    @property
    def total_bytes(self) -> int:
        return sum(b for _, b in self._cells.values())

    @property
    def total_messages(self) -> int:
        return sum(c for c, _ in self._cells.values())

    def bytes_by_phase(self) -> dict[str, int]:
        out: dict[str, int] = defaultdict(int)
        for (_, _, p), (_, b) in self._cells.items():
            out[Phase(p).name.lower()] += b
        return dict(sorted(out.items()))

    def to_dict(self) -> dict:
        return {
            "total_bytes": self.total_bytes,
            "total_messages": self.total_messages,
            "by_phase": self.bytes_by_phase(),
            "links": [{"source": s, "dest": d, "phase": Phase(p).name.lower(),
                       "messages": c, "bytes": b} for s, d, p, c, b in self.rows()],
        }
