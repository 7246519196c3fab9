import pytest
from hypothesis import given, strategies as st

from ptd.cluster.wire import (
    CandidateEmission, CommLedger, PartialScoreEmission, Phase, ScoreReport, ThresholdBroadcast,
    WireError, decode, encode,
)

f64 = st.floats(allow_nan=False, allow_infinity=False)


@given(st.integers(1, 6).flatmap(lambda d: st.tuples(st.lists(f64, min_size=d, max_size=d),
                                                     st.integers(0, 2**64 - 1))),
       st.integers(0, 65535), st.integers(0, 65535))
def test_candidate_roundtrip(attrs_oid, src, dst):
    attrs, oid = attrs_oid
    msg = CandidateEmission(dst, oid, 3, tuple(attrs), 0.25, 17, 0.1, 0.9, 0.5)
    buf = encode(Phase.CANDIDATE, src, dst, msg)
    assert len(buf) == 13 + 8 * (7 + len(attrs))
    assert decode(buf) == (Phase.CANDIDATE, src, dst, msg)


def test_small_message_sizes():
    assert len(encode(Phase.THRESHOLD, 0, 1, ThresholdBroadcast(0.5))) == 21
    assert len(encode(Phase.PARTIAL_SCORE, 0, 1, PartialScoreEmission(4, None))) == 22
    assert len(encode(Phase.PARTIAL_SCORE, 0, 1, PartialScoreEmission(4, (1.0, 0.2, 0.5)))) == 46
    assert len(encode(Phase.RESULT, 0, 65535, ScoreReport(4, 1.5))) == 29


@pytest.mark.parametrize("phase,msg", [
    (Phase.THRESHOLD, ThresholdBroadcast(0.75)),
    (Phase.PARTIAL_SCORE, PartialScoreEmission(9, None)),
    (Phase.PARTIAL_SCORE, PartialScoreEmission(9, (1.0, 0.3, 0.5))),
    (Phase.RESULT, ScoreReport(2, 0.125)),
    (Phase.DIRECT, ScoreReport(2, 0.0)),
])
def test_other_roundtrips(phase, msg):
    assert decode(encode(phase, 3, 4, msg)) == (phase, 3, 4, msg)


def test_decode_rejects_garbage():
    good = encode(Phase.RESULT, 1, 2, ScoreReport(1, 1.0))
    with pytest.raises(WireError):
        decode(good[:5])
    with pytest.raises(WireError):
        decode(b"NOPE" + good[4:])
    with pytest.raises(WireError):
        decode(good + b"\0")
    bad_phase = bytearray(good)
    bad_phase[4] = 99
    with pytest.raises(WireError):
        decode(bytes(bad_phase))
    pruned = bytearray(encode(Phase.PARTIAL_SCORE, 1, 2, PartialScoreEmission(1, None)))
    pruned[-1] = 1
    with pytest.raises(WireError):
        decode(bytes(pruned))


def test_negative_partial_score_refused():
    with pytest.raises(WireError):
        PartialScoreEmission(1, (0.5, -0.1, 0.2))


def test_ledger_accumulates_per_link():
    led = CommLedger()
    led.charge(0, 1, Phase.CANDIDATE, 69)
    led.charge(0, 1, Phase.CANDIDATE, 69)
    led.charge(1, 0, Phase.THRESHOLD, 21)
    assert led.total_bytes == 159 and led.total_messages == 3
    assert led.rows() == [(0, 1, 1, 2, 138), (1, 0, 2, 1, 21)]
    d = led.to_dict()
    assert d["by_phase"] == {"candidate": 138, "threshold": 21}
    assert d["links"][0] == {"source": 0, "dest": 1, "phase": "candidate", "messages": 2, "bytes": 138}


def test_sort_key_orders_by_destination_then_ids():
    a = CandidateEmission(1, 5, 0, (0.0, 0.0), 0.5, 3, 0, 1, 0)
    b = CandidateEmission(0, 9, 0, (0.0, 0.0), 0.5, 3, 0, 1, 0)
    assert sorted([a, b], key=CandidateEmission.sort_key) == [b, a]
