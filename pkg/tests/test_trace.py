from __future__ import annotations

import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vsa.trace import (
    EventKind,
    TraceCodecError,
    TraceEvent,
    TraceRecorder,
    check_trace_order,
    decode_trace,
    encode_trace,
    normalize_trace,
)

KINDS = list(EventKind)

utf8_text = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), max_size=20
)
json_scalars = st.one_of(
    st.none(),
    st.booleans(),
    st.integers(min_value=-(2**31), max_value=2**31),
    utf8_text,
)
json_values = st.recursive(
    json_scalars,
    lambda children: st.one_of(
        st.lists(children, max_size=4),
        st.dictionaries(st.text(min_size=1, max_size=8), children, max_size=4),
    ),
    max_leaves=10,
)


@st.composite
def event_lists(draw):
    n = draw(st.integers(min_value=0, max_value=12))
    events = []
    for i in range(n):
        events.append(
            TraceEvent(
                sequence_no=i,
                timestamp=f"2026-08-11T00:00:{i:02d}Z",
                kind=draw(st.sampled_from(KINDS)),
                payload=draw(
                    st.dictionaries(
                        st.text(
                            alphabet=st.characters(blacklist_categories=("Cs",)),
                            min_size=1,
                            max_size=8,
                        ),
                        json_values,
                        max_size=4,
                    )
                ),
            )
        )
    return events


def sample_events(n: int = 3) -> list[TraceEvent]:
    return [
        TraceEvent(i, f"2026-08-11T00:00:0{i}Z", EventKind.QUERY_RECEIVED if i == 0 else EventKind.ERROR if i == n - 1 else EventKind.CAPTION_READY, {"i": i})
        for i in range(n)
    ]


class TestCodec:
    def test_empty_round_trip(self):
        assert encode_trace([]) == b""
        assert decode_trace(b"") == []

    def test_single_event_round_trip_bytes(self):
        events = [TraceEvent(0, "2026-08-11T00:00:00Z", EventKind.QUERY_RECEIVED, {"a": 1})]
        stream = encode_trace(events)
        assert stream.decode().count("\n") == 1
        assert json.loads(stream)["schema"] == "trace_v1"
        assert decode_trace(stream) == events
        assert encode_trace(decode_trace(stream)) == stream

    def test_fixed_key_order(self):
        stream = encode_trace(sample_events(2)).decode()
        first, second = stream.splitlines()
        assert list(json.loads(first)) == ["schema", "sequence_no", "timestamp", "kind", "payload"]
        assert list(json.loads(second)) == ["sequence_no", "timestamp", "kind", "payload"]

    @settings(max_examples=60)
    @given(event_lists())
    def test_round_trip_identity(self, events):
        assert decode_trace(encode_trace(events)) == events

    def test_duplicate_sequence_rejected(self):
        events = sample_events(2)
        events[1] = TraceEvent(0, events[1].timestamp, events[1].kind, {})
        with pytest.raises(TraceCodecError, match="duplicate"):
            encode_trace(events)

    def test_truncated_final_line_errors_with_line_number(self):
        stream = encode_trace(sample_events(3))
        with pytest.raises(TraceCodecError, match="line 3"):
            decode_trace(stream[:-5])

    def test_malformed_line_names_line(self):
        stream = encode_trace(sample_events(2)).decode().splitlines()
        bad = (stream[0] + "\n{nope}\n").encode()
        with pytest.raises(TraceCodecError, match="line 2"):
            decode_trace(bad)

    def test_out_of_order_sequence_rejected(self):
        lines = encode_trace(sample_events(3)).decode().splitlines()
        swapped = "\n".join([lines[0], lines[2], lines[1]]) + "\n"
        with pytest.raises(TraceCodecError, match="out of order"):
            decode_trace(swapped.encode())

    def test_missing_schema_rejected(self):
        line = json.dumps(
            {"sequence_no": 0, "timestamp": "t", "kind": "error", "payload": {}}
        )
        with pytest.raises(TraceCodecError, match="schema"):
            decode_trace((line + "\n").encode())

    def test_normalize_replaces_timestamps(self):
        stream = encode_trace(sample_events(3))
        normalized = normalize_trace(stream)
        for i, event in enumerate(decode_trace(normalized)):
            assert event.timestamp == str(i)
        # normalization is idempotent
        assert normalize_trace(normalized) == normalized


class TestOrderChecking:
    def test_legal_node_order(self):
        events = [
            TraceEvent(0, "0", EventKind.QUERY_RECEIVED, {}),
            TraceEvent(1, "1", EventKind.SEARCH_ISSUED, {"node_id": "n1"}),
            TraceEvent(2, "2", EventKind.PAGES_FETCHED, {"node_id": "n1"}),
            TraceEvent(3, "3", EventKind.PAGES_SELECTED, {"node_id": "n1"}),
            TraceEvent(4, "4", EventKind.RESPONSE_SUMMARIZED, {"node_id": "n1"}),
            TraceEvent(5, "5", EventKind.ANSWER_READY, {}),
        ]
        assert check_trace_order(events) == []

    def test_selected_before_search_flagged(self):
        events = [
            TraceEvent(0, "0", EventKind.QUERY_RECEIVED, {}),
            TraceEvent(1, "1", EventKind.PAGES_SELECTED, {"node_id": "n1"}),
        ]
        problems = check_trace_order(events)
        assert any("n1" in p and "out of order" in p for p in problems)

    def test_events_after_terminal_flagged(self):
        events = [
            TraceEvent(0, "0", EventKind.QUERY_RECEIVED, {}),
            TraceEvent(1, "1", EventKind.ANSWER_READY, {}),
            TraceEvent(2, "2", EventKind.CAPTION_READY, {}),
        ]
        assert any("after terminal" in p for p in check_trace_order(events))


class TestRecorder:
    def test_appends_to_file_and_memory(self, tmp_path):
        recorder = TraceRecorder(tmp_path / "t.jsonl")
        recorder.emit(EventKind.QUERY_RECEIVED, {"q": "x"})
        recorder.emit(EventKind.ANSWER_READY, {"text": "y"})
        on_disk = decode_trace((tmp_path / "t.jsonl").read_bytes())
        assert on_disk == recorder.events()
        assert recorder.closed

    def test_emit_after_terminal_rejected(self):
        recorder = TraceRecorder()
        recorder.emit(EventKind.ERROR, {"message": "boom"})
        with pytest.raises(RuntimeError):
            recorder.emit(EventKind.ANSWER_READY, {})

    def test_subscribe_replays_prefix_then_live(self):
        recorder = TraceRecorder()
        recorder.emit(EventKind.QUERY_RECEIVED, {})
        seen: list[int] = []
        prefix = recorder.subscribe(lambda e: seen.append(e.sequence_no))
        assert [e.sequence_no for e in prefix] == [0]
        recorder.emit(EventKind.ANSWER_READY, {})
        assert seen == [1]
