from __future__ import annotations

import json

import pytest

from conftest import boxes_fixture, entry, image_payload, scripted_gateway
from vsa.gateway import (
    BackendError,
    ChatMessage,
    FinishReason,
    FixtureMissError,
    Gateway,
    GatewayConfig,
    GatewayInputError,
    ModelRole,
    ScriptedBackend,
    parse_integer_list,
)


class CountingBackend:
    """Fake chat backend that always fails transiently."""

    def __init__(self) -> None:
        self.attempts = 0

    def complete_raw(self, role, messages, max_tokens):
        self.attempts += 1
        raise BackendError("simulated timeout", transient=True)


class TestComplete:
    def test_scripted_reply(self):
        gateway, _ = scripted_gateway([entry(ModelRole.LLM_PLANNER, "sub-questions", "Q1\nQ2")])
        reply = gateway.complete(
            ModelRole.LLM_PLANNER, (ChatMessage("user", "please plan sub-questions"),)
        )
        assert reply.text == "Q1\nQ2"
        assert reply.finish_reason is FinishReason.STOP

    def test_entries_consumed_in_order(self):
        gateway, _ = scripted_gateway(
            [
                entry(ModelRole.LLM_PLANNER, "plan", "first"),
                entry(ModelRole.LLM_PLANNER, "plan", "second"),
            ]
        )
        messages = (ChatMessage("user", "plan"),)
        assert gateway.complete(ModelRole.LLM_PLANNER, messages).text == "first"
        assert gateway.complete(ModelRole.LLM_PLANNER, messages).text == "second"

    def test_reusable_entry_not_consumed(self):
        gateway, _ = scripted_gateway(
            [entry(ModelRole.LLM_JUDGE, "judge", "INSUFFICIENT", reusable=True)]
        )
        messages = (ChatMessage("user", "judge this"),)
        for _ in range(3):
            assert gateway.complete(ModelRole.LLM_JUDGE, messages).text == "INSUFFICIENT"

    def test_fixture_miss_is_loud(self):
        gateway, _ = scripted_gateway([entry(ModelRole.LLM_JUDGE, "judge", "x")])
        with pytest.raises(FixtureMissError, match="llm_planner"):
            gateway.complete(ModelRole.LLM_PLANNER, (ChatMessage("user", "whatever"),))

    def test_exactly_r_plus_one_attempts_then_backend_error(self):
        backend = CountingBackend()
        gateway = Gateway(
            chat_backend=backend, config=GatewayConfig(retries=2, backoff_base_s=0.0)
        )
        reply = gateway.complete(ModelRole.LLM_PLANNER, (ChatMessage("user", "x"),))
        assert backend.attempts == 3
        assert reply.finish_reason is FinishReason.BACKEND_ERROR

    def test_non_transient_error_not_retried(self):
        class Fatal:
            attempts = 0

            def complete_raw(self, role, messages, max_tokens):
                self.attempts += 1
                raise BackendError("rejected", transient=False)

        backend = Fatal()
        gateway = Gateway(chat_backend=backend, config=GatewayConfig(retries=2, backoff_base_s=0.0))
        reply = gateway.complete(ModelRole.LLM_PLANNER, (ChatMessage("user", "x"),))
        assert backend.attempts == 1
        assert reply.finish_reason is FinishReason.BACKEND_ERROR

    def test_llm_roles_reject_images(self):
        gateway, _ = scripted_gateway([entry(ModelRole.LLM_PLANNER, "", "x")])
        message = ChatMessage("user", "x", images=(image_payload(),))
        with pytest.raises(GatewayInputError, match="image"):
            gateway.complete(ModelRole.LLM_PLANNER, (message,))

    def test_vlm_roles_allow_at_most_one_image(self):
        gateway, _ = scripted_gateway([entry(ModelRole.VLM_CAPTIONER, "", "x")])
        two = ChatMessage("user", "x", images=(image_payload(), image_payload()))
        with pytest.raises(GatewayInputError, match="at most one"):
            gateway.complete(ModelRole.VLM_CAPTIONER, (two,))

    def test_empty_messages_rejected(self):
        gateway, _ = scripted_gateway()
        with pytest.raises(GatewayInputError):
            gateway.complete(ModelRole.LLM_PLANNER, ())

    def test_detector_role_rejected_for_chat(self):
        gateway, _ = scripted_gateway()
        with pytest.raises(GatewayInputError):
            gateway.complete(ModelRole.DETECTOR, (ChatMessage("user", "x"),))


class TestDetect:
    def test_confidence_floor_filters(self):
        gateway, _ = scripted_gateway(
            detects=[boxes_fixture([(0, 0, 10, 10, 0.9, "a"), (5, 5, 20, 20, 0.3, "b")])]
        )
        reply = gateway.detect(image_payload(), ["object"], 0.5)
        assert len(reply.boxes) == 1
        assert reply.boxes[0].confidence == 0.9

    def test_zero_boxes_is_empty_list(self):
        gateway, _ = scripted_gateway(detects=[boxes_fixture([])])
        assert gateway.detect(image_payload(), ["object"], 0.5).boxes == ()

    def test_out_of_bounds_box_clamped_and_flagged(self):
        gateway, _ = scripted_gateway(
            detects=[boxes_fixture([(-5, 10, 900, 700, 0.8, "big")])]
        )
        reply = gateway.detect(image_payload(64, 48), ["object"], 0.5)
        box = reply.boxes[0]
        assert (box.x_min, box.y_min, box.x_max, box.y_max) == (0, 10, 64, 48)
        assert reply.clamped == (0,)

    def test_sorted_by_descending_confidence(self):
        gateway, _ = scripted_gateway(
            detects=[boxes_fixture([(0, 0, 5, 5, 0.4, "a"), (6, 6, 12, 12, 0.95, "b")])]
        )
        reply = gateway.detect(image_payload(), ["object"], 0.1)
        assert [b.confidence for b in reply.boxes] == [0.95, 0.4]
        assert reply.labels == ("b", "a")

    def test_undecodable_image_is_input_error(self):
        gateway, _ = scripted_gateway(detects=[boxes_fixture([])])
        from vsa.model import ImagePayload

        with pytest.raises(GatewayInputError, match="undecodable"):
            gateway.detect(ImagePayload(b"not an image", "png"), ["object"], 0.5)

    def test_empty_vocabulary_rejected(self):
        gateway, _ = scripted_gateway(detects=[boxes_fixture([])])
        with pytest.raises(GatewayInputError):
            gateway.detect(image_payload(), [], 0.5)


class TestFixtureFile:
    def test_round_trip_from_file(self, tmp_path):
        doc = {
            "schema": "fixtures_v1",
            "chat": [
                {"role": "llm_planner", "match": "plan", "reply": "Q1"},
                {"role": "llm_judge", "match": "judge", "reply": "SUFFICIENT", "reusable": True},
            ],
            "detect": [
                {"match": "*", "boxes": [{"x0": 0, "y0": 0, "x1": 8, "y1": 8, "score": 0.7, "label": "cat"}]}
            ],
        }
        path = tmp_path / "fixtures.json"
        path.write_text(json.dumps(doc))
        backend = ScriptedBackend.from_file(path)
        assert backend.complete_raw(ModelRole.LLM_PLANNER, (ChatMessage("user", "plan"),), 10) == "Q1"
        assert backend.detect_raw(image_payload(), ["cat"], 0.5)[0].label == "cat"

    def test_wrong_schema_rejected(self, tmp_path):
        path = tmp_path / "fixtures.json"
        path.write_text(json.dumps({"schema": "nope", "chat": []}))
        with pytest.raises(ValueError, match="fixtures_v1"):
            ScriptedBackend.from_file(path)


def test_parse_integer_list():
    assert parse_integer_list("1, 3") == [1, 3]
    assert parse_integer_list("pages 2 and 4 look best") == [2, 4]
    assert parse_integer_list("none") == []
