"""
Tests for the scripted mock chat-completion endpoint
"""

import json

import pytest
import requests

from cxr_agent.exceptions import BadScript, PortBusy
from cxr_agent.mock_server import MockServer, fingerprint, load_script, mock_endpoint
from cxr_agent.synthetic import stepwise_script, write_script


def _payload(text, images=0):
    content = [{"type": "image_url", "image_url": {"url": "data:,"}}] * images
    content.append({"type": "text", "text": text})
    return {
        "model": "m",
        "messages": [
            {"role": "system", "content": "sys"},
            {"role": "user", "content": content},
        ],
    }


def _post(server, payload):
    return requests.post(server.base_url + "/chat/completions", json=payload, timeout=5)


def test_fingerprint_reads_prompt_headers():
    text = "Study: S0007\n\nReasoning step: 1\n\nFeature card:\n[RADIOMICS]\nmean: 1.0000"
    fp = fingerprint(_payload(text, images=2))
    assert fp.step == 1
    assert fp.study_id == "S0007"
    assert fp.variant is None
    assert (fp.has_radiomics, fp.has_xai, fp.has_vocab) == (True, False, False)
    assert fp.image_count == 2


def test_fingerprint_variant():
    fp = fingerprint(_payload("Study: a/b\n\nContext variant: A2_xai\n\n[XAI]"))
    assert fp.variant == "A2_xai"
    assert fp.study_id == "a/b"
    assert fp.step is None and fp.has_xai


def test_first_matching_rule_wins(serve):
    server = serve(
        {
            "rules": [
                {"match": {"step": 1}, "content": "one"},
                {"match": {"has_radiomics": True}, "content": "rad"},
            ],
            "default": {"content": "fallback"},
        }
    )
    card_text = "Study: x\n\nReasoning step: 1\n\n[RADIOMICS]"
    body = _post(server, _payload(card_text)).json()
    assert body["choices"][0]["message"]["content"] == "one"
    body = _post(server, _payload("Study: x\n\nReasoning step: 2\n\n[RADIOMICS]")).json()
    assert body["choices"][0]["message"]["content"] == "rad"
    body = _post(server, _payload("Study: x\n\nReasoning step: 0")).json()
    assert body["choices"][0]["message"]["content"] == "fallback"


def test_response_objects_are_sent_as_json(serve, worked_example):
    server = serve({"default": {"response": worked_example}})
    content = _post(server, _payload("hi")).json()["choices"][0]["message"]["content"]
    assert json.loads(content) == worked_example


def test_no_match_without_default_is_404(serve):
    server = serve({"rules": [{"match": {"study_id": "other"}, "content": "x"}]})
    assert _post(server, _payload("Study: S1")).status_code == 404


def test_bad_body_is_400(serve):
    server = serve({"default": {"content": "x"}})
    response = requests.post(
        server.base_url + "/chat/completions", data=b"not json", timeout=5
    )
    assert response.status_code == 400


def test_unknown_path_is_404(serve):
    server = serve({"default": {"content": "x"}})
    response = requests.post(server.base_url + "/embeddings", json={}, timeout=5)
    assert response.status_code == 404


def test_max_hits_then_fall_through(serve):
    server = serve(
        {"rules": [{"status": 500, "max_hits": 2}], "default": {"content": "ok"}}
    )
    statuses = [_post(server, _payload("x")).status_code for _ in range(3)]
    assert statuses == [500, 500, 200]


@pytest.mark.parametrize(
    "script",
    [
        {"rules": [{"match": {"step": 0}}]},
        {"default": {"content": "a", "response": {}}},
        {"rules": [{"match": {"colour": "red"}, "content": "a"}]},
        {"unknown": 1},
    ],
)
def test_bad_scripts_rejected(script):
    with pytest.raises(BadScript):
        load_script(script)


def test_script_file_round_trip(tmp_path):
    path = write_script(str(tmp_path / "script.json"))
    script = load_script(path)
    assert len(script.rules) == 3
    assert script.default is not None
    with pytest.raises(BadScript):
        load_script(str(tmp_path / "missing.json"))
    broken = tmp_path / "broken.json"
    broken.write_text("{", encoding="utf-8")
    with pytest.raises(BadScript):
        load_script(str(broken))


def test_port_busy():
    with mock_endpoint(stepwise_script()) as first:
        with pytest.raises(PortBusy):
            MockServer(load_script(stepwise_script()), port=first.port).start()


def test_stepwise_script_answers_each_step(serve):
    server = serve(stepwise_script((0.9, 0.8, 0.7)))
    values = []
    for step in range(3):
        body = _post(server, _payload(f"Study: s\n\nReasoning step: {step}")).json()
        values.append(json.loads(body["choices"][0]["message"]["content"])["uncertainty"])
    assert values == [0.9, 0.8, 0.7]
