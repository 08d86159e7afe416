"""
Tests for the chat-completion client against the local mock endpoint
"""

import base64
from unittest.mock import MagicMock, patch

import imageio.v3 as iio
import numpy as np
import pytest
import requests

from cxr_agent.client import ChatClient, ChatRequest, image_data_url
from cxr_agent.core import GrayImage
from cxr_agent.exceptions import (
    EndpointTimeout,
    EndpointUnreachable,
    HttpError,
    MalformedResponse,
    RetriesExhausted,
)
from cxr_agent.mock_server import MockServer, load_script

from .conftest import endpoint_for

REQUEST = ChatRequest(system_text="sys", user_text="Study: S1\n\nReasoning step: 0")


def test_complete_returns_scripted_content(serve):
    server = serve({"default": {"content": "plain text answer"}})
    assert ChatClient(endpoint_for(server.base_url)).complete(REQUEST) == "plain text answer"


def test_complete_retries_transient_status(serve):
    script = {
        "rules": [{"status": 503, "max_hits": 1}],
        "default": {"content": "recovered"},
    }
    server = serve(script)
    client = ChatClient(endpoint_for(server.base_url, max_retries=1))
    assert client.complete(REQUEST) == "recovered"
    assert len(server.received) == 2


def test_complete_retries_exhausted(serve):
    server = serve({"default": {"status": 429}})
    with pytest.raises(RetriesExhausted) as info:
        ChatClient(endpoint_for(server.base_url, max_retries=2)).complete(REQUEST)
    assert info.value.attempts == 3
    assert info.value.status == 429
    assert len(server.received) == 3


def test_complete_non_retryable_status(serve):
    """No matching rule and no default gives a 404, which is not retried."""
    server = serve({"rules": [{"match": {"step": 2}, "content": "x"}]})
    with pytest.raises(HttpError) as info:
        ChatClient(endpoint_for(server.base_url, max_retries=3)).complete(REQUEST)
    assert info.value.status == 404
    assert len(server.received) == 1


def test_complete_unreachable_endpoint():
    server = MockServer(load_script({"default": {"content": "x"}})).start()
    base_url = server.base_url
    server.stop()
    with pytest.raises(EndpointUnreachable):
        ChatClient(endpoint_for(base_url, max_retries=1)).complete(REQUEST)


def test_complete_timeout(serve):
    server = serve({"default": {"content": "late", "delay_s": 1.0}})
    cfg = endpoint_for(server.base_url, timeout=0.2, max_retries=0)
    with pytest.raises(EndpointTimeout):
        ChatClient(cfg).complete(REQUEST)


def test_complete_backoff_doubles():
    session = MagicMock()
    session.post.return_value = MagicMock(status_code=503, text="busy")
    cfg = endpoint_for("http://unused/v1", max_retries=3, backoff_s=0.5)
    with patch("cxr_agent.client.time.sleep") as sleep:
        with pytest.raises(RetriesExhausted):
            ChatClient(cfg, session=session).complete(REQUEST)
    assert [c.args[0] for c in sleep.call_args_list] == [0.5, 1.0, 2.0]


def test_complete_malformed_body():
    session = MagicMock()
    session.post.return_value = MagicMock(status_code=200, json=lambda: {"choices": []})
    with pytest.raises(MalformedResponse):
        ChatClient(endpoint_for("http://unused/v1"), session=session).complete(REQUEST)


def test_complete_connection_error_from_session():
    session = MagicMock()
    session.post.side_effect = requests.ConnectionError("refused")
    cfg = endpoint_for("http://unused/v1", max_retries=2)
    with pytest.raises(EndpointUnreachable):
        ChatClient(cfg, session=session).complete(REQUEST)
    assert session.post.call_count == 3


def test_payload_shape(study):
    client = ChatClient(endpoint_for("http://unused/v1"), api_key="k", seed=7)
    req = ChatRequest(system_text="sys", user_text="hello", images=study.images())
    payload = client.build_payload(req)
    system, user = payload["messages"]
    assert system == {"role": "system", "content": "sys"}
    assert [part["type"] for part in user["content"]] == ["image_url", "image_url", "text"]
    assert payload["temperature"] == 0.0
    assert payload["seed"] == 7
    assert client._headers()["Authorization"] == "Bearer k"


def test_payload_without_images(study):
    cfg = endpoint_for("http://unused/v1", attach_images=False)
    req = ChatRequest(system_text="sys", user_text="hello", images=study.images())
    content = ChatClient(cfg).build_payload(req)["messages"][1]["content"]
    assert content == [{"type": "text", "text": "hello"}]


def test_image_data_url_is_lossless_png():
    arr = np.arange(48, dtype=np.float64).reshape(6, 8) * 5
    url = image_data_url(GrayImage.from_array(arr))
    assert url.startswith("data:image/png;base64,")
    decoded = iio.imread(base64.b64decode(url.split(",", 1)[1]))
    np.testing.assert_array_equal(decoded, arr.astype(np.uint8))


def test_chat_request_limits(study):
    with pytest.raises(ValueError):
        ChatRequest(system_text="s", user_text="   ")
    with pytest.raises(ValueError):
        ChatRequest(system_text="s", user_text="u", images=study.images() * 2)
