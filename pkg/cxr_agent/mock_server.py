"""
Deterministic chat-completion endpoint for hermetic runs and tests.

A script maps request fingerprints (reasoning step, card sections present,
study id, context variant) to canned responses. The first matching rule
wins; with no match the script default answers, and without a default the
server returns 404.
"""

import errno
import json
import logging
import re
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .context import SECTION_RADIOMICS, SECTION_VOCAB, SECTION_XAI
from .exceptions import BadScript, PortBusy

logger = logging.getLogger(__name__)

_STEP = re.compile(r"^Reasoning step: (\d+)$", re.MULTILINE)
_VARIANT = re.compile(r"^Context variant: (\S+)$", re.MULTILINE)
_STUDY = re.compile(r"^Study: (.+)$", re.MULTILINE)


class Fingerprint(BaseModel):
    """What the mock server can tell about a request from its user text."""

    model_config = ConfigDict(frozen=True)

    step: Optional[int] = None
    variant: Optional[str] = None
    study_id: Optional[str] = None
    has_radiomics: bool = False
    has_xai: bool = False
    has_vocab: bool = False
    image_count: int = 0


class RuleMatch(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    step: Optional[int] = None
    variant: Optional[str] = None
    study_id: Optional[str] = None
    has_radiomics: Optional[bool] = None
    has_xai: Optional[bool] = None
    has_vocab: Optional[bool] = None

    def matches(self, fp: Fingerprint) -> bool:
        for name, expected in self.model_dump(exclude_none=True).items():
            if getattr(fp, name) != expected:
                return False
        return True


class ScriptedReply(BaseModel):
    """A canned reply: raw `content` text, or a `response` object sent as JSON."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    content: Optional[str] = None
    response: Optional[Dict[str, Any]] = None
    status: int = Field(default=200, ge=100, le=599)
    delay_s: float = Field(default=0.0, ge=0.0)

    @model_validator(mode="after")
    def _one_body(self) -> "ScriptedReply":
        if self.status == 200 and (self.content is None) == (self.response is None):
            raise ValueError("a 200 reply needs exactly one of content or response")
        return self

    def text(self) -> str:
        if self.content is not None:
            return self.content
        return json.dumps(self.response, sort_keys=True)


class ScriptRule(ScriptedReply):
    match: RuleMatch = RuleMatch()
    # stop matching after this many hits (lets tests fail once, then succeed)
    max_hits: Optional[int] = Field(default=None, ge=1)


class MockScript(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    rules: List[ScriptRule] = []
    default: Optional[ScriptedReply] = None


def load_script(source: Union[str, Dict[str, Any]]) -> MockScript:
    """Parse a script from a JSON file path or an already-loaded dict.

    Raises:
        BadScript: unreadable file, invalid JSON or an invalid rule.
    """
    try:
        if isinstance(source, dict):
            raw = source
        else:
            with open(source, "r", encoding="utf-8") as f:
                raw = json.load(f)
        return MockScript.model_validate(raw)
    except (OSError, ValueError, ValidationError) as e:
        raise BadScript(f"invalid mock script {source if isinstance(source, str) else '<dict>'}: {e}") from e


def _user_text(payload: Dict[str, Any]) -> str:
    parts = []
    for message in payload.get("messages") or []:
        if not isinstance(message, dict) or message.get("role") != "user":
            continue
        content = message.get("content")
        if isinstance(content, str):
            parts.append(content)
        elif isinstance(content, list):
            parts.extend(
                p.get("text", "") for p in content if isinstance(p, dict) and p.get("type") == "text"
            )
    return "\n".join(parts)


def _image_count(payload: Dict[str, Any]) -> int:
    count = 0
    for message in payload.get("messages") or []:
        content = message.get("content") if isinstance(message, dict) else None
        if isinstance(content, list):
            count += sum(1 for p in content if isinstance(p, dict) and p.get("type") == "image_url")
    return count


def fingerprint(payload: Dict[str, Any]) -> Fingerprint:
    """Fingerprint a chat-completion request body."""
    text = _user_text(payload)
    step = _STEP.search(text)
    variant = _VARIANT.search(text)
    study = _STUDY.search(text)
    return Fingerprint(
        step=int(step.group(1)) if step else None,
        variant=variant.group(1) if variant else None,
        study_id=study.group(1).strip() if study else None,
        has_radiomics=f"[{SECTION_RADIOMICS}]" in text,
        has_xai=f"[{SECTION_XAI}]" in text,
        has_vocab=f"[{SECTION_VOCAB}]" in text,
        image_count=_image_count(payload),
    )


class MockEndpoint(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_port = False

    def __init__(self, address, script: MockScript):
        super().__init__(address, _Handler)
        self.script = script
        self.lock = threading.Lock()
        self.hits = [0] * len(script.rules)
        self.received: List[Fingerprint] = []

    def select(self, fp: Fingerprint) -> Optional[ScriptedReply]:
        with self.lock:
            self.received.append(fp)
            for i, rule in enumerate(self.script.rules):
                if rule.max_hits is not None and self.hits[i] >= rule.max_hits:
                    continue
                if rule.match.matches(fp):
                    self.hits[i] += 1
                    return rule
            return self.script.default


class _Handler(BaseHTTPRequestHandler):
    server: MockEndpoint

    def log_message(self, format: str, *args: Any) -> None:
        logger.debug("mock endpoint: " + format % args)

    def _send_json(self, status: int, body: Dict[str, Any]) -> None:
        data = json.dumps(body).encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(data)))
        self.end_headers()
        self.wfile.write(data)

    def do_POST(self) -> None:
        if not self.path.rstrip("/").endswith("/chat/completions"):
            self._send_json(404, {"error": {"message": f"unknown path {self.path}"}})
            return
        length = int(self.headers.get("Content-Length") or 0)
        try:
            payload = json.loads(self.rfile.read(length).decode("utf-8"))
            if not isinstance(payload, dict):
                raise ValueError("body is not an object")
        except ValueError as e:
            self._send_json(400, {"error": {"message": f"bad request body: {e}"}})
            return

        fp = fingerprint(payload)
        reply = self.server.select(fp)
        if reply is None:
            self._send_json(404, {"error": {"message": f"no scripted reply for {fp.model_dump()}"}})
            return
        if reply.delay_s:
            time.sleep(reply.delay_s)
        if reply.status != 200:
            self._send_json(reply.status, {"error": {"message": "scripted failure"}})
            return
        self._send_json(
            200,
            {
                "id": "mock-completion",
                "object": "chat.completion",
                "model": payload.get("model", "mock"),
                "choices": [
                    {
                        "index": 0,
                        "message": {"role": "assistant", "content": reply.text()},
                        "finish_reason": "stop",
                    }
                ],
            },
        )


class MockServer:
    """Running mock endpoint on a background thread; usable as a context manager."""

    def __init__(self, script: MockScript, host: str = "127.0.0.1", port: int = 0):
        self.script = script
        self.host = host
        self.port = port
        self._httpd: Optional[MockEndpoint] = None
        self._thread: Optional[threading.Thread] = None

    @property
    def base_url(self) -> str:
        return f"http://{self.host}:{self.port}/v1"

    @property
    def received(self) -> List[Fingerprint]:
        return list(self._httpd.received) if self._httpd else []

    def start(self) -> "MockServer":
        try:
            self._httpd = MockEndpoint((self.host, self.port), self.script)
        except OSError as e:
            if e.errno == errno.EADDRINUSE:
                raise PortBusy(f"port {self.port} is already in use") from e
            raise
        self.port = self._httpd.server_address[1]
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, name="mock-endpoint", daemon=True
        )
        self._thread.start()
        logger.info(f"Mock endpoint serving {len(self.script.rules)} rules at {self.base_url}")
        return self

    def stop(self) -> None:
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
            self._httpd = None
        if self._thread is not None:
            self._thread.join(timeout=5)
            self._thread = None

    def __enter__(self) -> "MockServer":
        if self._httpd is None:
            self.start()
        return self

    def __exit__(self, *exc: Any) -> None:
        self.stop()


def mock_endpoint(script: Union[str, Dict[str, Any], MockScript], port: int = 0) -> MockServer:
    """Load a script and start serving it; port 0 picks a free port."""
    if not isinstance(script, MockScript):
        script = load_script(script)
    return MockServer(script, port=port).start()
