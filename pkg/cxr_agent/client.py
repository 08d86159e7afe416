"""
Chat-completion client for the frozen vision-language model.

Speaks the open chat-completion HTTP protocol (messages array, images as
base64 PNG data URLs) so hosted models and the bundled mock endpoint are
interchangeable through configuration.
"""

import base64
import logging
import os
import time
from typing import Any, Dict, List, Optional, Tuple

import imageio.v3 as iio
import numpy as np
import requests
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .config import EndpointConfig
from .core import GrayImage
from .exceptions import (
    EndpointTimeout,
    EndpointUnreachable,
    HttpError,
    MalformedResponse,
    RetriesExhausted,
)

logger = logging.getLogger(__name__)

TRANSIENT_STATUSES = frozenset({429})


class ChatRequest(BaseModel):
    """One multimodal chat turn: system instructions, user text, 0-2 images."""

    model_config = ConfigDict(frozen=True)

    system_text: str
    user_text: str = Field(min_length=1)
    images: Tuple[GrayImage, ...] = Field(default=(), max_length=2)

    @field_validator("user_text")
    @classmethod
    def _non_blank(cls, v: str) -> str:
        if not v.strip():
            raise ValueError("user_text must not be blank")
        return v


def image_data_url(img: GrayImage) -> str:
    """8-bit grayscale PNG encoded as a data URL."""
    arr = np.clip(np.rint(img.to_array()), 0, 255).astype(np.uint8)
    png = iio.imwrite("<bytes>", arr, extension=".png")
    return "data:image/png;base64," + base64.b64encode(png).decode("ascii")


def _is_transient(status: int) -> bool:
    return status in TRANSIENT_STATUSES or status >= 500


class ChatClient:
    """Stateless chat-completion client; retries are per request."""

    def __init__(
        self,
        cfg: EndpointConfig,
        api_key: Optional[str] = None,
        seed: Optional[int] = None,
        session: Optional[requests.Session] = None,
    ):
        """Initialize the client.

        Args:
            cfg: Endpoint settings.
            api_key: Bearer token. If None, read from the variable named by
                cfg.api_key_env.
            seed: Decoding seed forwarded to the endpoint.
            session: Optional requests session (one per thread is safest).
        """
        self.cfg = cfg
        self.api_key = api_key if api_key is not None else os.getenv(cfg.api_key_env, "")
        self.seed = seed
        self.session = session or requests.Session()
        self.url = cfg.base_url.rstrip("/") + "/chat/completions"

    def build_payload(self, req: ChatRequest) -> Dict[str, Any]:
        """Request body in the chat-completion wire format."""
        content: List[Dict[str, Any]] = []
        if self.cfg.attach_images:
            for img in req.images:
                content.append(
                    {"type": "image_url", "image_url": {"url": image_data_url(img)}}
                )
        content.append({"type": "text", "text": req.user_text})

        payload: Dict[str, Any] = {
            "model": self.cfg.model_name,
            "messages": [
                {"role": "system", "content": req.system_text},
                {"role": "user", "content": content},
            ],
            "temperature": self.cfg.temperature,
            "max_tokens": self.cfg.max_output_tokens,
        }
        if self.seed is not None:
            payload["seed"] = self.seed
        return payload

    def _headers(self) -> Dict[str, str]:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        return headers

    @staticmethod
    def _extract_text(data: Any) -> str:
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError):
            raise MalformedResponse("response has no choices[0].message.content")
        if isinstance(content, list):
            content = "".join(
                part.get("text", "") for part in content if isinstance(part, dict)
            )
        if not isinstance(content, str):
            raise MalformedResponse("message content is not text")
        return content

    def complete(self, req: ChatRequest) -> str:
        """Send one chat request and return the assistant text verbatim.

        Connection errors, timeouts, 429 and 5xx are retried up to
        cfg.max_retries times with exponential backoff.

        Raises:
            HttpError: non-retryable status.
            EndpointTimeout: every attempt timed out last.
            EndpointUnreachable: no connection could be made.
            RetriesExhausted: transient statuses on every attempt.
            MalformedResponse: 200 with an unusable body.
        """
        payload = self.build_payload(req)
        attempts = 1 + self.cfg.max_retries
        last_failure = ""
        last_status: Optional[int] = None

        for attempt in range(attempts):
            if attempt:
                wait = self.cfg.backoff_s * 2 ** (attempt - 1)
                logger.warning(
                    f"Retrying chat completion (attempt {attempt + 1} of {attempts}) "
                    f"after {last_failure}; waiting {wait:.2f}s"
                )
                time.sleep(wait)
            try:
                response = self.session.post(
                    self.url,
                    json=payload,
                    headers=self._headers(),
                    timeout=self.cfg.timeout,
                )
            except requests.Timeout:
                last_failure = "timeout"
                continue
            except requests.ConnectionError as e:
                last_failure = "connection"
                logger.debug(f"Connection to {self.url} failed: {e}")
                continue

            status = response.status_code
            if status >= 400:
                if not _is_transient(status):
                    raise HttpError(status, response.text[:500])
                last_failure = f"HTTP {status}"
                last_status = status
                continue

            try:
                data = response.json()
            except ValueError:
                raise MalformedResponse("response body is not JSON")
            return self._extract_text(data)

        if last_failure == "timeout":
            raise EndpointTimeout(
                f"{self.url} timed out after {self.cfg.timeout}s ({attempts} attempts)"
            )
        if last_failure == "connection":
            raise EndpointUnreachable(f"{self.url} unreachable after {attempts} attempts")
        raise RetriesExhausted(attempts, last_status)


def complete(cfg: EndpointConfig, req: ChatRequest, seed: Optional[int] = None) -> str:
    """One-off chat completion with a fresh client."""
    return ChatClient(cfg, seed=seed).complete(req)
