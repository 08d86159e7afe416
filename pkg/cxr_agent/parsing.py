"""
Structured clinical output parsing.

Extraction is lenient (the first balanced JSON object anywhere in the text,
so prose and code fences around it are tolerated) while field validation is
strict: every schema key must be present and uncertainty must be numeric.
"""

import json
import logging
import math
import re
from typing import Any, Dict, Optional, Tuple

from .core import RESPONSE_FIELDS, StructuredResponse
from .exceptions import MissingField, NoJsonFound, NonNumericUncertainty

logger = logging.getLogger(__name__)

_decoder = json.JSONDecoder()


def _normalize_key(key: str) -> str:
    return re.sub(r"[\s\-]+", "_", key.strip().lower())


def find_json_object(raw: str) -> Dict[str, Any]:
    """Return the first JSON object that decodes cleanly from any `{` in raw."""
    start = raw.find("{")
    while start != -1:
        try:
            obj, _ = _decoder.raw_decode(raw, start)
        except json.JSONDecodeError:
            pass
        else:
            if isinstance(obj, dict):
                return obj
        start = raw.find("{", start + 1)
    raise NoJsonFound("no JSON object in response text")


def _as_text(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, (list, tuple)):
        return " ".join(_as_text(v) for v in value).strip()
    return str(value)


def _as_uncertainty(value: Any) -> float:
    if isinstance(value, bool):
        raise NonNumericUncertainty(f"uncertainty is not numeric: {value!r}")
    if isinstance(value, (int, float)):
        number = float(value)
    elif isinstance(value, str):
        try:
            number = float(value.strip())
        except ValueError:
            raise NonNumericUncertainty(f"uncertainty is not numeric: {value!r}")
    else:
        raise NonNumericUncertainty(f"uncertainty is not numeric: {value!r}")
    if not math.isfinite(number):
        raise NonNumericUncertainty(f"uncertainty is not finite: {value!r}")
    return number


def parse_structured(raw: str) -> StructuredResponse:
    """Parse model output into the five-field response.

    Keys match case-insensitively (spaces and hyphens read as underscores).
    Out-of-range uncertainty is accepted here and flagged by the verifier.

    Raises:
        NoJsonFound: no JSON object anywhere in the text.
        MissingField: a schema key is absent.
        NonNumericUncertainty: uncertainty is not a finite number.
    """
    obj = find_json_object(raw or "")
    fields = {_normalize_key(str(k)): v for k, v in obj.items()}
    for name in RESPONSE_FIELDS:
        if name not in fields:
            raise MissingField(name)
    return StructuredResponse(
        impression=_as_text(fields["impression"]),
        evidence=_as_text(fields["evidence"]),
        uncertainty=_as_uncertainty(fields["uncertainty"]),
        limitations=_as_text(fields["limitations"]),
        safety_note=_as_text(fields["safety_note"]),
    )


def try_parse(raw: str) -> Tuple[Optional[StructuredResponse], Optional[str]]:
    """(response, None) on success, (None, error message) on any parse error."""
    try:
        return parse_structured(raw), None
    except (NoJsonFound, MissingField, NonNumericUncertainty) as e:
        logger.warning(f"Unparseable model output: {e}")
        return None, f"{type(e).__name__}: {e}"


def serialize_response(resp: StructuredResponse) -> str:
    """JSON text that parse_structured reads back field for field."""
    return json.dumps(resp.model_dump(), ensure_ascii=False)
