"""
Domain types shared by every stage of the pipeline.
"""

from enum import Enum
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from .config import PipelineConfig
from .exceptions import BadPixelBuffer, MissingImage


class LabelValue(str, Enum):
    """Ternary study label; CheXpert uncertain (-1) and blank map to UNKNOWN."""

    NEGATIVE = "0"
    POSITIVE = "1"
    UNKNOWN = "unknown"

    def as_int(self) -> Optional[int]:
        if self is LabelValue.UNKNOWN:
            return None
        return int(self.value)


def coerce_label(value: Any) -> LabelValue:
    """Map 1/0 (any numeric or string spelling) to a label; anything else is unknown."""
    if isinstance(value, LabelValue):
        return value
    if value is None:
        return LabelValue.UNKNOWN
    if isinstance(value, str):
        value = value.strip().lower()
        if value in ("", "unknown", "nan"):
            return LabelValue.UNKNOWN
        try:
            value = float(value)
        except ValueError:
            raise ValueError(f"unrecognised label value: {value!r}")
    if value == 1:
        return LabelValue.POSITIVE
    if value == 0:
        return LabelValue.NEGATIVE
    return LabelValue.UNKNOWN


class GrayImage(BaseModel):
    """8-bit grayscale image, row-major pixel buffer.

    The constructor does not check the buffer against the declared shape so a
    malformed image can still be represented and rejected by validate_study.
    """

    model_config = ConfigDict(frozen=True)

    width: int = Field(gt=0)
    height: int = Field(gt=0)
    pixels: Tuple[float, ...]

    @classmethod
    def from_array(cls, array: np.ndarray) -> "GrayImage":
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim != 2:
            raise BadPixelBuffer(f"expected a 2D array, got shape {arr.shape}")
        height, width = arr.shape
        return cls(width=width, height=height, pixels=tuple(arr.ravel().tolist()))

    def to_array(self) -> np.ndarray:
        """Pixels as a (height, width) float64 array."""
        self.check()
        return np.asarray(self.pixels, dtype=np.float64).reshape(
            self.height, self.width
        )

    def check(self) -> None:
        if len(self.pixels) != self.width * self.height:
            raise BadPixelBuffer(
                f"{self.width}x{self.height} image has {len(self.pixels)} pixels"
            )
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.size and (
            not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 255.0
        ):
            raise BadPixelBuffer("pixel values must lie in [0, 255]")

    def transpose(self) -> "GrayImage":
        return GrayImage.from_array(self.to_array().T)


class Study(BaseModel):
    """One clinical case: up to two radiographs, a report and optional labels."""

    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    frontal_image: Optional[GrayImage] = None
    lateral_image: Optional[GrayImage] = None
    report: str = ""
    labels: Optional[Dict[str, LabelValue]] = None

    @field_validator("labels", mode="before")
    @classmethod
    def _coerce_labels(cls, v: Any) -> Any:
        if v is None:
            return None
        return {str(k): coerce_label(x) for k, x in dict(v).items()}

    def label(self, name: str) -> Optional[int]:
        """Binary value of a label, None when absent or unknown."""
        if not self.labels or name not in self.labels:
            return None
        return self.labels[name].as_int()

    def images(self) -> Tuple[GrayImage, ...]:
        """Present images in frontal-then-lateral order."""
        return tuple(
            img for img in (self.frontal_image, self.lateral_image) if img is not None
        )

    def primary_image(self) -> GrayImage:
        """The view radiomics are computed on: frontal when present."""
        images = self.images()
        if not images:
            raise MissingImage(f"study {self.id} has no image")
        return images[0]


class StructuredResponse(BaseModel):
    """The five-field clinical output contract.

    Uncertainty is not clamped here: out-of-range values are a verifier
    violation, not a construction error.
    """

    model_config = ConfigDict(frozen=True)

    impression: str
    evidence: str
    uncertainty: float
    limitations: str
    safety_note: str

    @field_validator("uncertainty")
    @classmethod
    def _finite(cls, v: float) -> float:
        if not np.isfinite(v):
            raise ValueError("uncertainty must be finite")
        return v


RESPONSE_FIELDS: Tuple[str, ...] = (
    "impression",
    "evidence",
    "uncertainty",
    "limitations",
    "safety_note",
)


def word_count(text: str) -> int:
    """Whitespace-token count used for evidence length."""
    return len(text.split())


def validate_study(s: Study) -> Study:
    """Return the study unchanged if every invariant holds.

    Raises:
        MissingImage: both views absent.
        BadPixelBuffer: a pixel buffer disagrees with its declared shape or range.
    """
    if s.frontal_image is None and s.lateral_image is None:
        raise MissingImage(f"study {s.id} has neither a frontal nor a lateral image")
    for img in s.images():
        img.check()
    return s


__all__ = [
    "GrayImage",
    "LabelValue",
    "PipelineConfig",
    "RESPONSE_FIELDS",
    "StructuredResponse",
    "Study",
    "validate_study",
    "coerce_label",
    "word_count",
]
