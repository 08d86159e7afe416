"""
Grad-CAM mathematics over externally supplied activation and gradient tensors,
and activation-map summary statistics.

The CNN itself never runs here: tensors arrive from XTEN files or an
inference service.
"""

import logging
import math
from typing import NamedTuple, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from .exceptions import EmptyTensor, ShapeMismatch

logger = logging.getLogger(__name__)


class Tensor3(BaseModel):
    """Channel-major, row-major (K, h, w) tensor of finite reals."""

    model_config = ConfigDict(frozen=True)

    channels: int = Field(gt=0)
    height: int = Field(gt=0)
    width: int = Field(gt=0)
    values: Tuple[float, ...]

    @model_validator(mode="after")
    def _consistent(self) -> "Tensor3":
        expected = self.channels * self.height * self.width
        if len(self.values) != expected:
            raise ValueError(
                f"tensor {self.channels}x{self.height}x{self.width} needs "
                f"{expected} values, got {len(self.values)}"
            )
        if not all(math.isfinite(v) for v in self.values):
            raise ValueError("tensor values must be finite")
        return self

    @classmethod
    def from_array(cls, array: np.ndarray) -> "Tensor3":
        arr = np.asarray(array, dtype=np.float64)
        if arr.ndim != 3:
            raise ShapeMismatch(f"expected a 3D array, got shape {arr.shape}")
        if arr.size == 0:
            raise EmptyTensor("tensor holds no values")
        k, h, w = arr.shape
        return cls(channels=k, height=h, width=w, values=tuple(arr.ravel().tolist()))

    def to_array(self) -> np.ndarray:
        return np.asarray(self.values, dtype=np.float64).reshape(
            self.channels, self.height, self.width
        )


TensorLike = Union[Tensor3, np.ndarray]


class NormalizedMap(NamedTuple):
    values: np.ndarray
    degenerate: bool


class ActivationSummary(BaseModel):
    """Spatial statistics of a min-max normalized activation map."""

    model_config = ConfigDict(frozen=True)

    mean: float = Field(ge=0.0, le=1.0)
    max: float = Field(ge=0.0, le=1.0)
    entropy: float = Field(ge=0.0, le=1.0)
    top_mass: float = Field(ge=0.0, le=1.0)
    degenerate: bool = False

    def vector(self) -> np.ndarray:
        return np.asarray([self.mean, self.max, self.entropy, self.top_mass])


def _tensor(t: TensorLike) -> np.ndarray:
    arr = t.to_array() if isinstance(t, Tensor3) else np.asarray(t, dtype=np.float64)
    if arr.size == 0:
        raise EmptyTensor("tensor holds no values")
    if arr.ndim != 3:
        raise ShapeMismatch(f"expected (K, h, w), got shape {arr.shape}")
    return arr


def gradcam_weights(grads: TensorLike) -> np.ndarray:
    """alpha_k: spatial mean of the gradient in channel k (Z = h * w)."""
    return _tensor(grads).mean(axis=(1, 2))


def gradcam_map(alpha: Sequence[float], acts: TensorLike) -> np.ndarray:
    """ReLU of the alpha-weighted channel sum of activations."""
    A = _tensor(acts)
    weights = np.asarray(alpha, dtype=np.float64)
    if weights.shape != (A.shape[0],):
        raise ShapeMismatch(
            f"{weights.size} weights for {A.shape[0]} activation channels"
        )
    return np.maximum(np.tensordot(weights, A, axes=1), 0.0)


def normalize_map(cam: np.ndarray) -> NormalizedMap:
    """Min-max normalization; a constant map becomes all zeros and is flagged."""
    cam = np.asarray(cam, dtype=np.float64)
    if cam.size == 0:
        raise EmptyTensor("activation map is empty")
    lo, hi = float(cam.min()), float(cam.max())
    if hi == lo:
        return NormalizedMap(np.zeros_like(cam), True)
    return NormalizedMap((cam - lo) / (hi - lo), False)


def summarize_activation(
    cam: np.ndarray, top_fraction: float, degenerate: bool = False
) -> ActivationSummary:
    """Mean, max, normalized entropy and top-fraction mass of a [0, 1] map.

    Entropy is the natural-log Shannon entropy of the map read as a
    distribution, divided by ln(h * w). Top mass is the share of total mass in
    the ceil(top_fraction * h * w) largest cells.
    """
    m = np.asarray(cam, dtype=np.float64).ravel()
    n = m.size
    total = float(m.sum())
    if total <= 0.0:
        return ActivationSummary(
            mean=0.0, max=0.0, entropy=0.0, top_mass=0.0, degenerate=degenerate
        )

    p = m / total
    nz = p[p > 0]
    entropy = float(-(nz * np.log(nz)).sum() / math.log(n)) if n > 1 else 0.0

    # tolerance keeps 0.1 * 100 from rounding up to 11 cells
    k = min(n, max(1, math.ceil(top_fraction * n - 1e-9)))
    top = np.sort(m)[::-1][:k]
    top_mass = float(top.sum() / total)

    return ActivationSummary(
        mean=float(np.clip(m.mean(), 0.0, 1.0)),
        max=float(np.clip(m.max(), 0.0, 1.0)),
        entropy=float(np.clip(entropy, 0.0, 1.0)),
        top_mass=float(np.clip(top_mass, 0.0, 1.0)),
        degenerate=degenerate,
    )


def gradcam_summary(
    acts: TensorLike, grads: TensorLike, top_fraction: float
) -> ActivationSummary:
    """Weights, map, normalization and summary in one call."""
    A, G = _tensor(acts), _tensor(grads)
    if A.shape != G.shape:
        raise ShapeMismatch(f"activations {A.shape} vs gradients {G.shape}")
    cam = gradcam_map(gradcam_weights(G), A)
    normalized = normalize_map(cam)
    if normalized.degenerate:
        logger.info("Grad-CAM map is constant; summarizing an all-zero map")
    return summarize_activation(normalized.values, top_fraction, normalized.degenerate)
