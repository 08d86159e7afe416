"""
Radiomic intensity and texture statistics.

First-order statistics are computed on raw intensities; the co-occurrence
matrix is built on an image quantized into equal-width bins over [0, 255].
"""

import logging
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict
from skimage.feature import graycomatrix

from .config import GlcmConfig, LbpConfig, PipelineConfig
from .core import GrayImage
from .exceptions import DegenerateImage, EmptyImage, ImageTooSmall, NotNormalized

logger = logging.getLogger(__name__)

ImageLike = Union[GrayImage, np.ndarray]

# Classic LBP ring, clockwise from the top-left neighbour; entry k sets bit k.
LBP_OFFSETS: Tuple[Tuple[int, int], ...] = (
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, 1),
    (1, 1),
    (1, 0),
    (1, -1),
    (0, -1),
)


class IntensityStats(BaseModel):
    """First-order statistics of raw intensities."""

    model_config = ConfigDict(frozen=True)

    mean: float
    variance: float
    std: float
    min: float
    max: float
    range: float
    percentiles: Dict[float, float]


class RadiomicFeatures(IntensityStats):
    """Intensity statistics plus GLCM texture and the LBP histogram."""

    glcm_contrast: float
    glcm_homogeneity: float
    lbp_histogram: Tuple[float, ...]

    def lbp_entropy(self) -> float:
        """Shannon entropy of the LBP histogram in bits, scaled to [0, 1]."""
        hist = np.asarray(self.lbp_histogram, dtype=np.float64)
        p = hist[hist > 0]
        if p.size <= 1:
            return 0.0
        return float(-(p * np.log2(p)).sum() / np.log2(hist.size))

    def vector(self) -> np.ndarray:
        """Flat numeric vector, fixed order, for classifiers."""
        head = [self.mean, self.variance, self.std, self.min, self.max, self.range]
        pct = [self.percentiles[k] for k in sorted(self.percentiles)]
        tail = [self.glcm_contrast, self.glcm_homogeneity]
        return np.asarray(head + pct + tail + list(self.lbp_histogram), dtype=np.float64)


def _as_array(img: ImageLike) -> np.ndarray:
    if isinstance(img, GrayImage):
        return img.to_array()
    return np.asarray(img, dtype=np.float64)


def intensity_stats(img: ImageLike, percentiles: Sequence[float]) -> IntensityStats:
    """Mean, population variance, extremes and linearly interpolated percentiles."""
    arr = _as_array(img)
    if arr.size == 0:
        raise EmptyImage("image has no pixels")
    pct = tuple(float(p) for p in percentiles)
    if any(not (0.0 < p < 100.0) for p in pct) or any(
        b <= a for a, b in zip(pct, pct[1:])
    ):
        raise ValueError("percentiles must be strictly increasing in (0, 100)")

    flat = arr.ravel()
    mean = float(flat.mean())
    variance = float(np.mean((flat - mean) ** 2))
    lo, hi = float(flat.min()), float(flat.max())
    values = np.percentile(flat, pct) if pct else np.empty(0)
    # interpolation can overshoot the extremes by an ulp
    values = np.clip(values, lo, hi)
    return IntensityStats(
        mean=mean,
        variance=variance,
        std=float(np.sqrt(variance)),
        min=lo,
        max=hi,
        range=hi - lo,
        percentiles={p: float(v) for p, v in zip(pct, values)},
    )


def quantize(arr: np.ndarray, levels: int) -> np.ndarray:
    """Equal-width binning of [0, 255] into `levels` gray levels."""
    q = np.floor(arr * (levels / 256.0)).astype(np.int64)
    return np.clip(q, 0, levels - 1).astype(np.uint8)


def compute_glcm(img: ImageLike, cfg: GlcmConfig) -> np.ndarray:
    """Normalized co-occurrence matrix accumulated over every configured angle.

    Pair displacement follows skimage: (round(sin t * d), round(cos t * d)) in
    (row, col) for angle t.
    """
    arr = _as_array(img)
    if arr.size == 0:
        raise EmptyImage("image has no pixels")
    q = quantize(arr, cfg.levels)
    counts = graycomatrix(
        q,
        distances=[cfg.distance],
        angles=np.deg2rad(np.asarray(cfg.angles, dtype=np.float64)),
        levels=cfg.levels,
        symmetric=cfg.symmetric,
        normed=False,
    )
    total_counts = counts.sum(axis=(2, 3)).astype(np.float64)
    total = total_counts.sum()
    if total == 0:
        raise DegenerateImage(
            f"{arr.shape[1]}x{arr.shape[0]} image has no pixel pair at distance "
            f"{cfg.distance}"
        )
    return total_counts / total


def glcm_texture(P: np.ndarray) -> Dict[str, float]:
    """Contrast sum((i-j)^2 P) and homogeneity sum(P / (1 + |i-j|))."""
    P = np.asarray(P, dtype=np.float64)
    if abs(P.sum() - 1.0) > 1e-6:
        raise NotNormalized(f"co-occurrence matrix sums to {P.sum():.6g}")
    i, j = np.indices(P.shape)
    diff = np.abs(i - j)
    return {
        "contrast": float((diff**2 * P).sum()),
        "homogeneity": float((P / (1.0 + diff)).sum()),
    }


def lbp_codes(arr: np.ndarray, radius: int) -> np.ndarray:
    """Per-interior-pixel 8-bit codes; ties (neighbour == centre) set the bit."""
    h, w = arr.shape
    if h < 2 * radius + 1 or w < 2 * radius + 1:
        raise ImageTooSmall(
            f"{w}x{h} image has no interior pixel at LBP radius {radius}"
        )
    center = arr[radius : h - radius, radius : w - radius]
    codes = np.zeros(center.shape, dtype=np.int64)
    for bit, (dy, dx) in enumerate(LBP_OFFSETS):
        r0, c0 = radius + dy * radius, radius + dx * radius
        neighbour = arr[r0 : r0 + center.shape[0], c0 : c0 + center.shape[1]]
        codes |= (neighbour >= center).astype(np.int64) << bit
    return codes


def lbp_histogram(img: ImageLike, cfg: LbpConfig) -> np.ndarray:
    """Normalized histogram of classic LBP codes over interior pixels."""
    codes = lbp_codes(_as_array(img), cfg.radius)
    hist = np.bincount(codes.ravel(), minlength=cfg.histogram_bins).astype(np.float64)
    return hist / hist.sum()


def extract_radiomics(img: ImageLike, cfg: PipelineConfig) -> RadiomicFeatures:
    """Intensity statistics, GLCM texture and LBP histogram in one record."""
    stats = intensity_stats(img, cfg.percentiles)
    texture = glcm_texture(compute_glcm(img, cfg.glcm))
    hist = lbp_histogram(img, cfg.lbp)
    return RadiomicFeatures(
        **stats.model_dump(),
        glcm_contrast=texture["contrast"],
        glcm_homogeneity=texture["homogeneity"],
        lbp_histogram=tuple(hist.tolist()),
    )
