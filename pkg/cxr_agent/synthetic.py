"""
Deterministic synthetic fixtures: an OpenI-style dataset on disk, a
label-in-text ablation matrix, and the stepwise mock-endpoint script.

Every fixture is a pure function of its seed.
"""

import csv
import json
import logging
import os
from typing import Any, Dict, List, Optional

import imageio.v3 as iio
import numpy as np
from pydantic import BaseModel, ConfigDict

from .ablation import (
    BLOCK_RADIOMICS,
    BLOCK_TEXT,
    BLOCK_VOCAB,
    BLOCK_XAI,
    FeatureMatrix,
    assemble_matrix,
)
from .ingest import MANIFEST_NAME, tensor_paths, write_tensor

logger = logging.getLogger(__name__)

IMAGE_SIZE = 32
TENSOR_SHAPE = (4, 7, 7)
EMBEDDING_DIM = 8
INFORMATIVE_DIMS = 3
EMBEDDING_NOISE = 0.6

POSITIVE_REPORTS = (
    "Mild cardiomegaly. Small left pleural effusion with adjacent atelectasis.",
    "Patchy opacity in the right lower lobe concerning for pneumonia.",
    "Enlarged cardiac silhouette with pulmonary edema and small bilateral effusion.",
    "Calcified granuloma in the left upper lobe. Hyperinflation consistent with emphysema.",
)
NEGATIVE_REPORTS = (
    "No focal consolidation, pleural effusion, or pneumothorax identified.",
    "The cardiomediastinal silhouette is normal. Lung fields are clear.",
    "No acute cardiopulmonary abnormality. Degenerative changes of the thoracic spine.",
    "Heart size normal. No pneumothorax. Costophrenic angle is sharp.",
)

# Final answer of the worked example: hedged, limited, with a safety note.
WORKED_EXAMPLE_RESPONSE: Dict[str, Any] = {
    "impression": "No obvious radiographic evidence of active cardiopulmonary abnormality.",
    "evidence": "Lung fields clear. Cardiac silhouette within normal limits.",
    "uncertainty": 0.35,
    "limitations": "Single frontal radiograph without prior comparison.",
    "safety_note": "For research use only; not a substitute for expert interpretation.",
}

_STEP_EVIDENCE = (
    "Lung fields appear clear on the radiograph.",
    "Lung fields appear clear. Intensity statistics and texture are within the expected range.",
    "Lung fields appear clear. Intensity statistics and texture are within the expected range. "
    "The activation map is diffuse without a focal hotspot.",
)
_STEP_LIMITATIONS = (
    "Image review only.",
    "Assessment relies on global radiomic summaries without prior comparison studies.",
    "Assessment relies on global radiomic summaries and a coarse activation map "
    "without prior comparison.",
)
_SAFETY_NOTE = "For research use only; not a substitute for expert interpretation."


class SyntheticDataset(BaseModel):
    """Paths of a generated dataset."""

    model_config = ConfigDict(frozen=True)

    root: str
    manifest: str
    tensor_dir: str
    embeddings: str
    study_ids: List[str]
    labels: List[int]


def _balanced_labels(n: int, rng: np.random.Generator) -> np.ndarray:
    labels = np.zeros(n, dtype=np.int64)
    labels[: n // 2] = 1
    return rng.permutation(labels)


def label_embedding(
    label: int, rng: np.random.Generator, dim: int = EMBEDDING_DIM
) -> np.ndarray:
    """Text-embedding vector that encodes the label in its first few dims."""
    vec = rng.normal(0.0, 1.0, size=dim)
    noise = rng.normal(0.0, EMBEDDING_NOISE, size=INFORMATIVE_DIMS)
    vec[:INFORMATIVE_DIMS] = (2 * label - 1) + noise
    return vec


def _radiograph(rng: np.random.Generator, size: int = IMAGE_SIZE) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size]

    def field(cx: float) -> np.ndarray:
        return np.exp(
            -(((xx - size * cx) / (size * 0.15)) ** 2)
            - ((yy - size * 0.5) / (size * 0.3)) ** 2
        )

    # two darker lung fields on a brighter background, plus noise
    lungs = field(0.3) + field(0.7)
    img = 200.0 - 120.0 * lungs + rng.normal(0.0, 12.0, size=(size, size))
    return np.clip(np.rint(img), 0, 255).astype(np.uint8)


def write_openi_fixture(
    root: str,
    n: int = 50,
    seed: int = 0,
    lateral_every: int = 3,
    with_tensors: bool = True,
) -> SyntheticDataset:
    """Write an OpenI-style dataset: images, reports, manifest, tensors, embeddings.

    Args:
        root: Output directory (created if missing).
        n: Number of studies; labels are balanced.
        seed: Seed for every random draw.
        lateral_every: Every k-th study also gets a lateral PGM view.
        with_tensors: Write activation/gradient XTEN files.

    Returns:
        SyntheticDataset with the generated paths
    """
    rng = np.random.default_rng(seed)
    for sub in ("images", "reports", "tensors"):
        os.makedirs(os.path.join(root, sub), exist_ok=True)

    labels = _balanced_labels(n, rng)
    study_ids = [f"S{i:04d}" for i in range(n)]
    rows = []
    embeddings = []
    for i, (study_id, label) in enumerate(zip(study_ids, labels)):
        frontal = f"images/{study_id}_frontal.png"
        iio.imwrite(os.path.join(root, frontal), _radiograph(rng))
        lateral = ""
        if lateral_every and i % lateral_every == 0:
            lateral = f"images/{study_id}_lateral.pgm"
            iio.imwrite(os.path.join(root, lateral), _radiograph(rng), extension=".pgm")

        pool = POSITIVE_REPORTS if label else NEGATIVE_REPORTS
        report = f"reports/{study_id}.txt"
        with open(os.path.join(root, report), "w", encoding="utf-8") as f:
            f.write(pool[int(rng.integers(len(pool)))] + "\n")

        if with_tensors:
            acts_path, grads_path = tensor_paths(os.path.join(root, "tensors"), study_id)
            write_tensor(acts_path, np.abs(rng.normal(0.0, 1.0, size=TENSOR_SHAPE)))
            write_tensor(grads_path, rng.normal(0.0, 1.0, size=TENSOR_SHAPE))

        rows.append([study_id, frontal, lateral, report, str(int(label))])
        vector = label_embedding(int(label), rng)
        embeddings.append([study_id] + [repr(float(v)) for v in vector])

    manifest = os.path.join(root, MANIFEST_NAME)
    with open(manifest, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["study_id", "frontal", "lateral", "report_file", "label"])
        writer.writerows(rows)

    embeddings_path = os.path.join(root, "embeddings.csv")
    with open(embeddings_path, "w", encoding="utf-8", newline="") as f:
        csv.writer(f, lineterminator="\n").writerows(embeddings)

    logger.info(f"Wrote synthetic dataset with {n} studies to {root}")
    return SyntheticDataset(
        root=root,
        manifest=manifest,
        tensor_dir=os.path.join(root, "tensors"),
        embeddings=embeddings_path,
        study_ids=study_ids,
        labels=[int(v) for v in labels],
    )


def ablation_matrix(
    n: int = 1000,
    seed: int = 0,
    radiomics_dim: int = 10,
    xai_dim: int = 4,
    vocab_dim: int = 6,
) -> FeatureMatrix:
    """Feature matrix whose label lives only in the text-embedding block.

    Radiomics and XAI blocks are Gaussian noise; vocabulary indicators are
    label-independent coin flips.
    """
    rng = np.random.default_rng(seed)
    labels = _balanced_labels(n, rng)
    blocks = {
        BLOCK_RADIOMICS: rng.normal(0.0, 1.0, size=(n, radiomics_dim)),
        BLOCK_XAI: rng.uniform(0.0, 1.0, size=(n, xai_dim)),
        BLOCK_TEXT: np.stack([label_embedding(int(y), rng) for y in labels]),
        BLOCK_VOCAB: (rng.uniform(size=(n, vocab_dim)) < 0.3).astype(np.float64),
    }
    return assemble_matrix([f"S{i:04d}" for i in range(n)], labels, blocks)


def _step_response(step: int, uncertainty: float) -> Dict[str, Any]:
    return {
        "impression": "No obvious radiographic evidence of active cardiopulmonary abnormality.",
        "evidence": _STEP_EVIDENCE[step],
        "uncertainty": uncertainty,
        "limitations": _STEP_LIMITATIONS[step],
        "safety_note": _SAFETY_NOTE,
    }


def stepwise_script(uncertainties=(0.70, 0.70, 0.68)) -> Dict[str, Any]:
    """Mock-endpoint script answering each reasoning step with a fixed uncertainty.

    Context-variant and other requests fall through to the worked-example answer.
    """
    return {
        "rules": [
            {"match": {"step": step}, "response": _step_response(step, value)}
            for step, value in enumerate(uncertainties)
        ],
        "default": {"response": WORKED_EXAMPLE_RESPONSE},
    }


def write_script(path: str, script: Optional[Dict[str, Any]] = None) -> str:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(script or stepwise_script(), f, indent=2, sort_keys=True)
        f.write("\n")
    return path
