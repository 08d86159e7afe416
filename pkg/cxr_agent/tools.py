"""
Context-extraction tools for the reasoning agent.
Runs the three evidence channels (radiomics, Grad-CAM summary, vocabulary
anchors) over a study and packs the results into a feature record.
"""

import json
import logging
import os
from typing import Dict, Iterable, Iterator, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from .config import PipelineConfig
from .context import (
    FeatureCard,
    SemanticAnchors,
    Vocabulary,
    extract_anchors,
    serialize_card,
)
from .core import LabelValue, Study, validate_study
from .exceptions import CxrAgentError, StudyFailure
from .ingest import DatasetManifest, decode_image, load_tensor, scan_manifest, tensor_paths
from .radiomics import RadiomicFeatures, extract_radiomics
from .xai import ActivationSummary, gradcam_summary

logger = logging.getLogger(__name__)


class FeatureRecord(BaseModel):
    """Per-study output of context extraction, one JSON line each."""

    model_config = ConfigDict(frozen=True)

    study_id: str = Field(min_length=1)
    labels: Dict[str, LabelValue] = {}
    report: str = ""
    frontal_path: Optional[str] = None
    lateral_path: Optional[str] = None
    radiomics: Optional[RadiomicFeatures] = None
    xai: Optional[ActivationSummary] = None
    anchors: SemanticAnchors = SemanticAnchors()
    card: str

    def label(self, name: str) -> Optional[int]:
        value = self.labels.get(name)
        return value.as_int() if value is not None else None

    def feature_card(self) -> FeatureCard:
        return FeatureCard(
            radiomics=self.radiomics, xai=self.xai, anchors=self.anchors, rendered=self.card
        )

    def to_study(self) -> Study:
        """Rebuild and validate the study; images are decoded again from their paths.

        Raises:
            MissingImage: the record names neither view.
            BrokenReference: an image path no longer exists.
        """
        return validate_study(
            Study(
                id=self.study_id,
                frontal_image=decode_image(self.frontal_path) if self.frontal_path else None,
                lateral_image=decode_image(self.lateral_path) if self.lateral_path else None,
                report=self.report,
                labels=self.labels or None,
            )
        )

    def to_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True)


def radiomics_tool(study: Study, cfg: PipelineConfig) -> RadiomicFeatures:
    """Radiomic features of the primary view (frontal when present, else lateral)."""
    return extract_radiomics(study.primary_image(), cfg)


def xai_tool(
    study_id: str, tensor_dir: Optional[str], cfg: PipelineConfig
) -> Optional[ActivationSummary]:
    """Grad-CAM summary from `<id>.acts.xten` / `<id>.grads.xten`, None when absent."""
    if not tensor_dir:
        return None
    acts_path, grads_path = tensor_paths(tensor_dir, study_id)
    if not (os.path.isfile(acts_path) and os.path.isfile(grads_path)):
        logger.debug(f"No tensors for {study_id} in {tensor_dir}")
        return None
    return gradcam_summary(load_tensor(acts_path), load_tensor(grads_path), cfg.top_mass_fraction)


def vocabulary_tool(report: str, vocab: Vocabulary) -> SemanticAnchors:
    return extract_anchors(report, vocab)


def extract_features(
    study: Study,
    cfg: PipelineConfig,
    vocab: Vocabulary,
    tensor_dir: Optional[str] = None,
    frontal_path: Optional[str] = None,
    lateral_path: Optional[str] = None,
) -> FeatureRecord:
    """Run every extraction tool on one study and render its feature card.

    Args:
        study: A validated study.
        cfg: Pipeline configuration (GLCM, LBP, percentiles, top-mass fraction).
        vocab: Radiology vocabulary for anchors.
        tensor_dir: Directory holding XTEN tensors; XAI is skipped without it.
        frontal_path: Source path recorded for the frontal view.
        lateral_path: Source path recorded for the lateral view.

    Returns:
        FeatureRecord with the rendered card
    """
    rad = radiomics_tool(study, cfg)
    xai = xai_tool(study.id, tensor_dir, cfg)
    anchors = vocabulary_tool(study.report, vocab)
    card = serialize_card(rad, xai, anchors)
    return FeatureRecord(
        study_id=study.id,
        labels=study.labels or {},
        report=study.report,
        frontal_path=frontal_path,
        lateral_path=lateral_path,
        radiomics=rad,
        xai=xai,
        anchors=anchors,
        card=card.rendered,
    )


def extract_dataset(
    manifest: DatasetManifest,
    cfg: PipelineConfig,
    vocab: Vocabulary,
    tensor_dir: Optional[str] = None,
) -> Iterator[Union[FeatureRecord, StudyFailure]]:
    """Feature records in manifest order; failing studies yield a StudyFailure."""
    for entry, result in scan_manifest(manifest):
        if isinstance(result, Exception):
            yield StudyFailure(entry.study_id, result)
            continue
        try:
            yield extract_features(
                result,
                cfg,
                vocab,
                tensor_dir,
                frontal_path=manifest.resolve(entry.frontal) if entry.frontal else None,
                lateral_path=manifest.resolve(entry.lateral) if entry.lateral else None,
            )
        except CxrAgentError as e:
            logger.warning(f"Feature extraction failed for {entry.study_id}: {e}")
            yield StudyFailure(entry.study_id, e)


def read_feature_records(lines: Iterable[str]) -> List[FeatureRecord]:
    """Parse JSON lines into records; blank lines are skipped."""
    return [FeatureRecord.model_validate_json(line) for line in lines if line.strip()]

