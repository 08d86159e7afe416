"""
Tests for the context-extraction tools and feature records
"""

import numpy as np
import pytest

from cxr_agent.context import SECTION_VOCAB, SECTION_XAI, load_vocabulary
from cxr_agent.exceptions import MissingImage, StudyFailure
from cxr_agent.ingest import read_manifest, tensor_paths, write_tensor
from cxr_agent.synthetic import write_openi_fixture
from cxr_agent.tools import (
    FeatureRecord,
    extract_dataset,
    extract_features,
    read_feature_records,
    xai_tool,
)


def test_extract_features_without_tensors(study, pipeline_config):
    record = extract_features(study, pipeline_config, load_vocabulary())
    assert record.xai is None
    assert record.anchors.matched == ("cardiomegaly", "pneumothorax")
    assert record.card.startswith("[RADIOMICS]")
    assert SECTION_XAI not in record.feature_card().sections()
    assert record.label("label") == 1


def test_extract_features_with_tensors(tmp_path, study, pipeline_config, rng):
    acts_path, grads_path = tensor_paths(str(tmp_path), study.id)
    write_tensor(acts_path, np.abs(rng.normal(size=(3, 5, 5))))
    write_tensor(grads_path, rng.normal(size=(3, 5, 5)))
    record = extract_features(study, pipeline_config, load_vocabulary(), str(tmp_path))
    assert record.xai is not None
    assert "[XAI]" in record.card
    assert record.feature_card().sections()[-1] == SECTION_VOCAB


def test_xai_tool_needs_both_tensors(tmp_path, pipeline_config, rng):
    acts_path, _ = tensor_paths(str(tmp_path), "S9")
    write_tensor(acts_path, np.ones((1, 2, 2)))
    assert xai_tool("S9", str(tmp_path), pipeline_config) is None
    assert xai_tool("S9", None, pipeline_config) is None


def test_record_json_is_stable(study, pipeline_config):
    record = extract_features(study, pipeline_config, load_vocabulary())
    text = record.to_json()
    again = FeatureRecord.model_validate_json(text)
    assert again.to_json() == text
    assert again.feature_card().rendered == record.card
    assert read_feature_records([text, "", text])[1] == again


def test_extract_dataset_in_manifest_order(tmp_path, pipeline_config):
    dataset = write_openi_fixture(str(tmp_path), n=4, seed=3)
    manifest = read_manifest(dataset.root)
    results = list(
        extract_dataset(manifest, pipeline_config, load_vocabulary(), dataset.tensor_dir)
    )
    assert [r.study_id for r in results] == dataset.study_ids
    assert all(r.xai is not None for r in results)
    study = results[0].to_study()
    assert study.frontal_image.width == 32
    assert study.label("label") == dataset.labels[0]


def test_extract_dataset_reports_failures(tmp_path, pipeline_config):
    dataset = write_openi_fixture(str(tmp_path), n=3, seed=3, with_tensors=False)
    (tmp_path / "images" / "S0001_frontal.png").unlink()
    results = list(extract_dataset(read_manifest(dataset.root), pipeline_config, load_vocabulary()))
    assert isinstance(results[1], StudyFailure)
    assert results[1].study_id == "S0001"
    assert isinstance(results[0], FeatureRecord) and isinstance(results[2], FeatureRecord)


def test_record_without_image_paths_fails_validation(study, pipeline_config):
    record = extract_features(study, pipeline_config, load_vocabulary())
    assert record.frontal_path is None and record.lateral_path is None
    with pytest.raises(MissingImage):
        record.to_study()
