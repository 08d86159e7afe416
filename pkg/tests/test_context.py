"""
Tests for vocabulary loading, anchor extraction and feature-card rendering
"""

import numpy as np
import pytest

from cxr_agent.config import PipelineConfig
from cxr_agent.context import (
    SECTION_RADIOMICS,
    SECTION_VOCAB,
    SECTION_XAI,
    SemanticAnchors,
    Vocabulary,
    extract_anchors,
    format_number,
    load_vocabulary,
    serialize_card,
)
from cxr_agent.exceptions import EmptyCard, EmptyVocabulary, VocabularyIOError
from cxr_agent.radiomics import extract_radiomics
from cxr_agent.xai import ActivationSummary

FINDINGS = Vocabulary(
    terms={"consolidation", "pleural effusion", "pneumothorax", "cardiomegaly"}
)


@pytest.fixture
def radiomics(rng):
    arr = rng.integers(0, 256, size=(16, 16))
    return extract_radiomics(arr, PipelineConfig())


@pytest.fixture
def activation():
    return ActivationSummary(mean=0.25, max=1.0, entropy=0.875, top_mass=0.3)


def test_anchors_in_first_occurrence_order():
    report = "No focal consolidation, pleural effusion, or pneumothorax identified."
    anchors = extract_anchors(report, FINDINGS)
    assert anchors.matched == ("consolidation", "pleural effusion", "pneumothorax")


def test_anchors_empty_report():
    assert extract_anchors("", FINDINGS).matched == ()


def test_anchors_respect_word_boundaries():
    assert extract_anchors("cardiomegaly", Vocabulary(terms={"megaly"})).matched == ()
    assert extract_anchors("lungs clear", Vocabulary(terms={"lung"})).matched == ()


def test_anchors_case_insensitive_and_unique():
    anchors = extract_anchors("Cardiomegaly. CARDIOMEGALY again.", FINDINGS)
    assert anchors.matched == ("cardiomegaly",)


def test_anchors_overlapping_terms_longest_first():
    vocab = Vocabulary(terms={"effusion", "pleural effusion", "pleura"})
    anchors = extract_anchors("Small pleural effusion.", vocab)
    assert anchors.matched == ("pleural effusion", "effusion")


def test_anchors_subset_of_vocabulary():
    vocab = load_vocabulary()
    report = "Mild cardiomegaly. Lung fields clear. No pneumothorax."
    anchors = extract_anchors(report, vocab)
    assert set(anchors.matched) <= vocab.terms
    assert "cardiomegaly" in anchors.matched
    assert "lung fields" in anchors.matched


def test_default_vocabulary_loads():
    vocab = load_vocabulary()
    assert "pleural effusion" in vocab.terms
    assert all(t == t.lower() for t in vocab.terms)


def test_load_vocabulary_skips_comments_and_blanks(tmp_path):
    path = tmp_path / "vocab.txt"
    path.write_text("# header\n\nNodule\n  Hilar   Adenopathy \nnodule\n", encoding="utf-8")
    vocab = load_vocabulary(str(path))
    assert vocab.terms == frozenset({"nodule", "hilar adenopathy"})


def test_load_vocabulary_errors(tmp_path):
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing\n\n", encoding="utf-8")
    with pytest.raises(EmptyVocabulary):
        load_vocabulary(str(empty))
    with pytest.raises(VocabularyIOError):
        load_vocabulary(str(tmp_path / "missing.txt"))


@pytest.mark.parametrize(
    "value, text",
    [(0.5, "0.5000"), (-0.0, "0.0000"), (-0.00001, "0.0000"), (1234.56789, "1234.5679")],
)
def test_format_number(value, text):
    assert format_number(value) == text


def test_card_requires_a_section():
    with pytest.raises(EmptyCard):
        serialize_card()


def test_card_section_order_and_layout(radiomics, activation):
    anchors = SemanticAnchors(matched=("cardiomegaly",))
    card = serialize_card(radiomics, activation, anchors)
    text = card.rendered
    assert card.sections() == (SECTION_RADIOMICS, SECTION_XAI, SECTION_VOCAB)
    assert text.index("[RADIOMICS]") < text.index("[XAI]") < text.index("[VOCAB]")
    assert "activation_entropy: 0.8750" in text
    assert text.endswith("[VOCAB]\n- cardiomegaly")
    assert "note: constant activation map" not in text


def test_card_numbers_have_four_decimals(radiomics, activation):
    text = serialize_card(radiomics, activation).rendered
    for line in text.splitlines():
        if ": " in line:
            value = line.split(": ", 1)[1]
            assert len(value.split(".")[1]) == 4


def test_card_omits_absent_sections(activation):
    text = serialize_card(xai=activation).rendered
    assert text.startswith("[XAI]")
    assert "[RADIOMICS]" not in text and "[VOCAB]" not in text


def test_card_empty_vocab_section():
    text = serialize_card(voc=SemanticAnchors()).rendered
    assert text == "[VOCAB]\n- (none)"


def test_card_marks_degenerate_map():
    flat = ActivationSummary(mean=0, max=0, entropy=0, top_mass=0, degenerate=True)
    assert "note: constant activation map" in serialize_card(xai=flat).rendered


def test_card_is_deterministic(rng):
    arr = rng.integers(0, 256, size=(20, 20))
    first = serialize_card(extract_radiomics(arr, PipelineConfig()))
    second = serialize_card(extract_radiomics(np.array(arr), PipelineConfig()))
    assert first.rendered == second.rendered


def test_card_render_subset(radiomics, activation):
    card = serialize_card(radiomics, activation, SemanticAnchors(matched=("mass",)))
    assert card.render([SECTION_XAI]) == serialize_card(xai=activation).rendered
    assert card.render([]) == ""
    assert card.render(list(card.sections())) == card.rendered
