"""
Tests for AUC, ROUGE, hallucination rate and agentic trace statistics
"""

import numpy as np
import pytest

from cxr_agent.agent import ReasoningTrace, TraceStep
from cxr_agent.config import ReasoningMode
from cxr_agent.context import Vocabulary, load_vocabulary
from cxr_agent.core import StructuredResponse
from cxr_agent.exceptions import (
    EmptyBatch,
    InconsistentTraces,
    LabelError,
    LengthMismatch,
    SingleClass,
)
from cxr_agent.metrics import (
    agentic_metrics,
    auc,
    hallucination_rate,
    hallucinated_terms,
    metrics_table,
    quality_row,
    rouge,
    step_table,
    tokenize,
)

FINDINGS = Vocabulary(terms={"pneumothorax", "effusion", "cardiomegaly", "nodule"})


def response(uncertainty, evidence="Lung fields clear.", **overrides):
    fields = dict(
        impression="No acute abnormality.",
        evidence=evidence,
        uncertainty=uncertainty,
        limitations="Single view without priors.",
        safety_note="For research use only; not a substitute for expert review.",
    )
    fields.update(overrides)
    return StructuredResponse(**fields)


def stepwise_trace(study_id, *responses):
    steps = tuple(
        TraceStep(
            step_index=i,
            response=r,
            raw_text="",
            parse_error=None if r is not None else "NoJsonFound: no JSON object",
        )
        for i, r in enumerate(responses)
    )
    return ReasoningTrace(study_id=study_id, mode=ReasoningMode.STEPWISE, steps=steps)


def pair_auc(scores, labels):
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    total = sum(1.0 if p > n else 0.5 if p == n else 0.0 for p in pos for n in neg)
    return total / (len(pos) * len(neg))


def test_auc_perfect_and_tied():
    assert auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auc([0.9, 0.8, 0.2, 0.1], [0, 0, 1, 1]) == 0.0
    assert auc([0.5] * 6, [0, 1, 0, 1, 0, 1]) == 0.5


def test_auc_matches_pair_counting(rng):
    for _ in range(300):
        size = int(rng.integers(2, 40))
        scores = rng.integers(0, 10, size=size).astype(float)
        labels = rng.integers(0, 2, size=size)
        labels[:2] = [0, 1]
        assert abs(auc(scores, labels) - pair_auc(scores, labels)) < 1e-12


def test_auc_invariant_under_monotone_transform(rng):
    scores = rng.normal(size=150)
    labels = rng.integers(0, 2, size=150)
    labels[:2] = [0, 1]
    base = auc(scores, labels)
    assert auc(3.0 * scores + 1.0, labels) == pytest.approx(base, abs=1e-12)
    assert auc(np.exp(scores), labels) == pytest.approx(base, abs=1e-12)
    assert auc(np.round(scores, 1) ** 3, labels) == pytest.approx(
        auc(np.round(scores, 1), labels), abs=1e-12
    )


def test_auc_of_negated_scores_is_complement(rng):
    for _ in range(20):
        scores = rng.integers(0, 8, size=60).astype(float)
        labels = rng.integers(0, 2, size=60)
        labels[:2] = [0, 1]
        assert auc(-scores, labels) == pytest.approx(1.0 - auc(scores, labels), abs=1e-12)


def test_auc_errors():
    with pytest.raises(SingleClass):
        auc([0.1, 0.2], [1, 1])
    with pytest.raises(LabelError):
        auc([0.1, 0.2], [0, 2])
    with pytest.raises(LengthMismatch):
        auc([0.1, 0.2, 0.3], [0, 1])


def test_rouge_hand_example():
    scores = rouge("the cat sat", "the cat ran")
    assert scores.r1 == pytest.approx(2 / 3)
    assert scores.r2 == pytest.approx(1 / 2)
    assert scores.rl == pytest.approx(2 / 3)


def test_rouge_identity_and_disjoint():
    same = rouge("Lung fields clear.", "lung fields, clear")
    assert (same.r1, same.r2, same.rl) == (1.0, 1.0, 1.0)
    apart = rouge("heart normal", "lungs clear")
    assert (apart.r1, apart.r2, apart.rl) == (0.0, 0.0, 0.0)
    assert rouge("", "anything").r1 == 0.0


def test_rouge_lcs_is_order_aware():
    scores = rouge("clear fields lung", "lung fields clear")
    assert scores.r1 == 1.0
    assert scores.rl == pytest.approx(1 / 3)


def test_tokenize():
    assert tokenize("No pneumothorax; mild-cardiomegaly.") == [
        "no",
        "pneumothorax",
        "mild",
        "cardiomegaly",
    ]


def test_hallucinated_terms():
    generated = "Small pneumothorax and left effusion."
    assert hallucinated_terms(generated, "no active disease", FINDINGS) == [
        "effusion",
        "pneumothorax",
    ]
    assert hallucinated_terms(generated, generated, FINDINGS) == []


def test_hallucination_rate_is_mean_count():
    generated = ["pneumothorax and effusion", "clear", "nodule", "clear", "cardiomegaly"]
    references = ["no active disease", "clear", "no nodule seen", "", "clear"]
    # per-study counts 2, 0, 0, 0, 1
    assert hallucination_rate(generated, references, FINDINGS) == pytest.approx(0.6)
    assert hallucination_rate(generated[:2], references[:2], FINDINGS) == 1.0


def test_hallucination_rate_counts_two_zero_one_zero_one():
    generated = [
        "Pneumothorax with effusion.",
        "Clear lungs.",
        "Cardiomegaly.",
        "Stable nodule.",
        "Small effusion.",
    ]
    references = ["Clear.", "Clear.", "Clear.", "Nodule unchanged.", "No acute disease."]
    counts = [len(hallucinated_terms(g, r, FINDINGS)) for g, r in zip(generated, references)]
    assert counts == [2, 0, 1, 0, 1]
    assert hallucination_rate(generated, references, FINDINGS) == pytest.approx(0.8)


def test_hallucination_rate_errors():
    with pytest.raises(LengthMismatch):
        hallucination_rate(["a"], [], FINDINGS)
    with pytest.raises(EmptyBatch):
        hallucination_rate([], [], FINDINGS)


def test_agentic_metrics_constant_uncertainty():
    evidence = "Lung fields clear. Cardiac silhouette within normal limits."
    traces = [
        stepwise_trace(f"S{i}", response(0.70), response(0.70), response(0.70, evidence))
        for i in range(50)
    ]
    metrics = agentic_metrics(traces)
    first = metrics.steps[0]
    assert first.uncertainty.mean == pytest.approx(0.70)
    assert first.uncertainty.std == pytest.approx(0.0)
    assert metrics.steps[2].evidence_words.mean == 8.0
    assert metrics.evidence_words_delta == 5.0
    assert metrics.uncertainty_delta == pytest.approx(0.0)
    assert first.safety_presence == 1.0


def test_agentic_metrics_excludes_unparseable():
    traces = [stepwise_trace(f"S{i}", response(0.7), response(0.7), response(0.6)) for i in range(40)]
    traces += [stepwise_trace(f"U{i}", response(0.7), response(0.7), None) for i in range(10)]
    metrics = agentic_metrics(traces)
    last = metrics.steps[2]
    assert last.parse_failure_count == 10
    assert last.uncertainty.n == 40
    assert last.uncertainty.mean == pytest.approx(0.6)
    assert metrics.parse_failure_count == 10
    assert metrics.per_trace_uncertainty_delta.n == 40
    assert metrics.uncertainty_delta == pytest.approx(-0.1)


def test_agentic_metrics_errors():
    with pytest.raises(EmptyBatch):
        agentic_metrics([])
    single = ReasoningTrace(
        study_id="a",
        mode=ReasoningMode.SINGLE_SHOT,
        steps=(TraceStep(step_index=0, response=response(0.5), raw_text=""),),
    )
    stepwise = stepwise_trace("b", response(0.5), response(0.5), response(0.5))
    with pytest.raises(InconsistentTraces):
        agentic_metrics([single, stepwise])


def test_step_table_columns():
    traces = [stepwise_trace("a", response(0.8), response(0.7), response(0.6))]
    table = step_table(agentic_metrics(traces))
    assert list(table["step"]) == [0, 1, 2]
    assert list(table["uncertainty_mean"]) == pytest.approx([0.8, 0.7, 0.6])


def test_quality_row(worked_example):
    final = StructuredResponse(**worked_example)
    traces = [stepwise_trace("a", final, final, final), stepwise_trace("b", final, final, final)]
    references = {"a": worked_example["impression"] + "\n" + worked_example["evidence"]}
    row = quality_row(
        "stepwise",
        traces,
        references,
        load_vocabulary(),
        similarity_scorer=lambda c, r: 1.0 if c == r else 0.0,
    )
    assert row.n == 2
    assert row.rouge1 == pytest.approx(0.5)
    assert row.similarity == pytest.approx(0.5)
    assert row.phi_rate == 0.0
    # "lung fields", "cardiac silhouette" and friends are novel against the empty reference
    assert row.hallucination_rate > 0.0
    table = metrics_table([row])
    assert table.loc[0, "label"] == "stepwise"


def test_quality_row_leaves_out_unparseable_finals(worked_example):
    final = StructuredResponse(**worked_example)
    references = {"a": "Lung fields clear.", "b": "Lung fields clear."}
    parsed_only = quality_row(
        "stepwise", [stepwise_trace("a", final, final, final)], references, load_vocabulary()
    )
    with_failure = quality_row(
        "stepwise",
        [stepwise_trace("a", final, final, final), stepwise_trace("b", final, final, None)],
        references,
        load_vocabulary(),
    )
    assert with_failure.n == 1
    assert with_failure.parse_failures == 1
    assert parsed_only.parse_failures == 0
    assert with_failure.rouge1 == pytest.approx(parsed_only.rouge1)
    assert with_failure.hallucination_rate == pytest.approx(parsed_only.hallucination_rate)
    assert with_failure.uncertainty_marker_rate == pytest.approx(
        parsed_only.uncertainty_marker_rate
    )


def test_quality_row_needs_one_parsed_final(worked_example):
    final = StructuredResponse(**worked_example)
    with pytest.raises(EmptyBatch):
        quality_row(
            "stepwise", [stepwise_trace("a", final, final, None)], {}, load_vocabulary()
        )
