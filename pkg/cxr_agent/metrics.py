"""
Evaluation metrics: ROC AUC, ROUGE, keyword hallucination rate, and the
agentic uncertainty/evidence statistics over reasoning traces.
"""

import logging
import re
from collections import Counter
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict

from .agent import ReasoningTrace
from .context import Vocabulary, find_terms
from .core import StructuredResponse, word_count
from .exceptions import EmptyBatch, InconsistentTraces, LabelError, LengthMismatch, SingleClass
from .raiguard import HeuristicPacks, batch_rai_report, field_present, verify

logger = logging.getLogger(__name__)

SimilarityScorer = Callable[[str, str], float]

_PUNCT = re.compile(r"[^\w\s]")


# AUC -------------------------------------------------------------------------


def _binary_labels(labels: Sequence[int], n: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.shape != (n,):
        raise LengthMismatch(f"{n} scores but {y.size} labels")
    if not np.all(np.isin(y, (0, 1))):
        raise LabelError("labels must be 0 or 1")
    return y.astype(np.int64)


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Area under the ROC curve via the Mann-Whitney rank statistic.

    Tied scores share their average rank, so each tied positive/negative
    pair contributes one half.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    y = _binary_labels(labels, s.size)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both positive and negative labels")
    ranks = pd.Series(s).rank(method="average").to_numpy()
    u = ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


# ROUGE -----------------------------------------------------------------------


class RougeScores(BaseModel):
    model_config = ConfigDict(frozen=True)

    r1: float
    r2: float
    rl: float


def tokenize(text: str) -> List[str]:
    """Lowercase, drop punctuation, split on whitespace."""
    return _PUNCT.sub(" ", (text or "").lower()).split()


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def _f1(overlap: float, cand_total: int, ref_total: int) -> float:
    if overlap == 0 or cand_total == 0 or ref_total == 0:
        return 0.0
    precision = overlap / cand_total
    recall = overlap / ref_total
    return 2 * precision * recall / (precision + recall)


def _lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b, start=1):
            cur[j] = prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1])
        prev = cur
    return prev[-1]


def rouge_n(cand: Sequence[str], ref: Sequence[str], n: int) -> float:
    c, r = _ngrams(cand, n), _ngrams(ref, n)
    overlap = sum((c & r).values())
    return _f1(overlap, sum(c.values()), sum(r.values()))


def rouge(candidate: str, reference: str) -> RougeScores:
    """ROUGE-1, ROUGE-2 and ROUGE-L F1 between two texts."""
    cand, ref = tokenize(candidate), tokenize(reference)
    return RougeScores(
        r1=rouge_n(cand, ref, 1),
        r2=rouge_n(cand, ref, 2),
        rl=_f1(_lcs_length(cand, ref), len(cand), len(ref)),
    )


# Hallucination ---------------------------------------------------------------


def generated_text(resp: Optional[StructuredResponse]) -> str:
    """Impression and evidence: the text checked for hallucinated keywords."""
    if resp is None:
        return ""
    return f"{resp.impression}\n{resp.evidence}"


def hallucinated_terms(generated: str, reference: str, vocab: Vocabulary) -> List[str]:
    """Vocabulary terms present in generated text but absent from the reference."""
    in_generated = {term for _, term in find_terms(generated or "", vocab.terms)}
    if not in_generated:
        return []
    in_reference = {term for _, term in find_terms(reference or "", in_generated)}
    return sorted(in_generated - in_reference)


def hallucination_rate(
    responses: Sequence[str], references: Sequence[str], keyword_vocab: Vocabulary
) -> float:
    """Mean count of hallucinated vocabulary keywords per study."""
    if len(responses) != len(references):
        raise LengthMismatch(
            f"{len(responses)} responses but {len(references)} references"
        )
    if not responses:
        raise EmptyBatch("hallucination rate over zero studies")
    counts = [
        len(hallucinated_terms(g, r, keyword_vocab)) for g, r in zip(responses, references)
    ]
    return float(np.mean(counts))


# Agentic metrics -------------------------------------------------------------


class MeanStd(BaseModel):
    model_config = ConfigDict(frozen=True)

    mean: Optional[float] = None
    std: Optional[float] = None
    n: int = 0

    @classmethod
    def of(cls, values: Sequence[float]) -> "MeanStd":
        if not values:
            return cls()
        arr = np.asarray(values, dtype=np.float64)
        return cls(mean=float(arr.mean()), std=float(arr.std()), n=int(arr.size))


class StepStats(BaseModel):
    """Statistics for one step index across a batch of traces."""

    model_config = ConfigDict(frozen=True)

    step_index: int
    n: int
    parse_failure_count: int
    uncertainty: MeanStd
    evidence_words: MeanStd
    limitation_presence: Optional[float] = None
    safety_presence: Optional[float] = None


class AgenticMetrics(BaseModel):
    """Per-step statistics plus first-to-last deltas."""

    model_config = ConfigDict(frozen=True)

    n_traces: int
    steps: Tuple[StepStats, ...]
    uncertainty_delta: Optional[float] = None
    evidence_words_delta: Optional[float] = None
    limitation_presence_delta: Optional[float] = None
    safety_presence_delta: Optional[float] = None
    per_trace_uncertainty_delta: MeanStd
    per_trace_evidence_delta: MeanStd
    parse_failure_count: int


def _diff(a: Optional[float], b: Optional[float]) -> Optional[float]:
    if a is None or b is None:
        return None
    return b - a


def _step_stats(index: int, responses: List[Optional[StructuredResponse]]) -> StepStats:
    parsed = [r for r in responses if r is not None]
    return StepStats(
        step_index=index,
        n=len(responses),
        parse_failure_count=len(responses) - len(parsed),
        uncertainty=MeanStd.of([r.uncertainty for r in parsed]),
        evidence_words=MeanStd.of([float(word_count(r.evidence)) for r in parsed]),
        limitation_presence=(
            float(np.mean([field_present(r.limitations) for r in parsed])) if parsed else None
        ),
        safety_presence=(
            float(np.mean([field_present(r.safety_note) for r in parsed])) if parsed else None
        ),
    )


def agentic_metrics(traces: Sequence[ReasoningTrace]) -> AgenticMetrics:
    """Uncertainty and evidence statistics per step (population std).

    Unparseable steps are excluded from means and counted. Presence rates
    are shares of parsed responses.
    """
    if not traces:
        raise EmptyBatch("agentic metrics over zero traces")
    structure = tuple(s.step_index for s in traces[0].steps)
    for t in traces:
        if tuple(s.step_index for s in t.steps) != structure:
            raise InconsistentTraces(
                f"trace {t.study_id} does not share the step structure {structure}"
            )

    steps = tuple(
        _step_stats(pos_index, [t.steps[pos].response for t in traces])
        for pos, pos_index in enumerate(structure)
    )
    first, last = steps[0], steps[-1]
    unc_deltas = [t.uncertainty_delta for t in traces if t.uncertainty_delta is not None]
    ev_deltas = [
        float(t.evidence_length_delta)
        for t in traces
        if t.evidence_length_delta is not None
    ]
    return AgenticMetrics(
        n_traces=len(traces),
        steps=steps,
        uncertainty_delta=_diff(first.uncertainty.mean, last.uncertainty.mean),
        evidence_words_delta=_diff(first.evidence_words.mean, last.evidence_words.mean),
        limitation_presence_delta=_diff(first.limitation_presence, last.limitation_presence),
        safety_presence_delta=_diff(first.safety_presence, last.safety_presence),
        per_trace_uncertainty_delta=MeanStd.of(unc_deltas),
        per_trace_evidence_delta=MeanStd.of(ev_deltas),
        parse_failure_count=sum(s.parse_failure_count for s in steps),
    )


# Report quality rows ---------------------------------------------------------


class QualityRow(BaseModel):
    """Generation quality and responsible-AI indicators for one trace set.

    `n` counts the scored traces; traces whose final step did not parse are
    reported in `parse_failures` and left out of every rate.
    """

    model_config = ConfigDict(frozen=True)

    label: str
    n: int
    parse_failures: int = 0
    rouge1: float
    rouge2: float
    rougeL: float
    similarity: Optional[float] = None
    phi_rate: float
    unsafe_rate: float
    uncertainty_marker_rate: float
    hallucination_rate: float


def quality_row(
    label: str,
    traces: Sequence[ReasoningTrace],
    references: Mapping[str, str],
    vocab: Vocabulary,
    packs: Optional[HeuristicPacks] = None,
    similarity_scorer: Optional[SimilarityScorer] = None,
) -> QualityRow:
    """Score the final response of every parsed trace against its reference report.

    Args:
        label: Row name, usually the context variant.
        traces: Reasoning traces; the last step is scored.
        references: study_id to reference report text.
        vocab: Keyword vocabulary for the hallucination rate.
        packs: Heuristic packs for the verifier.
        similarity_scorer: Optional callable(candidate, reference) -> float
            averaged into the `similarity` column.

    Raises:
        EmptyBatch: no trace has a parsed final response.
    """
    if not traces:
        raise EmptyBatch(f"no traces for {label}")
    scored = [t for t in traces if t.final.parsed]
    failures = len(traces) - len(scored)
    if failures:
        logger.warning(f"{failures} traces in {label} have an unparseable final response")
    if not scored:
        raise EmptyBatch(f"no parsed final responses for {label}")

    candidates = [generated_text(t.final.response) for t in scored]
    refs = [references.get(t.study_id, "") for t in scored]
    missing = sum(1 for t in scored if t.study_id not in references)
    if missing:
        logger.warning(f"{missing} traces in {label} have no reference report")

    scores = [rouge(c, r) for c, r in zip(candidates, refs)]
    rai = batch_rai_report([verify(t.final.response, packs) for t in scored])
    similarity = None
    if similarity_scorer is not None:
        similarity = float(np.mean([similarity_scorer(c, r) for c, r in zip(candidates, refs)]))

    return QualityRow(
        label=label,
        n=len(scored),
        parse_failures=failures,
        rouge1=float(np.mean([s.r1 for s in scores])),
        rouge2=float(np.mean([s.r2 for s in scores])),
        rougeL=float(np.mean([s.rl for s in scores])),
        similarity=similarity,
        phi_rate=rai.phi_rate,
        unsafe_rate=rai.unsafe_rate,
        uncertainty_marker_rate=rai.uncertainty_marker_rate,
        hallucination_rate=hallucination_rate(candidates, refs, vocab),
    )


def metrics_table(rows: Sequence[BaseModel]) -> pd.DataFrame:
    """Rows of flat records as a DataFrame for text or JSON rendering."""
    return pd.DataFrame([r.model_dump() for r in rows])


def step_table(metrics: AgenticMetrics) -> pd.DataFrame:
    """Per-step statistics as a flat table with mean/std columns."""
    records: List[Dict[str, object]] = []
    for s in metrics.steps:
        records.append(
            {
                "step": s.step_index,
                "n": s.n,
                "parse_failures": s.parse_failure_count,
                "uncertainty_mean": s.uncertainty.mean,
                "uncertainty_std": s.uncertainty.std,
                "evidence_words_mean": s.evidence_words.mean,
                "evidence_words_std": s.evidence_words.std,
                "limitation_presence": s.limitation_presence,
                "safety_presence": s.safety_presence,
            }
        )
    return pd.DataFrame(records)
