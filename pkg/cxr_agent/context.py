"""
Vocabulary-grounded semantic anchors and feature-card serialization.
"""

import logging
import re
from functools import lru_cache
from importlib import resources
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, field_validator

from .exceptions import EmptyCard, EmptyVocabulary, VocabularyIOError
from .radiomics import RadiomicFeatures
from .xai import ActivationSummary

logger = logging.getLogger(__name__)

SECTION_RADIOMICS = "RADIOMICS"
SECTION_XAI = "XAI"
SECTION_VOCAB = "VOCAB"
SECTION_ORDER: Tuple[str, ...] = (SECTION_RADIOMICS, SECTION_XAI, SECTION_VOCAB)

# letters and digits delimit words
_WORD_CHAR = r"[^\W_]"


def canonical_term(term: str) -> str:
    return " ".join(term.strip().lower().split())


class Vocabulary(BaseModel):
    """Curated set of lowercase radiology terms."""

    model_config = ConfigDict(frozen=True)

    terms: FrozenSet[str]

    @field_validator("terms", mode="before")
    @classmethod
    def _canonical(cls, v: Iterable[str]) -> FrozenSet[str]:
        terms = frozenset(canonical_term(t) for t in v)
        if not terms:
            raise ValueError("vocabulary must contain at least one term")
        if "" in terms:
            raise ValueError("vocabulary terms must be non-empty")
        return terms

    def sorted_terms(self) -> List[str]:
        return sorted(self.terms)

    def __len__(self) -> int:
        return len(self.terms)


class SemanticAnchors(BaseModel):
    """Vocabulary terms found in a report, in first-occurrence order."""

    model_config = ConfigDict(frozen=True)

    matched: Tuple[str, ...] = ()

    @field_validator("matched")
    @classmethod
    def _unique(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        if len(set(v)) != len(v):
            raise ValueError("anchors must be unique")
        return v


class FeatureCard(BaseModel):
    """Serialized bundle of the evidence channels embedded into prompts."""

    model_config = ConfigDict(frozen=True)

    radiomics: Optional[RadiomicFeatures] = None
    xai: Optional[ActivationSummary] = None
    anchors: Optional[SemanticAnchors] = None
    rendered: str

    def sections(self) -> Tuple[str, ...]:
        present = []
        if self.radiomics is not None:
            present.append(SECTION_RADIOMICS)
        if self.xai is not None:
            present.append(SECTION_XAI)
        if self.anchors is not None:
            present.append(SECTION_VOCAB)
        return tuple(present)

    def render(self, sections: Sequence[str]) -> str:
        """Render only the requested sections that are present ("" if none)."""
        wanted = set(sections)
        return _render(
            self.radiomics if SECTION_RADIOMICS in wanted else None,
            self.xai if SECTION_XAI in wanted else None,
            self.anchors if SECTION_VOCAB in wanted else None,
        )


def parse_vocabulary_lines(lines: Iterable[str]) -> Vocabulary:
    terms = set()
    for line in lines:
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        terms.add(canonical_term(text))
    if not terms:
        raise EmptyVocabulary("vocabulary contains no terms")
    return Vocabulary(terms=terms)


def load_vocabulary(path: Optional[str] = None) -> Vocabulary:
    """One term per line; blank lines and `#` comments skipped.

    With no path, the shipped default radiology vocabulary is loaded.
    """
    try:
        if path is None:
            text = (
                resources.files("cxr_agent")
                .joinpath("data/vocabulary.txt")
                .read_text(encoding="utf-8")
            )
        else:
            with open(path, "r", encoding="utf-8") as f:
                text = f.read()
    except (OSError, UnicodeDecodeError) as e:
        raise VocabularyIOError(f"cannot read vocabulary {path}: {e}") from e
    vocab = parse_vocabulary_lines(text.splitlines())
    logger.debug(f"Loaded {len(vocab)} vocabulary terms from {path or 'defaults'}")
    return vocab


@lru_cache(maxsize=4096)
def term_pattern(term: str) -> "re.Pattern[str]":
    """Whole-word pattern for a canonical term; words joined by single spaces."""
    body = " ".join(re.escape(word) for word in term.split(" "))
    return re.compile(rf"(?<!{_WORD_CHAR}){body}(?!{_WORD_CHAR})")


def find_terms(text: str, terms: Iterable[str]) -> List[Tuple[int, str]]:
    """(first position, term) for every term present in text, case-insensitive."""
    lowered = text.lower()
    found = []
    for term in terms:
        m = term_pattern(term).search(lowered)
        if m:
            found.append((m.start(), term))
    return found


def extract_anchors(report: str, vocab: Vocabulary) -> SemanticAnchors:
    """Vocabulary terms matched as whole words, ordered by first occurrence.

    Terms starting at the same position are ordered longest first.
    """
    if not report:
        return SemanticAnchors()
    found = find_terms(report, vocab.terms)
    found.sort(key=lambda item: (item[0], -len(item[1]), item[1]))
    return SemanticAnchors(matched=tuple(term for _, term in found))


def format_number(x: float) -> str:
    """Fixed 4-decimal rendering; negative zero prints as zero."""
    text = f"{x:.4f}"
    return "0.0000" if text == "-0.0000" else text


def _percentile_key(p: float) -> str:
    return f"p{p:g}"


def _render(
    rad: Optional[RadiomicFeatures],
    xai: Optional[ActivationSummary],
    voc: Optional[SemanticAnchors],
) -> str:
    blocks = []
    if rad is not None:
        lines = [f"[{SECTION_RADIOMICS}]"]
        rows = [
            ("mean", rad.mean),
            ("std", rad.std),
            ("variance", rad.variance),
            ("min", rad.min),
            ("max", rad.max),
            ("range", rad.range),
        ]
        rows += [(_percentile_key(p), rad.percentiles[p]) for p in sorted(rad.percentiles)]
        rows += [
            ("glcm_contrast", rad.glcm_contrast),
            ("glcm_homogeneity", rad.glcm_homogeneity),
            ("lbp_entropy", rad.lbp_entropy()),
        ]
        lines += [f"{key}: {format_number(value)}" for key, value in rows]
        blocks.append("\n".join(lines))
    if xai is not None:
        lines = [f"[{SECTION_XAI}]"]
        rows = [
            ("activation_mean", xai.mean),
            ("activation_max", xai.max),
            ("activation_entropy", xai.entropy),
            ("top_mass", xai.top_mass),
        ]
        lines += [f"{key}: {format_number(value)}" for key, value in rows]
        if xai.degenerate:
            lines.append("note: constant activation map")
        blocks.append("\n".join(lines))
    if voc is not None:
        lines = [f"[{SECTION_VOCAB}]"]
        lines += [f"- {term}" for term in voc.matched] or ["- (none)"]
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks)


def serialize_card(
    rad: Optional[RadiomicFeatures] = None,
    xai: Optional[ActivationSummary] = None,
    voc: Optional[SemanticAnchors] = None,
) -> FeatureCard:
    """Fixed-order plain-text card; absent sections are omitted entirely."""
    if rad is None and xai is None and voc is None:
        raise EmptyCard("a feature card needs at least one section")
    return FeatureCard(radiomics=rad, xai=xai, anchors=voc, rendered=_render(rad, xai, voc))
