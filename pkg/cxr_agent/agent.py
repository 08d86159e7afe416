"""
Tool-augmented reasoning over a frozen vision-language model using LangGraph.

Two workflows are compiled: single-shot (the full feature card in one call)
and stepwise agentic reasoning (baseline, then radiomic context, then the
full card). Each step is an independent, stateless chat call.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from enum import Enum
from typing import Dict, List, Optional, Sequence, Tuple, TypedDict, Union

from langgraph.graph import END, StateGraph
from pydantic import BaseModel, ConfigDict, Field, computed_field, model_validator

from .client import ChatClient, ChatRequest
from .config import PipelineConfig, ReasoningMode, get_config_manager
from .context import (
    SECTION_ORDER,
    SECTION_RADIOMICS,
    SECTION_XAI,
    FeatureCard,
)
from .core import StructuredResponse, Study, word_count
from .exceptions import (
    CxrAgentError,
    EndpointUnreachable,
    MissingContext,
    StudyFailure,
)
from .parsing import parse_structured, try_parse

logger = logging.getLogger(__name__)

SYSTEM_TEXT = """You are a cautious radiology assistant reviewing chest X-ray studies for research purposes.

Follow these rules in every answer:
(i) Avoid definitive diagnosis claims; describe findings with appropriately hedged language.
(ii) State the limitations of your assessment.
(iii) Include a safety disclaimer: the output is for research use only and is not a substitute for expert interpretation.

Respond with one JSON object and nothing else, using exactly these keys:
{"impression": string, "evidence": string, "uncertainty": number between 0 and 1, "limitations": string, "safety_note": string}"""

QUESTION = (
    "Review the chest radiograph(s) and the context below, then give your "
    "structured assessment."
)

# card sections visible at each stepwise reasoning step
STEP_SECTIONS: Dict[int, Tuple[str, ...]] = {
    0: (),
    1: (SECTION_RADIOMICS,),
    2: SECTION_ORDER,
}


class ContextVariant(str, Enum):
    """Single-call prompt ablations: which report text and card sections are sent."""

    A0_IMAGE_ONLY = "A0_image_only"
    A1_RADIOMICS = "A1_radiomics"
    A2_XAI = "A2_xai"
    A3_RAD_XAI = "A3_rad_xai"
    A4_IMAGE_TEXT = "A4_image_text"
    A5_IMAGE_TEXT_RAD_XAI = "A5_image_text_rad_xai"

    @property
    def includes_report(self) -> bool:
        return self in (ContextVariant.A4_IMAGE_TEXT, ContextVariant.A5_IMAGE_TEXT_RAD_XAI)

    @property
    def sections(self) -> Tuple[str, ...]:
        return {
            ContextVariant.A0_IMAGE_ONLY: (),
            ContextVariant.A1_RADIOMICS: (SECTION_RADIOMICS,),
            ContextVariant.A2_XAI: (SECTION_XAI,),
            ContextVariant.A3_RAD_XAI: (SECTION_RADIOMICS, SECTION_XAI),
            ContextVariant.A4_IMAGE_TEXT: (),
            ContextVariant.A5_IMAGE_TEXT_RAD_XAI: (SECTION_RADIOMICS, SECTION_XAI),
        }[self]


class TraceStep(BaseModel):
    """One model call: the parsed response, or None with the parse error."""

    model_config = ConfigDict(frozen=True)

    step_index: int = Field(ge=0, le=2)
    response: Optional[StructuredResponse] = None
    raw_text: str
    parse_error: Optional[str] = None

    @property
    def parsed(self) -> bool:
        return self.response is not None


class ReasoningTrace(BaseModel):
    """Per-study sequence of reasoning steps; deltas derive from the steps."""

    model_config = ConfigDict(frozen=True)

    study_id: str
    mode: ReasoningMode
    variant: Optional[ContextVariant] = None
    steps: Tuple[TraceStep, ...]

    @model_validator(mode="after")
    def _step_structure(self) -> "ReasoningTrace":
        indices = tuple(s.step_index for s in self.steps)
        if indices not in ((0,), (0, 1, 2)):
            raise ValueError(f"step indices must be (0,) or (0, 1, 2), got {indices}")
        return self

    @property
    def final(self) -> TraceStep:
        return self.steps[-1]

    @computed_field  # type: ignore[misc]
    @property
    def uncertainty_delta(self) -> Optional[float]:
        """Final minus baseline uncertainty; None if either step is unparseable."""
        first, last = self.steps[0].response, self.steps[-1].response
        if first is None or last is None:
            return None
        return last.uncertainty - first.uncertainty

    @computed_field  # type: ignore[misc]
    @property
    def evidence_length_delta(self) -> Optional[int]:
        """Final minus baseline evidence word count."""
        first, last = self.steps[0].response, self.steps[-1].response
        if first is None or last is None:
            return None
        return word_count(last.evidence) - word_count(first.evidence)


def _user_text(
    study: Study,
    rendered_card: str,
    include_report: bool,
    header: str,
) -> str:
    parts = [f"Study: {study.id}", header, f"Question: {QUESTION}"]
    if include_report:
        parts.append("Report:\n" + (study.report.strip() or "(no report provided)"))
    if rendered_card:
        parts.append("Feature card:\n" + rendered_card)
    return "\n\n".join(parts)


def build_prompt(study: Study, card: Optional[FeatureCard], step: int) -> ChatRequest:
    """Chat request for one reasoning step.

    Step 0 carries the report only, step 1 adds the radiomics section and
    step 2 the full card. Images go frontal first, then lateral.
    """
    if step not in STEP_SECTIONS:
        raise ValueError(f"step must be 0, 1 or 2, got {step}")
    rendered = card.render(STEP_SECTIONS[step]) if card is not None else ""
    return ChatRequest(
        system_text=SYSTEM_TEXT,
        user_text=_user_text(study, rendered, True, f"Reasoning step: {step}"),
        images=study.images(),
    )


def build_variant_prompt(
    study: Study, card: Optional[FeatureCard], variant: ContextVariant
) -> ChatRequest:
    """Single-call chat request restricted to one context variant."""
    rendered = card.render(variant.sections) if card is not None else ""
    return ChatRequest(
        system_text=SYSTEM_TEXT,
        user_text=_user_text(
            study, rendered, variant.includes_report, f"Context variant: {variant.value}"
        ),
        images=study.images(),
    )


class ReasoningState(TypedDict):
    """State carried through a reasoning workflow."""

    study: Study
    card: Optional[FeatureCard]
    variant: Optional[ContextVariant]
    steps: List[TraceStep]


class ReasoningAgent:
    """Drives the frozen model through single-shot or stepwise reasoning."""

    def __init__(self, config: PipelineConfig, api_key: Optional[str] = None):
        """Initialize the agent.

        Args:
            config: Pipeline configuration (endpoint, mode, seed, concurrency).
            api_key: Bearer token; defaults to the configured environment variable.
        """
        self.config = config
        self.api_key = api_key
        self._local = threading.local()
        self.graphs = {
            ReasoningMode.SINGLE_SHOT: self._build_graph(ReasoningMode.SINGLE_SHOT),
            ReasoningMode.STEPWISE: self._build_graph(ReasoningMode.STEPWISE),
        }
        self.variant_graph = self._build_variant_graph()
        logger.info(
            f"Decoding with temperature={config.endpoint.temperature} "
            f"seed={config.seed}; stepwise steps are stateless (no prior answer re-sent)"
        )

    @property
    def client(self) -> ChatClient:
        client = getattr(self._local, "client", None)
        if client is None:
            client = ChatClient(self.config.endpoint, api_key=self.api_key, seed=self.config.seed)
            self._local.client = client
        return client

    def _build_graph(self, mode: ReasoningMode):
        """Build the LangGraph workflow for one reasoning mode."""
        workflow = StateGraph(ReasoningState)

        if mode is ReasoningMode.SINGLE_SHOT:
            workflow.add_node("single_shot", self._single_shot_step)
            workflow.set_entry_point("single_shot")
            workflow.add_edge("single_shot", END)
        else:
            workflow.add_node("baseline", self._baseline_step)
            workflow.add_node("radiomics", self._radiomics_step)
            workflow.add_node("full_card", self._full_card_step)
            workflow.set_entry_point("baseline")
            workflow.add_edge("baseline", "radiomics")
            workflow.add_edge("radiomics", "full_card")
            workflow.add_edge("full_card", END)

        return workflow.compile()

    def _build_variant_graph(self):
        workflow = StateGraph(ReasoningState)
        workflow.add_node("variant", self._variant_step)
        workflow.set_entry_point("variant")
        workflow.add_edge("variant", END)
        return workflow.compile()

    def _call(self, state: ReasoningState, step_index: int, req: ChatRequest) -> Dict:
        study = state["study"]
        try:
            raw = self.client.complete(req)
            if self.config.strict_parsing:
                step = TraceStep(
                    step_index=step_index, response=parse_structured(raw), raw_text=raw
                )
            else:
                response, error = try_parse(raw)
                step = TraceStep(
                    step_index=step_index, response=response, raw_text=raw, parse_error=error
                )
        except StudyFailure:
            raise
        except Exception as e:
            raise StudyFailure(study.id, e, step_index) from e
        logger.debug(f"Study {study.id} step {step_index}: parsed={step.parsed}")
        return {"steps": state["steps"] + [step]}

    def _single_shot_step(self, state: ReasoningState) -> Dict:
        return self._call(state, 0, build_prompt(state["study"], state["card"], 2))

    def _baseline_step(self, state: ReasoningState) -> Dict:
        return self._call(state, 0, build_prompt(state["study"], state["card"], 0))

    def _radiomics_step(self, state: ReasoningState) -> Dict:
        return self._call(state, 1, build_prompt(state["study"], state["card"], 1))

    def _full_card_step(self, state: ReasoningState) -> Dict:
        return self._call(state, 2, build_prompt(state["study"], state["card"], 2))

    def _variant_step(self, state: ReasoningState) -> Dict:
        variant = state["variant"]
        assert variant is not None
        return self._call(state, 0, build_variant_prompt(state["study"], state["card"], variant))

    def _invoke(self, graph, study: Study, card, variant=None) -> List[TraceStep]:
        result = graph.invoke(
            {"study": study, "card": card, "variant": variant, "steps": []}
        )
        return result["steps"]

    def run_single_shot(self, study: Study, card: FeatureCard) -> ReasoningTrace:
        """One step-2-style call with every card section."""
        if card is None:
            raise StudyFailure(study.id, MissingContext("single-shot needs a feature card"))
        steps = self._invoke(self.graphs[ReasoningMode.SINGLE_SHOT], study, card)
        return ReasoningTrace(
            study_id=study.id, mode=ReasoningMode.SINGLE_SHOT, steps=tuple(steps)
        )

    def run_stepwise(self, study: Study, card: FeatureCard) -> ReasoningTrace:
        """Baseline, radiomic and full-card calls in sequence; step 2 is final."""
        if card is None or card.radiomics is None:
            raise StudyFailure(
                study.id, MissingContext("stepwise reasoning needs a card with radiomics")
            )
        steps = self._invoke(self.graphs[ReasoningMode.STEPWISE], study, card)
        return ReasoningTrace(
            study_id=study.id, mode=ReasoningMode.STEPWISE, steps=tuple(steps)
        )

    def run_variant(
        self, study: Study, card: Optional[FeatureCard], variant: ContextVariant
    ) -> ReasoningTrace:
        """One call under a context variant, tagged with the variant."""
        steps = self._invoke(self.variant_graph, study, card, variant)
        return ReasoningTrace(
            study_id=study.id,
            mode=ReasoningMode.SINGLE_SHOT,
            variant=variant,
            steps=tuple(steps),
        )

    def run(
        self,
        study: Study,
        card: Optional[FeatureCard],
        variant: Optional[ContextVariant] = None,
    ) -> ReasoningTrace:
        """Dispatch on variant, then on the configured mode."""
        if variant is not None:
            return self.run_variant(study, card, variant)
        if self.config.mode is ReasoningMode.STEPWISE:
            return self.run_stepwise(study, card)
        return self.run_single_shot(study, card)

    def run_batch(
        self,
        items: Sequence[Tuple[Study, Optional[FeatureCard]]],
        variant: Optional[ContextVariant] = None,
    ) -> List[Union[ReasoningTrace, StudyFailure]]:
        """Run studies with at most `concurrency` in flight; input order is kept.

        Once the endpoint proves unreachable, studies not yet started are
        failed without calling it.
        """
        unreachable = threading.Event()

        def work(item: Tuple[Study, Optional[FeatureCard]]):
            study, card = item
            if unreachable.is_set():
                return StudyFailure(
                    study.id, EndpointUnreachable("skipped: endpoint unreachable")
                )
            try:
                return self.run(study, card, variant)
            except StudyFailure as failure:
                if isinstance(failure.cause, EndpointUnreachable):
                    unreachable.set()
                logger.warning(str(failure))
                return failure
            except CxrAgentError as e:
                logger.warning(f"Study {study.id} failed: {e}")
                return StudyFailure(study.id, e)

        with ThreadPoolExecutor(max_workers=self.config.concurrency) as pool:
            return list(pool.map(work, items))


def run_single_shot(study: Study, card: FeatureCard, cfg: PipelineConfig) -> ReasoningTrace:
    return ReasoningAgent(cfg).run_single_shot(study, card)


def run_stepwise(study: Study, card: FeatureCard, cfg: PipelineConfig) -> ReasoningTrace:
    return ReasoningAgent(cfg).run_stepwise(study, card)


def create_agent(
    config_path: Optional[str] = None,
    mode: Optional[str] = None,
    seed: Optional[int] = None,
    api_key: Optional[str] = None,
) -> ReasoningAgent:
    """Create a reasoning agent using configuration-based setup.

    Args:
        config_path: Path to config.toml. If None, searches for config file.
        mode: "single_shot" or "stepwise". If None, uses the configured mode.
        seed: Overrides the configured seed.
        api_key: Bearer token; defaults to the configured environment variable.

    Returns:
        Configured ReasoningAgent instance

    Examples:
        # Use default configuration
        agent = create_agent()

        # Stepwise reasoning with a fixed seed
        agent = create_agent(mode="stepwise", seed=7)
    """
    manager = get_config_manager(config_path)
    config = manager.get_pipeline_config(seed)
    if mode is not None:
        config = config.model_copy(update={"mode": ReasoningMode(mode)})
    if api_key is None:
        api_key = manager.get_api_key()
    return ReasoningAgent(config, api_key=api_key)
