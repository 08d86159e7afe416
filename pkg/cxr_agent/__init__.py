"""
CXRAgent - Context-aligned chest X-ray reasoning with a frozen vision-language model.

This package extracts radiomic, Grad-CAM and vocabulary evidence from chest
radiographs, serializes it into feature cards that drive single-shot or
stepwise LangGraph reasoning, verifies responsible-AI constraints on the
structured answers, and evaluates the pipeline (feature ablation AUC,
hallucination rate, ROUGE, agentic uncertainty statistics).
"""

from .agent import ContextVariant, ReasoningAgent, ReasoningTrace, create_agent
from .config import ConfigManager, PipelineConfig, get_config_manager, reload_config
from .context import FeatureCard, extract_anchors, load_vocabulary, serialize_card
from .core import StructuredResponse, Study, validate_study
from .exceptions import CxrAgentError
from .parsing import parse_structured
from .radiomics import extract_radiomics
from .raiguard import verify
from .tools import FeatureRecord, extract_features
from .xai import gradcam_summary

__version__ = "0.1.0"
__author__ = "CXRAgent Contributors"
__license__ = "MIT"

__all__ = [
    "ConfigManager",
    "ContextVariant",
    "CxrAgentError",
    "FeatureCard",
    "FeatureRecord",
    "PipelineConfig",
    "ReasoningAgent",
    "ReasoningTrace",
    "StructuredResponse",
    "Study",
    "create_agent",
    "extract_anchors",
    "extract_features",
    "extract_radiomics",
    "get_config_manager",
    "gradcam_summary",
    "load_vocabulary",
    "parse_structured",
    "reload_config",
    "serialize_card",
    "validate_study",
    "verify",
]
