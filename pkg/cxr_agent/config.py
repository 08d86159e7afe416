"""
Configuration management for CXRAgent.
Handles loading and validation of config.toml (or JSON) files.
"""

import json
import logging
import os
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import toml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .exceptions import ConfigError

logger = logging.getLogger(__name__)

API_KEY_ENV = "CXR_AGENT_API_KEY"
BASE_URL_ENV = "CXR_AGENT_BASE_URL"
PLACEHOLDER_BASE_URLS = ("", "your_endpoint_url_here")


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ReasoningMode(str, Enum):
    SINGLE_SHOT = "single_shot"
    STEPWISE = "stepwise"


class GlcmConfig(_Section):
    """Gray-level co-occurrence matrix parameters."""

    distance: int = Field(default=1, ge=1)
    angles: Tuple[int, ...] = (0, 45, 90, 135)
    levels: int = Field(default=16, ge=2, le=256)
    symmetric: bool = True

    @field_validator("angles")
    @classmethod
    def _known_angles(cls, v: Tuple[int, ...]) -> Tuple[int, ...]:
        if not v:
            raise ValueError("at least one GLCM angle is required")
        bad = [a for a in v if a not in (0, 45, 90, 135)]
        if bad:
            raise ValueError(f"GLCM angles must be 0, 45, 90 or 135, got {bad}")
        return v


class LbpConfig(_Section):
    """Local binary pattern parameters (classic square 8-neighbourhood)."""

    neighbors: int = 8
    radius: int = Field(default=1, ge=1)
    histogram_bins: int = 256

    @field_validator("neighbors")
    @classmethod
    def _eight_neighbors(cls, v: int) -> int:
        if v != 8:
            raise ValueError("only the 8-neighbour LBP is supported")
        return v

    @field_validator("histogram_bins")
    @classmethod
    def _full_code_range(cls, v: int) -> int:
        if v != 256:
            raise ValueError("histogram_bins must cover all 256 LBP codes")
        return v


class EndpointConfig(_Section):
    """Chat-completion endpoint access. Temperature 0 keeps runs reproducible."""

    base_url: str = "http://127.0.0.1:8765/v1"
    model_name: str = "Qwen/Qwen2-VL-2B-Instruct"
    timeout: float = Field(default=60.0, gt=0)
    max_retries: int = Field(default=2, ge=0, le=10)
    temperature: float = Field(default=0.0, ge=0.0)
    max_output_tokens: int = Field(default=512, gt=0)
    api_key_env: str = API_KEY_ENV
    backoff_s: float = Field(default=0.5, ge=0.0)
    attach_images: bool = True


class TrainConfig(_Section):
    """Logistic-regression ablation training parameters."""

    learning_rate: float = Field(default=0.1, gt=0)
    l2_lambda: float = Field(default=1e-3, ge=0)
    epochs: int = Field(default=500, ge=1)
    test_fraction: float = Field(default=0.2, gt=0, lt=1)
    seed: int = 0


class PackConfig(_Section):
    """Override paths for responsible-AI heuristic packs; None uses the defaults."""

    definitive_phrases: Optional[str] = None
    phi_patterns: Optional[str] = None
    hedging_lexicon: Optional[str] = None
    unsafe_terms: Optional[str] = None


class LoggingConfig(_Section):
    level: str = "INFO"
    file: str = ""
    format: str = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"


class PipelineConfig(_Section):
    """Every free parameter of the pipeline in one validated record."""

    glcm: GlcmConfig = GlcmConfig()
    lbp: LbpConfig = LbpConfig()
    percentiles: Tuple[float, ...] = (10.0, 25.0, 50.0, 75.0, 90.0)
    top_mass_fraction: float = Field(default=0.10, gt=0, le=1)
    vocabulary_path: Optional[str] = None
    endpoint: EndpointConfig = EndpointConfig()
    mode: ReasoningMode = ReasoningMode.SINGLE_SHOT
    seed: int = Field(default=0, ge=0, lt=2**64)
    concurrency: int = Field(default=4, ge=1)
    strict_parsing: bool = False
    training: TrainConfig = TrainConfig()
    packs: PackConfig = PackConfig()
    logging: LoggingConfig = LoggingConfig()

    @field_validator("percentiles")
    @classmethod
    def _increasing_percentiles(cls, v: Tuple[float, ...]) -> Tuple[float, ...]:
        if not v:
            raise ValueError("at least one percentile is required")
        if any(not (0.0 < p < 100.0) for p in v):
            raise ValueError("percentiles must lie in (0, 100)")
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("percentiles must be strictly increasing")
        return v

    def train_config(self) -> TrainConfig:
        """Training parameters with the pipeline seed applied."""
        return self.training.model_copy(update={"seed": self.seed})

    def with_seed(self, seed: Optional[int]) -> "PipelineConfig":
        if seed is None:
            return self
        return self.model_copy(update={"seed": seed})


class ConfigManager:
    """Manages configuration loading and validation for CXRAgent."""

    def __init__(self, config_path: Optional[str] = None):
        """Initialize the configuration manager.

        Args:
            config_path: Path to a config.toml or .json file. If None, searches
                for config files and falls back to defaults.
        """
        self.config_path = config_path or self._find_config_file()
        raw = self._load_config()
        self._apply_env_fallbacks(raw)
        self.config = self._validate_config(raw)

    def _find_config_file(self) -> Optional[str]:
        """Find the configuration file in common locations."""
        search_paths = [
            os.path.join(os.getcwd(), "config.toml"),
            os.path.join(os.path.expanduser("~"), ".cxr_agent", "config.toml"),
            os.path.join(Path(__file__).parent.parent, "config.toml"),
        ]

        for path in search_paths:
            if os.path.exists(path):
                return path

        return None

    def _load_config(self) -> Dict[str, Any]:
        """Load raw configuration from a TOML or JSON file."""
        if not self.config_path:
            return {}

        try:
            with open(self.config_path, "r", encoding="utf-8") as f:
                if self.config_path.endswith(".json"):
                    config = json.load(f)
                else:
                    config = toml.load(f)
        except (OSError, ValueError, toml.TomlDecodeError) as e:
            raise ConfigError(f"Failed to load config from {self.config_path}: {e}")
        if not isinstance(config, dict):
            raise ConfigError(f"Config root in {self.config_path} must be a table")
        return config

    def _apply_env_fallbacks(self, raw: Dict[str, Any]) -> None:
        """Use CXR_AGENT_BASE_URL when the configured base_url is a placeholder."""
        endpoint = raw.setdefault("endpoint", {})
        if not isinstance(endpoint, dict):
            return
        if endpoint.get("base_url", "") in PLACEHOLDER_BASE_URLS:
            env_url = os.getenv(BASE_URL_ENV, "")
            if env_url:
                endpoint["base_url"] = env_url
                logger.info(f"Using {BASE_URL_ENV} environment variable for endpoint")
            elif "base_url" in endpoint:
                del endpoint["base_url"]

    def _validate_config(self, raw: Dict[str, Any]) -> PipelineConfig:
        """Validate the loaded configuration; unknown keys are rejected."""
        try:
            return PipelineConfig.model_validate(raw)
        except ValidationError as e:
            source = self.config_path or "defaults"
            raise ConfigError(f"Invalid configuration in {source}: {e}") from e

    def get_pipeline_config(self, seed: Optional[int] = None) -> PipelineConfig:
        """Get the pipeline configuration, optionally overriding the seed."""
        return self.config.with_seed(seed)

    def get_endpoint_config(self) -> EndpointConfig:
        return self.config.endpoint

    def get_logging_config(self) -> LoggingConfig:
        return self.config.logging

    def get_api_key(self) -> str:
        """Bearer token from the environment; empty when unset."""
        return os.getenv(self.config.endpoint.api_key_env, "")

    def describe(self) -> List[Tuple[str, str]]:
        """Key settings as (name, value) rows for display."""
        cfg = self.config
        return [
            ("Config File", self.config_path or "defaults"),
            ("Mode", cfg.mode.value),
            ("Seed", str(cfg.seed)),
            ("Endpoint", cfg.endpoint.base_url),
            ("Model", cfg.endpoint.model_name),
            ("Temperature", str(cfg.endpoint.temperature)),
            ("Concurrency", str(cfg.concurrency)),
            ("Vocabulary", cfg.vocabulary_path or "built-in"),
        ]

    @staticmethod
    def create_sample_config(path: str) -> None:
        """Create a sample configuration file.

        Args:
            path: Path where to create the config file
        """
        sample = PipelineConfig().model_dump(mode="json", exclude_none=True)
        sample["endpoint"]["base_url"] = "your_endpoint_url_here"

        with open(path, "w", encoding="utf-8") as f:
            toml.dump(sample, f)


# Global configuration instance
_config_manager: Optional[ConfigManager] = None


def get_config_manager(config_path: Optional[str] = None) -> ConfigManager:
    """Get the global configuration manager instance."""
    global _config_manager
    if _config_manager is None or config_path is not None:
        _config_manager = ConfigManager(config_path)
    return _config_manager


def reload_config(config_path: Optional[str] = None) -> ConfigManager:
    """Reload the configuration from file."""
    global _config_manager
    _config_manager = ConfigManager(config_path)
    return _config_manager
