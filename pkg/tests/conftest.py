"""
Shared fixtures for the CXRAgent test suite.
"""

import numpy as np
import pytest

from cxr_agent.config import EndpointConfig, PipelineConfig
from cxr_agent.core import GrayImage, Study
from cxr_agent.mock_server import MockServer, load_script
from cxr_agent.synthetic import WORKED_EXAMPLE_RESPONSE


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def pipeline_config():
    return PipelineConfig()


@pytest.fixture
def worked_example():
    return dict(WORKED_EXAMPLE_RESPONSE)


@pytest.fixture
def study(rng):
    """A small valid two-view study."""
    frontal = GrayImage.from_array(rng.integers(0, 256, size=(12, 12)))
    lateral = GrayImage.from_array(rng.integers(0, 256, size=(10, 12)))
    return Study(
        id="S0001",
        frontal_image=frontal,
        lateral_image=lateral,
        report="Mild cardiomegaly. No pneumothorax.",
        labels={"label": 1},
    )


@pytest.fixture
def serve():
    """Start mock endpoints from script dicts; all are stopped at teardown."""
    servers = []

    def start(script):
        server = MockServer(load_script(script)).start()
        servers.append(server)
        return server

    yield start
    for server in servers:
        server.stop()


def endpoint_for(base_url: str, **overrides) -> EndpointConfig:
    """Endpoint settings suited to local tests: short timeout, no backoff."""
    settings = dict(base_url=base_url, timeout=5.0, max_retries=1, backoff_s=0.0)
    settings.update(overrides)
    return EndpointConfig(**settings)
