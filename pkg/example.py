#!/usr/bin/env python3
"""
Example usage of CXRAgent through the Python API.
Builds a small synthetic dataset, extracts feature cards, reasons over them
against the local mock endpoint, and verifies the answers.
"""

import tempfile

from cxr_agent import (
    PipelineConfig,
    ReasoningAgent,
    extract_features,
    load_vocabulary,
    verify,
)
from cxr_agent.config import EndpointConfig, ReasoningMode
from cxr_agent.exceptions import StudyFailure
from cxr_agent.ingest import load_openi
from cxr_agent.mock_server import mock_endpoint
from cxr_agent.synthetic import stepwise_script, write_openi_fixture


def build_records(root: str, config: PipelineConfig):
    """Synthetic studies and their feature records."""
    dataset = write_openi_fixture(root, n=6, seed=config.seed)
    vocab = load_vocabulary()
    studies = load_openi(dataset.root)
    return [(s, extract_features(s, config, vocab, dataset.tensor_dir)) for s in studies]


def demonstrate_feature_cards(records):
    print("=== Feature Card ===")
    study, record = records[0]
    print(f"Study {study.id}, label {study.label('label')}")
    print(record.card)
    print()


def demonstrate_reasoning(records, base_url: str):
    print("=== Stepwise Reasoning ===")
    config = PipelineConfig(
        mode=ReasoningMode.STEPWISE,
        endpoint=EndpointConfig(base_url=base_url, max_retries=0),
    )
    agent = ReasoningAgent(config, api_key="")
    results = agent.run_batch([(s, r.feature_card()) for s, r in records])
    for trace in results:
        if isinstance(trace, StudyFailure):
            print(f"❌ {trace}")
            continue
        report = verify(trace.final.response)
        uncertainties = [
            f"{step.response.uncertainty:.2f}" if step.response else "-" for step in trace.steps
        ]
        status = "✅" if report.passed else "⚠️"
        print(f"{status} {trace.study_id}: uncertainty {' -> '.join(uncertainties)}")
    print()


def main():
    """Run every demonstration against a local mock endpoint."""
    print("🩻 CXRAgent Examples")
    print("=" * 50)
    config = PipelineConfig()
    with tempfile.TemporaryDirectory() as root:
        records = build_records(root, config)
        demonstrate_feature_cards(records)
        with mock_endpoint(stepwise_script()) as server:
            demonstrate_reasoning(records, server.base_url)

    print("🎉 Examples completed!")
    print("\nNext steps:")
    print("1. Run 'cxr-agent create-config' and point endpoint.base_url at a served model")
    print("2. Run 'cxr-agent --out runs extract <dataset>' on a real manifest")
    print("3. Run 'cxr-agent --out runs reason runs/features.jsonl --mode stepwise'")


if __name__ == "__main__":
    main()
