from __future__ import annotations

from pathlib import Path

import pytest

from dynabatch.datamodel import Sample
from dynabatch.ingest import DEFAULT_SYNTH_SPEC, generate, write_manifest


@pytest.fixture(scope="session")
def default_manifest(tmp_path_factory) -> Path:
    """The documented default synthetic population, written once per session."""
    path = tmp_path_factory.mktemp("data") / "default-100k.jsonl"
    write_manifest(generate(DEFAULT_SYNTH_SPEC), path)
    return path


@pytest.fixture(scope="session")
def default_samples(default_manifest) -> list[Sample]:
    from dynabatch.ingest import read_manifest

    return list(read_manifest(default_manifest))


def make_samples(pairs, prefix="s") -> list[Sample]:
    """Quick Sample list from (duration, tokens) pairs."""
    return [
        Sample(id=f"{prefix}{i}", input_len=float(d), output_len=int(t))
        for i, (d, t) in enumerate(pairs)
    ]
