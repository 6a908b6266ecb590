"""Shared fixtures: the bundled chart corpus and a fully offline engine."""

from __future__ import annotations

import pytest

from triageflow import (
    ArgmaxSelector,
    ConversationEngine,
    HashEmbedder,
    RuleBasedClassifier,
    build_index,
    load_library,
)
from triageflow.fixtures import fixture_charts_dir


class TickingClock:
    """Deterministic clock: strictly increasing fake timestamps."""

    def __init__(self) -> None:
        self.count = 0

    def __call__(self) -> str:
        self.count += 1
        return f"2024-01-01T00:00:{self.count:02d}+00:00"


@pytest.fixture(scope="session")
def charts_dir():
    return fixture_charts_dir()


@pytest.fixture(scope="session")
def library(charts_dir):
    lib, report = load_library(charts_dir)
    assert report.ok, [i.problems for i in report.excluded]
    return lib


@pytest.fixture(scope="session")
def embedder():
    return HashEmbedder()


@pytest.fixture(scope="session")
def index(library, embedder):
    return build_index(library, embedder)


@pytest.fixture()
def engine(library, index, embedder):
    return ConversationEngine(
        library=library,
        index=index,
        embedder=embedder,
        selector=ArgmaxSelector(),
        classifier=RuleBasedClassifier(),
        clock=TickingClock(),
    )
