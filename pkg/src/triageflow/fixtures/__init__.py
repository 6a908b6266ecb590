"""Bundled example flowcharts, usable as a demo corpus and as test data."""

from __future__ import annotations

from pathlib import Path


def fixture_charts_dir() -> Path:
    """Directory holding the bundled flowchart documents."""
    return Path(__file__).resolve().parent / "charts"
