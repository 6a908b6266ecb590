"""Finding the right flowchart for an opening statement.

Two stages. First a similarity scan over embedded chart descriptions, then
a selection step that either trusts the top hit (offline stub) or asks the
provider to pick from the short list. The selection can decline with the
'no flowchart available' sentinel, which the conversation layer turns into
an escalation instead of a guess.
"""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Protocol, Sequence

import numpy as np

from .errors import EmptyLibrary, IndexFormatError, InvalidDemographics, SelectorFailure
from .flowcharts import MAX_AGE_MONTHS, FlowchartLibrary, Sex
from .gateway import TEMPERATURE_RETRIEVAL, Embedder, TextProvider, render_prompt

logger = logging.getLogger(__name__)

NO_FLOWCHART_AVAILABLE = "no flowchart available"

INDEX_FORMAT_VERSION = 1


@dataclass(frozen=True)
class Demographics:
    """Sex plus age as the patient stated it (value and unit kept separate)."""

    sex: Sex
    age_value: int
    age_unit: str  # "years" or "months"

    def __post_init__(self) -> None:
        unit = self.age_unit.rstrip("s").lower() if isinstance(self.age_unit, str) else ""
        if unit not in ("year", "month"):
            raise InvalidDemographics(f"age unit must be years or months, got {self.age_unit!r}")
        object.__setattr__(self, "age_unit", unit + "s")
        if not isinstance(self.age_value, int) or isinstance(self.age_value, bool):
            raise InvalidDemographics("age value must be an integer")
        months = self.age_value * 12 if unit == "year" else self.age_value
        if months <= 0 or months > MAX_AGE_MONTHS:
            raise InvalidDemographics(
                f"age must be between 1 month and {MAX_AGE_MONTHS // 12} years"
            )

    @property
    def age_months(self) -> int:
        return self.age_value * 12 if self.age_unit == "years" else self.age_value

    def age_text(self) -> str:
        unit = self.age_unit.rstrip("s") if self.age_value == 1 else self.age_unit
        return f"{self.age_value} {unit}"

    def sex_text(self) -> str:
        return self.sex.value.capitalize()


@dataclass(frozen=True)
class Query:
    demographics: Demographics
    statement: str


def compose_query_text(demographics: Demographics, statement: str) -> str:
    """The exact string embedded for retrieval and shown to the selector."""
    return (
        f"Sex: {demographics.sex_text()}. "
        f"Age: {demographics.age_text()}. "
        f"Concern: {statement}"
    )


# ---------------------------------------------------------------------------
# Index


@dataclass(frozen=True)
class IndexEntry:
    flowchart_id: str
    description_text: str
    embedding: tuple[float, ...]


@dataclass(frozen=True)
class RetrievalIndex:
    embedder_id: str
    dimension: int
    entries: tuple[IndexEntry, ...]

    def __len__(self) -> int:
        return len(self.entries)


def build_index(library: FlowchartLibrary, embedder: Embedder) -> RetrievalIndex:
    """Embed every chart description. Charts are indexed in id order, so the
    same library and embedder always produce the same index."""
    if len(library) == 0:
        raise EmptyLibrary("cannot index an empty library")
    charts = list(library)  # already sorted by id
    texts = [chart.description_text() for chart in charts]
    vectors = embedder.embed(texts)
    entries = tuple(
        IndexEntry(chart.id, text, tuple(float(x) for x in vector))
        for chart, text, vector in zip(charts, texts, vectors)
    )
    return RetrievalIndex(embedder.embedder_id, embedder.dimension, entries)


def save_index(index: RetrievalIndex, path: str | Path) -> None:
    document = {
        "format_version": INDEX_FORMAT_VERSION,
        "embedder_id": index.embedder_id,
        "dimension": index.dimension,
        "entries": [
            {
                "flowchart_id": e.flowchart_id,
                "description_text": e.description_text,
                "embedding": list(e.embedding),
            }
            for e in index.entries
        ],
    }
    Path(path).write_text(json.dumps(document, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_index(path: str | Path, expected_embedder_id: str | None = None) -> RetrievalIndex:
    try:
        document = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise IndexFormatError(f"cannot read index {str(path)!r}: {exc}") from None
    if not isinstance(document, dict) or document.get("format_version") != INDEX_FORMAT_VERSION:
        raise IndexFormatError("unsupported index format")
    try:
        entries = tuple(
            IndexEntry(
                flowchart_id=str(e["flowchart_id"]),
                description_text=str(e["description_text"]),
                embedding=tuple(float(x) for x in e["embedding"]),
            )
            for e in document["entries"]
        )
        index = RetrievalIndex(str(document["embedder_id"]), int(document["dimension"]), entries)
    except (KeyError, TypeError, ValueError) as exc:
        raise IndexFormatError(f"malformed index document: {exc}") from None
    for entry in index.entries:
        if len(entry.embedding) != index.dimension:
            raise IndexFormatError(
                f"entry {entry.flowchart_id!r} has dimension {len(entry.embedding)}, "
                f"index declares {index.dimension}"
            )
    if expected_embedder_id is not None and index.embedder_id != expected_embedder_id:
        raise IndexFormatError(
            f"index built with embedder {index.embedder_id!r}, expected {expected_embedder_id!r}"
        )
    return index


# ---------------------------------------------------------------------------
# Search


@dataclass(frozen=True)
class ScoredCandidate:
    flowchart_id: str
    description_text: str
    score: float | None  # None when candidates were not ranked by similarity
    name: str | None = None


def cosine_scores(index: RetrievalIndex, query_vector: Sequence[float]) -> list[float]:
    matrix = np.asarray([e.embedding for e in index.entries], dtype=np.float64)
    query = np.asarray(query_vector, dtype=np.float64)
    if query.shape != (index.dimension,):
        raise IndexFormatError(
            f"query vector has dimension {query.shape}, index needs {index.dimension}"
        )
    query_norm = float(np.linalg.norm(query))
    entry_norms = np.linalg.norm(matrix, axis=1)
    if query_norm == 0.0:
        return [0.0] * len(index.entries)
    with np.errstate(divide="ignore", invalid="ignore"):
        scores = matrix @ query / (entry_norms * query_norm)
    scores = np.nan_to_num(scores, nan=0.0)
    return [float(s) for s in scores]


def search_text(
    index: RetrievalIndex,
    text: str,
    n: int,
    embedder: Embedder,
    *,
    library: FlowchartLibrary | None = None,
    demographics: Demographics | None = None,
    applicability_filter: bool = False,
) -> list[ScoredCandidate]:
    """Top ``n`` index entries by cosine similarity to ``text``.

    With the applicability filter on, charts the patient falls outside of are
    removed before ranking; that needs both the library (for applicability)
    and the patient demographics. Ties break on flowchart id, so rankings are
    total and stable.
    """
    if n <= 0:
        return []
    if embedder.embedder_id != index.embedder_id:
        raise IndexFormatError(
            f"index built with embedder {index.embedder_id!r}, "
            f"queried with {embedder.embedder_id!r}"
        )
    if applicability_filter:
        if library is None or demographics is None:
            raise ValueError("applicability_filter needs both library and demographics")
    scores = cosine_scores(index, embedder.embed([text])[0])
    ranked: list[tuple[float, IndexEntry]] = []
    for entry, score in zip(index.entries, scores):
        if applicability_filter:
            assert library is not None and demographics is not None
            if entry.flowchart_id not in library:
                continue
            chart = library.get(entry.flowchart_id)
            if not chart.applicability.contains(demographics.sex, demographics.age_months):
                continue
        ranked.append((score, entry))
    ranked.sort(key=lambda pair: (-pair[0], pair[1].flowchart_id))
    results = []
    for score, entry in ranked[:n]:
        name = None
        if library is not None and entry.flowchart_id in library:
            name = library.get(entry.flowchart_id).name
        results.append(ScoredCandidate(entry.flowchart_id, entry.description_text, score, name))
    return results


def search(
    index: RetrievalIndex,
    query: Query,
    n: int,
    embedder: Embedder,
    *,
    library: FlowchartLibrary | None = None,
    applicability_filter: bool = True,
) -> list[ScoredCandidate]:
    return search_text(
        index,
        compose_query_text(query.demographics, query.statement),
        n,
        embedder,
        library=library,
        demographics=query.demographics,
        applicability_filter=applicability_filter,
    )


# ---------------------------------------------------------------------------
# Selection


@dataclass(frozen=True)
class Selection:
    flowchart_id: str | None  # None means "no flowchart available"
    candidates_shown: tuple[ScoredCandidate, ...]
    note: str | None = None

    @property
    def no_flowchart(self) -> bool:
        return self.flowchart_id is None


class Selector(Protocol):
    def select(self, query_text: str, candidates: Sequence[ScoredCandidate]) -> str: ...


class ArgmaxSelector:
    """Offline stub: returns the top-ranked candidate unchanged."""

    offline = True

    def select(self, query_text: str, candidates: Sequence[ScoredCandidate]) -> str:
        if not candidates:
            return NO_FLOWCHART_AVAILABLE
        return candidates[0].flowchart_id


class LlmSelector:
    """Asks the provider to pick a chart (by name) from the short list."""

    offline = False

    def __init__(self, provider: TextProvider) -> None:
        self._provider = provider

    def select(self, query_text: str, candidates: Sequence[ScoredCandidate]) -> str:
        block = "\n".join(f"- {c.description_text}" for c in candidates)
        prompt = render_prompt("retrieval_agent", query=query_text, candidates=block)
        return self._provider.generate(prompt, temperature=TEMPERATURE_RETRIEVAL)


_NORMALISE_RE = re.compile(r"[^a-z0-9]+")


def _normalise(text: str) -> str:
    return _NORMALISE_RE.sub(" ", text.lower()).strip()


def select_flowchart(
    query_text: str,
    candidates: Sequence[ScoredCandidate],
    selector: Selector,
    shown: int = 3,
) -> Selection:
    """Run the selection stage and resolve its free-text reply to a chart id.

    A reply containing the sentinel, or one that matches no candidate, ends
    in the 'no flowchart' outcome; the latter is logged, never an exception,
    because the conversation must keep moving.
    """
    shown_candidates = tuple(candidates[:shown])
    if not candidates:
        return Selection(None, (), note="no candidates to select from")
    try:
        raw = selector.select(query_text, candidates)
    except (TypeError, AttributeError) as exc:
        raise SelectorFailure(f"selector crashed: {exc}") from exc
    if not isinstance(raw, str):
        raise SelectorFailure(f"selector returned {type(raw).__name__}, expected str")
    normalised = _normalise(raw)
    if NO_FLOWCHART_AVAILABLE in normalised:
        return Selection(None, shown_candidates)
    for candidate in candidates:  # exact id or exact name
        name = _normalise(candidate.name) if candidate.name else ""
        if normalised == _normalise(candidate.flowchart_id) or (name and normalised == name):
            return Selection(candidate.flowchart_id, shown_candidates)
    # A chart name quoted inside a longer reply. Prefer the longest match so
    # that a name which contains another name cannot shadow it.
    contained: list[tuple[int, ScoredCandidate]] = []
    haystack = f" {normalised} "
    for candidate in candidates:
        name = _normalise(candidate.name) if candidate.name else ""
        cid = _normalise(candidate.flowchart_id)
        if (name and f" {name} " in haystack) or f" {cid} " in haystack:
            contained.append((len(name or cid), candidate))
    if contained:
        contained.sort(key=lambda pair: -pair[0])
        return Selection(contained[0][1].flowchart_id, shown_candidates)
    # Or the reply is a fragment of exactly one candidate name.
    fragments = [
        c
        for c in candidates
        if c.name and normalised and f" {normalised} " in f" {_normalise(c.name)} "
    ]
    if len(fragments) == 1:
        return Selection(fragments[0].flowchart_id, shown_candidates)
    note = f"selector reply {raw!r} matches no candidate; treating as no flowchart"
    logger.warning(note)
    return Selection(None, shown_candidates, note=note)
