"""Synthetic evaluation: data generation, categorisation, metrics, reports.

Two datasets are generated per corpus: opening statements (brief and
detailed) labelled with the chart they were written for, and per-question
patient responses in five patterns from crisp answers to off-topic chat.
Retrieval is scored by whether the labelled chart comes back; navigation by
how the four-axis verdicts fall into an A/B/C/D taxonomy per pattern.

The report writer is deterministic: the same report always serialises to
the same bytes.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import re
import statistics
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    ClassifierFailure,
    LabelNotInLibrary,
    MalformedStructuredOutput,
    ProviderError,
    UnparsableGeneration,
)
from .flowcharts import Flowchart, FlowchartLibrary, Node, Sex
from .gateway import Embedder, TEMPERATURE_GENERATION, TextProvider, render_prompt
from .interpretation import AxisVerdict, Classifier
from .retrieval import (
    Demographics,
    RetrievalIndex,
    ScoredCandidate,
    Selector,
    compose_query_text,
    search_text,
    select_flowchart,
)

logger = logging.getLogger(__name__)

_FNV_OFFSET = 14695981039346656037
_FNV_PRIME = 1099511628211


def _stable_seed(text: str) -> int:
    value = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        value ^= byte
        value = (value * _FNV_PRIME) & 0xFFFFFFFFFFFFFFFF
    return value


# ---------------------------------------------------------------------------
# Patterns and records


class ResponsePattern(str, Enum):
    BRIEF = "brief"
    DESCRIPTIVE = "descriptive"
    WEAK = "weak"
    UNCERTAIN = "uncertain"
    OFF_TOPIC = "off_topic"


PATTERN_DISPLAY_NAMES: dict[ResponsePattern, str] = {
    ResponsePattern.BRIEF: "brief",
    ResponsePattern.DESCRIPTIVE: "descriptive",
    ResponsePattern.WEAK: "weak",
    ResponsePattern.UNCERTAIN: "uncertain",
    ResponsePattern.OFF_TOPIC: "off-topic",
}

PATTERN_DEFINITIONS: dict[ResponsePattern, str] = {
    ResponsePattern.BRIEF: (
        "conclusive and minimalistic: clearly answer the question without "
        "additional reasoning, details, or repetition of the question"
    ),
    ResponsePattern.DESCRIPTIVE: (
        "conclusive and descriptive: clearly answer the question and add "
        "details, context, or elaboration that supports the answer"
    ),
    ResponsePattern.WEAK: (
        "vague or partially conclusive: lean towards an answer but hedge it "
        "with uncertainty or ambiguous language"
    ),
    ResponsePattern.UNCERTAIN: (
        "inconclusive: remain uncertain due to a lack of sufficient "
        "information, neither confirming nor denying the question"
    ),
    ResponsePattern.OFF_TOPIC: (
        "irrelevant: completely unrelated to the question while still making "
        "basic conversational sense"
    ),
}

LABEL_YES = "yes"
LABEL_NO = "no"
LABEL_NOT_ANSWERED = "not_answered"
LABEL_OFF_TOPIC = "off_topic"

# Each question node gets one generation cell per (pattern, label) pair.
RESPONSE_CELLS: tuple[tuple[ResponsePattern, str], ...] = (
    (ResponsePattern.BRIEF, LABEL_YES),
    (ResponsePattern.BRIEF, LABEL_NO),
    (ResponsePattern.DESCRIPTIVE, LABEL_YES),
    (ResponsePattern.DESCRIPTIVE, LABEL_NO),
    (ResponsePattern.WEAK, LABEL_YES),
    (ResponsePattern.WEAK, LABEL_NO),
    (ResponsePattern.UNCERTAIN, LABEL_NOT_ANSWERED),
    (ResponsePattern.OFF_TOPIC, LABEL_OFF_TOPIC),
)

STYLE_BRIEF = "brief"
STYLE_DETAILED = "detailed"
BRIEF_MAX_WORDS = 25
DETAILED_MIN_WORDS = 50


@dataclass(frozen=True)
class OpeningStatementRecord:
    record_id: str
    label_flowchart_id: str
    sex: str
    age_value: int
    age_unit: str
    style: str
    text: str
    generator: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "label_flowchart_id": self.label_flowchart_id,
            "sex": self.sex,
            "age_value": self.age_value,
            "age_unit": self.age_unit,
            "style": self.style,
            "text": self.text,
            "generator": self.generator,
        }


@dataclass(frozen=True)
class PatientResponseRecord:
    record_id: str
    flowchart_id: str
    node_id: str
    question_text: str
    pattern: ResponsePattern
    label: str
    text: str
    generator: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "record_id": self.record_id,
            "flowchart_id": self.flowchart_id,
            "node_id": self.node_id,
            "question_text": self.question_text,
            "pattern": self.pattern.value,
            "label": self.label,
            "text": self.text,
            "generator": self.generator,
        }


def write_records(path: str | Path, records: Sequence[Any]) -> None:
    lines = [json.dumps(r.to_dict(), sort_keys=True) for r in records]
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


def _read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    rows = []
    for line_number, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
        except ValueError as exc:
            raise UnparsableGeneration(f"{path}:{line_number}: invalid JSON: {exc}") from None
        if not isinstance(row, dict):
            raise UnparsableGeneration(f"{path}:{line_number}: expected an object")
        rows.append(row)
    return rows


def read_opening_records(path: str | Path) -> list[OpeningStatementRecord]:
    return [
        OpeningStatementRecord(
            record_id=str(r["record_id"]),
            label_flowchart_id=str(r["label_flowchart_id"]),
            sex=str(r["sex"]),
            age_value=int(r["age_value"]),
            age_unit=str(r["age_unit"]),
            style=str(r["style"]),
            text=str(r["text"]),
            generator=str(r["generator"]),
        )
        for r in _read_jsonl(path)
    ]


def read_response_records(path: str | Path) -> list[PatientResponseRecord]:
    return [
        PatientResponseRecord(
            record_id=str(r["record_id"]),
            flowchart_id=str(r["flowchart_id"]),
            node_id=str(r["node_id"]),
            question_text=str(r["question_text"]),
            pattern=ResponsePattern(r["pattern"]),
            label=str(r["label"]),
            text=str(r["text"]),
            generator=str(r["generator"]),
        )
        for r in _read_jsonl(path)
    ]


# ---------------------------------------------------------------------------
# Categorisation


class NavCategory(str, Enum):
    A = "A"  # certain and right
    B = "B"  # uncertain but right
    C = "C"  # uncertain and wrong (recoverable: the session will not advance)
    D = "D"  # certain and wrong (silently takes the wrong branch)
    OFF_TOPIC_DETECTED = "off_topic_detected"
    OFF_TOPIC_MISSED = "off_topic_missed"


ACCEPTABLE_CATEGORIES = {
    NavCategory.A,
    NavCategory.B,
    NavCategory.C,
    NavCategory.OFF_TOPIC_DETECTED,
}


def categorize(verdict: AxisVerdict, pattern: ResponsePattern, label: str) -> NavCategory:
    """Where one classified response lands in the outcome taxonomy.

    Conclusive patterns measure answer correctness against the label;
    the inconclusive pattern measures whether an answer was (wrongly)
    extracted at all; off-topic measures detection.
    """
    if pattern is ResponsePattern.OFF_TOPIC:
        return NavCategory.OFF_TOPIC_DETECTED if not verdict.is_on_topic else NavCategory.OFF_TOPIC_MISSED
    if pattern is ResponsePattern.UNCERTAIN:
        answered = verdict.is_answered
        if not answered:
            return NavCategory.B if verdict.is_uncertain else NavCategory.A
        return NavCategory.C if verdict.is_uncertain else NavCategory.D
    if label not in (LABEL_YES, LABEL_NO):
        raise ValueError(f"conclusive pattern needs a yes/no label, got {label!r}")
    answer = verdict.actual_answer.value if verdict.actual_answer is not None else None
    correct = verdict.is_answered and answer == label
    if correct:
        return NavCategory.B if verdict.is_uncertain else NavCategory.A
    return NavCategory.C if verdict.is_uncertain else NavCategory.D


# ---------------------------------------------------------------------------
# Generation helpers


_OPENING_SET_RE = re.compile(
    r"Sex:\s*(?P<sex>[A-Za-z]+)\s*.*?"
    r"Age:\s*(?P<age>\d+)\s*(?P<unit>[A-Za-z]+)\s*.*?"
    r"Opening Statement:\s*(?P<stmt>.+?)(?=\n\s*(?:Set\b|\d+[.)]|Sex:)|\Z)",
    re.IGNORECASE | re.DOTALL,
)

_LINE_PREFIX_RE = re.compile(r"^\s*(?:\d+[.)]\s*|[-*]\s+)")


def parse_opening_sets(raw: str) -> list[tuple[str, int, str, str]]:
    """Extract (sex, age_value, age_unit, statement) tuples from a generation
    response. Raises when nothing parsable is present."""
    sets = []
    for match in _OPENING_SET_RE.finditer(raw):
        statement = " ".join(match.group("stmt").split())
        statement = statement.strip().strip('"').strip()
        if not statement:
            continue
        sets.append(
            (
                match.group("sex").lower(),
                int(match.group("age")),
                match.group("unit").lower(),
                statement,
            )
        )
    if not sets:
        raise UnparsableGeneration("no demographic/statement sets found in generation output")
    return sets


def parse_response_lines(raw: str) -> list[str]:
    """Extract individual responses from a numbered-list generation reply."""
    lines = []
    for line in raw.splitlines():
        stripped = _LINE_PREFIX_RE.sub("", line).strip()
        stripped = stripped.strip('"').strip()
        if not stripped or stripped.endswith(":"):
            continue  # preamble like 'Here are five responses:'
        lines.append(stripped)
    if not lines:
        raise UnparsableGeneration("no responses found in generation output")
    return lines


def _is_pediatric(chart: Flowchart) -> bool:
    upper = chart.applicability.age_max_months
    return upper is not None and upper <= 144


def _sample_demographics(chart: Flowchart, seed_text: str) -> Demographics:
    """Deterministic in-range demographics used when the generator's own
    demographics are missing or violate the chart's applicability."""
    seed = _stable_seed(seed_text)
    sexes = sorted(s.value for s in chart.applicability.sexes)
    sex = Sex(sexes[seed % len(sexes)])
    low = max(1, chart.applicability.age_min_months)
    high = chart.applicability.age_max_months or 1440
    months = low + (seed // 7) % (high - low + 1)
    if months >= 24 and months % 12 == 0:
        return Demographics(sex, months // 12, "years")
    return Demographics(sex, months, "months")


def _coerce_demographics(
    chart: Flowchart, sex: str, age_value: int, age_unit: str, seed_text: str
) -> Demographics:
    try:
        demographics = Demographics(Sex(sex), age_value, age_unit)
    except Exception:
        return _sample_demographics(chart, seed_text)
    if not chart.applicability.contains(demographics.sex, demographics.age_months):
        return _sample_demographics(chart, seed_text)
    return demographics


def _word_count(text: str) -> int:
    return len(text.split())


def generate_opening_statements(
    library: FlowchartLibrary,
    provider: TextProvider,
    per_chart: int,
    style: str,
    generator: str,
    charts: Sequence[str] | None = None,
    max_rounds: int = 3,
) -> tuple[list[OpeningStatementRecord], list[str]]:
    """Generate ``per_chart`` labelled opening statements per chart.

    Statements that break the style's word budget are dropped and re-asked
    up to ``max_rounds`` times, then given up on with a warning. Bad or
    missing demographics are replaced deterministically, not dropped.
    """
    if style not in (STYLE_BRIEF, STYLE_DETAILED):
        raise ValueError(f"style must be brief or detailed, got {style!r}")
    template_id = "gen_brief_opening" if style == STYLE_BRIEF else "gen_detailed_opening"
    selected = [library.get(cid) for cid in (charts or library.ids())]
    records: list[OpeningStatementRecord] = []
    warnings: list[str] = []
    for chart in selected:
        extra_rules = ""
        if _is_pediatric(chart):
            extra_rules = (
                "\n3. The patient is a young child, so phrase every opening statement "
                "from a parent's or caregiver's perspective."
            )
        collected: list[tuple[Demographics, str]] = []
        rounds = 0
        while len(collected) < per_chart and rounds < max_rounds:
            needed = per_chart - len(collected)
            prompt = render_prompt(
                template_id,
                num=str(needed),
                flowchart=chart.description_text(),
                extra_rules=extra_rules,
            )
            raw = provider.generate(prompt, temperature=TEMPERATURE_GENERATION)
            rounds += 1
            try:
                sets = parse_opening_sets(raw)
            except UnparsableGeneration as exc:
                warnings.append(f"{chart.id}/{style}: round {rounds}: {exc}")
                continue
            for sex, age_value, age_unit, statement in sets:
                if len(collected) >= per_chart:
                    break
                words = _word_count(statement)
                if style == STYLE_BRIEF and words > BRIEF_MAX_WORDS:
                    continue
                if style == STYLE_DETAILED and words < DETAILED_MIN_WORDS:
                    continue
                seed_text = f"{chart.id}:{style}:{len(collected)}"
                demographics = _coerce_demographics(chart, sex, age_value, age_unit, seed_text)
                collected.append((demographics, statement))
        if len(collected) < per_chart:
            warnings.append(
                f"{chart.id}/{style}: only {len(collected)} of {per_chart} statements "
                f"survived validation after {rounds} rounds"
            )
        for i, (demographics, statement) in enumerate(collected):
            records.append(
                OpeningStatementRecord(
                    record_id=f"{chart.id}:{style}:{i:03d}",
                    label_flowchart_id=chart.id,
                    sex=demographics.sex.value,
                    age_value=demographics.age_value,
                    age_unit=demographics.age_unit,
                    style=style,
                    text=statement,
                    generator=generator,
                )
            )
    return records, warnings


def generate_responses(
    library: FlowchartLibrary,
    provider: TextProvider,
    per_cell: int,
    generator: str,
    charts: Sequence[str] | None = None,
    max_rounds: int = 3,
) -> tuple[list[PatientResponseRecord], list[str]]:
    """Generate patient responses for every question node: per_cell responses
    for each of the eight (pattern, label) cells, 8 * per_cell per question."""
    selected = [library.get(cid) for cid in (charts or library.ids())]
    records: list[PatientResponseRecord] = []
    warnings: list[str] = []
    for chart in selected:
        for node in chart.question_nodes():
            for pattern, label in RESPONSE_CELLS:
                texts = _generate_cell(
                    provider, node, pattern, label, per_cell, max_rounds, warnings, chart.id
                )
                for i, text in enumerate(texts):
                    records.append(
                        PatientResponseRecord(
                            record_id=f"{chart.id}:{node.id}:{pattern.value}:{label}:{i:02d}",
                            flowchart_id=chart.id,
                            node_id=node.id,
                            question_text=node.text,
                            pattern=pattern,
                            label=label,
                            text=text,
                            generator=generator,
                        )
                    )
    return records, warnings


def _generate_cell(
    provider: TextProvider,
    node: Node,
    pattern: ResponsePattern,
    label: str,
    per_cell: int,
    max_rounds: int,
    warnings: list[str],
    chart_id: str,
) -> list[str]:
    if label == LABEL_YES:
        answer_clause = ' "Yes"'
    elif label == LABEL_NO:
        answer_clause = ' "No"'
    else:
        answer_clause = ""
    collected: list[str] = []
    seen: set[str] = set()
    rounds = 0
    while len(collected) < per_cell and rounds < max_rounds:
        prompt = render_prompt(
            "gen_patient_response",
            num=str(per_cell - len(collected)),
            answer_clause=answer_clause,
            question=node.text,
            pattern_name=PATTERN_DISPLAY_NAMES[pattern],
            pattern_definition=PATTERN_DEFINITIONS[pattern],
        )
        raw = provider.generate(prompt, temperature=TEMPERATURE_GENERATION)
        rounds += 1
        try:
            lines = parse_response_lines(raw)
        except UnparsableGeneration as exc:
            warnings.append(f"{chart_id}/{node.id}/{pattern.value}/{label}: round {rounds}: {exc}")
            continue
        for line in lines:
            if len(collected) >= per_cell:
                break
            key = line.lower()
            if key in seen:
                continue
            seen.add(key)
            collected.append(line)
    if len(collected) < per_cell:
        warnings.append(
            f"{chart_id}/{node.id}/{pattern.value}/{label}: only {len(collected)} of "
            f"{per_cell} responses after {rounds} rounds"
        )
    return collected


# ---------------------------------------------------------------------------
# Offline deterministic generation provider


_BRIEF_YES = (
    "Yes.",
    "Yeah.",
    "Yep.",
    "Absolutely.",
    "Yes, that's right.",
    "For sure.",
    "Uh-huh.",
    "Yes, definitely.",
)
_BRIEF_NO = (
    "No.",
    "Nope.",
    "Not at all.",
    "Never.",
    "Negative.",
    "No, not really.",
    "Nope, nothing like that.",
    "No, never.",
)
_WEAK_YES = (
    "I guess yes.",
    "Probably yes.",
    "Maybe yes, kind of.",
    "Possibly yes.",
    "I think yes, not sure though.",
    "Yes, I suppose, kind of.",
    "Probably yes, I guess.",
    "Maybe yes.",
)
_WEAK_NO = (
    "Probably no.",
    "I guess no.",
    "Maybe no, kind of.",
    "I doubt it, so no.",
    "Possibly no.",
    "No, I think, not sure though.",
    "Probably no, I guess.",
    "Maybe no.",
)
_UNCERTAIN = (
    "I'm not sure, I haven't checked.",
    "I don't know, to be honest.",
    "Hard to say, maybe. I really can't tell.",
    "Not sure at all, sorry.",
    "It depends, I guess. I couldn't say.",
    "I honestly have no idea, maybe.",
    "I'm not sure I can answer that one.",
    "Possibly? I just don't know.",
)
_OFF_TOPIC = (
    "By the way, my neighbor just got a new car.",
    "Did you watch the game last weekend?",
    "I've been organizing my closet all morning.",
    "My cousin is visiting from out of town tomorrow.",
    "I still need to return those library books.",
    "The traffic on the way home was terrible today.",
    "We repainted the kitchen over the holidays.",
    "I'm thinking about taking up gardening this spring.",
)

_DAYS = ("yesterday", "two days ago", "this morning", "last night", "earlier this week",
         "a few hours ago", "over the weekend", "since Monday")

_DETAIL_FILLER = (
    "It tends to get more noticeable in the evening, which makes it hard to settle down and rest properly.",
    "Nothing I have tried at home has made a real difference so far, and I am starting to get a little worried about it.",
    "I have not changed anything about my routine lately, so I cannot think of an obvious explanation for it.",
    "It is not unbearable, but it is definitely there, and I would rather ask now than let it drag on.",
)

_GEN_NUM_SETS_RE = re.compile(r"Generate (\d+) distinct sets")
_GEN_FLOWCHART_RE = re.compile(r"Flowchart: (?P<name>[^(\n]+)\((?P<phrase>[^)]*)\):\s*(?P<desc>.+)")
_GEN_NUM_RESP_RE = re.compile(r"Provide (\d+) distinct ways")
_GEN_QUESTION_RE = re.compile(r"Question: (.+)")
_GEN_PATTERN_RE = re.compile(r"Responses should be ([a-z\- ]+):")
_GEN_ANSWER_RE = re.compile(r'respond "(Yes|No)"')


def _phrase_bounds(phrase: str) -> tuple[int, int, list[str]]:
    """Invert an applicability phrase back into (min_months, max_months, sexes)."""
    ages_part, _, sexes_part = phrase.partition(" - ")
    sexes = []
    if "female" in sexes_part.lower():
        sexes.append("female")
    if re.search(r"\bmale\b", sexes_part.lower()):
        sexes.append("male")
    if not sexes:
        sexes = ["female", "male"]

    def months_of(value: int, unit: str) -> int:
        return value * 12 if unit.startswith("year") else value

    low, high = 1, 1440
    ages = ages_part.strip().lower()
    span = re.match(r"(\d+) (years?|months?) to (\d+) (years?|months?)", ages)
    over = re.match(r"over (\d+) (years?|months?)", ages)
    upto = re.match(r"up to (\d+) (years?|months?)", ages)
    if span:
        low = max(1, months_of(int(span.group(1)), span.group(2)))
        high = months_of(int(span.group(3)), span.group(4))
    elif over:
        low = max(1, months_of(int(over.group(1)), over.group(2)))
    elif upto:
        high = months_of(int(upto.group(1)), upto.group(2))
    return low, high, sexes


def _complaint_words(description: str) -> str:
    words = [w for w in re.findall(r"[A-Za-z']+", description) if w.lower() not in ("flowchart", "for", "a", "an", "the", "such", "as", "or", "of", "to", "that", "have", "been")]
    return " ".join(words[:6]).lower() or "how I have been feeling"


class OfflineGenerationProvider:
    """Deterministic text provider that speaks the generation prompt protocol.

    It parses the same prompts the real provider would receive and answers
    with templated, in-format text, so the whole generation pipeline
    (prompting, parsing, validation) can run without a network. Output is a
    pure function of the prompt.
    """

    offline = True

    def generate(self, prompt: str, temperature: float = 0.0) -> str:
        if "Opening Statement" in prompt and "distinct sets" in prompt:
            return self._openings(prompt)
        if "distinct ways to respond" in prompt:
            return self._responses(prompt)
        raise ProviderError("offline generation provider only understands generation prompts")

    def _openings(self, prompt: str) -> str:
        num_match = _GEN_NUM_SETS_RE.search(prompt)
        chart_match = _GEN_FLOWCHART_RE.search(prompt)
        if not num_match or not chart_match:
            raise ProviderError("unrecognised opening-statement prompt")
        num = int(num_match.group(1))
        name = chart_match.group("name").strip()
        low, high, sexes = _phrase_bounds(chart_match.group("phrase"))
        complaint = _complaint_words(chart_match.group("desc"))
        detailed = "DETAILED" in prompt
        caregiver = "caregiver" in prompt
        seed = _stable_seed(prompt)
        blocks = []
        for i in range(num):
            months = low + ((seed >> (i % 13)) + i * 37) % (high - low + 1)
            if months >= 24 and months % 12 == 0:
                age = f"{months // 12} years"
            elif months >= 24:
                age = f"{months // 12} years"  # keep units simple for round ages
            else:
                age = f"{months} months" if months != 1 else "1 month"
            sex = sexes[(seed + i) % len(sexes)]
            day = _DAYS[(seed + i) % len(_DAYS)]
            subject = "my child has" if caregiver else "I have"
            if detailed:
                statement = (
                    f"I wanted to ask about {complaint}, because {subject} been dealing with it "
                    f"since {day} and it has slowly been getting worse rather than better. "
                )
                k = 0
                while len(statement.split()) < DETAILED_MIN_WORDS + 4:
                    statement += _DETAIL_FILLER[(seed + i + k) % len(_DETAIL_FILLER)] + " "
                    k += 1
                statement = statement.strip()
            else:
                opener = "My child has" if caregiver else "I have"
                statement = f"{opener} been having trouble with {complaint} since {day}."
            blocks.append(
                f"Set {i + 1}\nSex: {sex.capitalize()}\nAge: {age}\n"
                f'Opening Statement: "{statement}"'
            )
        _ = name
        return "\n\n".join(blocks)

    def _responses(self, prompt: str) -> str:
        num_match = _GEN_NUM_RESP_RE.search(prompt)
        question_match = _GEN_QUESTION_RE.search(prompt)
        pattern_match = _GEN_PATTERN_RE.search(prompt)
        if not num_match or not question_match or not pattern_match:
            raise ProviderError("unrecognised patient-response prompt")
        num = int(num_match.group(1))
        question = question_match.group(1).strip()
        pattern = pattern_match.group(1).strip()
        answer_match = _GEN_ANSWER_RE.search(prompt)
        answer = answer_match.group(1).lower() if answer_match else None
        keywords = [
            w
            for w in re.findall(r"[a-z']+", question.lower())
            if len(w) > 3 and w not in ("your", "have", "been", "does", "with", "feel", "following")
        ]
        keyword = keywords[0] if keywords else "that"
        seed = _stable_seed(prompt)
        if pattern == "brief":
            base = _BRIEF_YES if answer == "yes" else _BRIEF_NO
            texts = [base[(seed + i) % len(base)] for i in range(num)]
        elif pattern == "descriptive":
            texts = []
            for i in range(num):
                day = _DAYS[(seed + i) % len(_DAYS)]
                if answer == "yes":
                    texts.append(
                        f"Yes, it really has been like that with the {keyword} since {day}."
                    )
                else:
                    texts.append(
                        f"No, nothing like that, the {keyword} side of things has been fine since {day}."
                    )
        elif pattern == "weak":
            base = _WEAK_YES if answer == "yes" else _WEAK_NO
            texts = [base[(seed + i) % len(base)] for i in range(num)]
        elif pattern == "uncertain":
            texts = [_UNCERTAIN[(seed + i) % len(_UNCERTAIN)] for i in range(num)]
        else:
            texts = [_OFF_TOPIC[(seed + i) % len(_OFF_TOPIC)] for i in range(num)]
        # Distinctness within one reply; vary a suffix when the base lists run out.
        out: list[str] = []
        used: set[str] = set()
        for i, text in enumerate(texts):
            candidate = text
            bump = 0
            while candidate.lower() in used:
                bump += 1
                day = _DAYS[(seed + i + bump) % len(_DAYS)]
                candidate = f"{text[:-1]}, as of {day}."
            used.add(candidate.lower())
            out.append(candidate)
        return "\n".join(f"{i + 1}. {t}" for i, t in enumerate(out))


# ---------------------------------------------------------------------------
# Retrieval evaluation


@dataclass
class GeneratorRetrievalMetrics:
    generator: str
    n: int
    llm_only_acc: float | None
    sim_top1_acc: float | None
    sim_top3_acc: float | None
    sim_top5_acc: float | None
    agent_acc: float | None
    specialty_std: dict[str, float] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "generator": self.generator,
            "n": self.n,
            "llm_only_acc": self.llm_only_acc,
            "sim_top1_acc": self.sim_top1_acc,
            "sim_top3_acc": self.sim_top3_acc,
            "sim_top5_acc": self.sim_top5_acc,
            "agent_acc": self.agent_acc,
            "specialty_std": dict(sorted(self.specialty_std.items())),
        }


@dataclass
class RetrievalMetrics:
    per_generator: list[GeneratorRetrievalMetrics]
    mean: dict[str, float | None]  # unweighted across generators
    pooled: dict[str, float | None]  # every record weighted equally

    def to_dict(self) -> dict[str, Any]:
        return {
            "per_generator": [g.to_dict() for g in self.per_generator],
            "mean": self.mean,
            "pooled": self.pooled,
        }


_RETRIEVAL_METRIC_NAMES = ("llm_only_acc", "sim_top1_acc", "sim_top3_acc", "sim_top5_acc", "agent_acc")


def _accuracy(hits: list[bool]) -> float | None:
    if not hits:
        return None
    return sum(hits) / len(hits)


def eval_retrieval(
    records: Sequence[OpeningStatementRecord],
    index: RetrievalIndex,
    embedder: Embedder,
    library: FlowchartLibrary,
    selector: Selector | None = None,
    modes: Sequence[str] = ("sim", "agent"),
    agent_candidates: int = 10,
) -> RetrievalMetrics:
    """Score retrieval over labelled opening statements.

    Modes: ``sim`` ranks everything by cosine and checks the label's rank;
    ``agent`` runs similarity top-n then the selector; ``llm_only`` gives the
    selector the whole library, unranked. The applicability filter stays off
    here so that every chart competes.
    """
    for mode in modes:
        if mode not in ("sim", "agent", "llm_only"):
            raise ValueError(f"unknown retrieval mode {mode!r}")
    if ("agent" in modes or "llm_only" in modes) and selector is None:
        raise ValueError("agent and llm_only modes need a selector")
    for record in records:
        if record.label_flowchart_id not in library:
            raise LabelNotInLibrary(
                f"record {record.record_id} labelled with unknown chart "
                f"{record.label_flowchart_id!r}"
            )

    all_candidates = [
        ScoredCandidate(chart.id, chart.description_text(), None, chart.name)
        for chart in library
    ]

    # hits[generator][metric] -> list of booleans; specialty-keyed copy too
    hits: dict[str, dict[str, list[bool]]] = {}
    spec_hits: dict[str, dict[str, dict[str, list[bool]]]] = {}

    for record in records:
        demographics = Demographics(Sex(record.sex), record.age_value, record.age_unit)
        query_text = compose_query_text(demographics, record.text)
        label = record.label_flowchart_id
        specialty = library.get(label).specialty
        row = hits.setdefault(
            record.generator, {name: [] for name in _RETRIEVAL_METRIC_NAMES}
        )
        spec_row = spec_hits.setdefault(record.generator, {}).setdefault(
            specialty, {name: [] for name in _RETRIEVAL_METRIC_NAMES}
        )
        if "sim" in modes:
            ranked = search_text(index, query_text, len(index), embedder, library=library)
            position = next(
                (i for i, c in enumerate(ranked) if c.flowchart_id == label), None
            )
            for metric, depth in (("sim_top1_acc", 1), ("sim_top3_acc", 3), ("sim_top5_acc", 5)):
                hit = position is not None and position < depth
                row[metric].append(hit)
                spec_row[metric].append(hit)
        if "agent" in modes:
            assert selector is not None
            candidates = search_text(
                index, query_text, agent_candidates, embedder, library=library
            )
            selection = select_flowchart(query_text, candidates, selector)
            hit = selection.flowchart_id == label
            row["agent_acc"].append(hit)
            spec_row["agent_acc"].append(hit)
        if "llm_only" in modes:
            assert selector is not None
            selection = select_flowchart(query_text, all_candidates, selector)
            hit = selection.flowchart_id == label
            row["llm_only_acc"].append(hit)
            spec_row["llm_only_acc"].append(hit)

    per_generator: list[GeneratorRetrievalMetrics] = []
    for generator in sorted(hits):
        row = hits[generator]
        specialty_std: dict[str, float] = {}
        for metric in _RETRIEVAL_METRIC_NAMES:
            per_specialty = [
                _accuracy(spec_hits[generator][s][metric])
                for s in sorted(spec_hits[generator])
            ]
            values = [v for v in per_specialty if v is not None]
            if values:
                specialty_std[metric] = statistics.pstdev(values) if len(values) > 1 else 0.0
        per_generator.append(
            GeneratorRetrievalMetrics(
                generator=generator,
                n=max(len(v) for v in row.values()) if any(row.values()) else 0,
                llm_only_acc=_accuracy(row["llm_only_acc"]),
                sim_top1_acc=_accuracy(row["sim_top1_acc"]),
                sim_top3_acc=_accuracy(row["sim_top3_acc"]),
                sim_top5_acc=_accuracy(row["sim_top5_acc"]),
                agent_acc=_accuracy(row["agent_acc"]),
                specialty_std=specialty_std,
            )
        )

    mean: dict[str, float | None] = {}
    pooled: dict[str, float | None] = {}
    for metric in _RETRIEVAL_METRIC_NAMES:
        gen_values = [getattr(g, metric) for g in per_generator if getattr(g, metric) is not None]
        mean[metric] = sum(gen_values) / len(gen_values) if gen_values else None
        pooled_hits = [h for g in sorted(hits) for h in hits[g][metric]]
        pooled[metric] = _accuracy(pooled_hits)
    return RetrievalMetrics(per_generator=per_generator, mean=mean, pooled=pooled)


# ---------------------------------------------------------------------------
# Navigation evaluation


@dataclass
class NavCell:
    generator: str
    pattern: ResponsePattern
    counts: dict[str, int]
    n: int
    excluded: int

    def shares(self) -> dict[str, float]:
        if self.n == 0:
            return {}
        return {category: count / self.n for category, count in sorted(self.counts.items())}

    def acceptable_share(self) -> float | None:
        if self.n == 0:
            return None
        good = sum(
            count
            for category, count in self.counts.items()
            if NavCategory(category) in ACCEPTABLE_CATEGORIES
        )
        return good / self.n

    def to_dict(self) -> dict[str, Any]:
        return {
            "generator": self.generator,
            "pattern": self.pattern.value,
            "n": self.n,
            "excluded": self.excluded,
            "counts": dict(sorted(self.counts.items())),
            "shares": self.shares(),
            "acceptable_share": self.acceptable_share(),
        }


@dataclass
class NavigationTable:
    cells: list[NavCell]
    per_generator_acceptable: dict[str, float | None]
    mean_acceptable: float | None
    pooled_acceptable: float | None
    excluded_total: int

    def to_dict(self) -> dict[str, Any]:
        return {
            "cells": [c.to_dict() for c in self.cells],
            "per_generator_acceptable": self.per_generator_acceptable,
            "mean_acceptable": self.mean_acceptable,
            "pooled_acceptable": self.pooled_acceptable,
            "excluded_total": self.excluded_total,
        }


def eval_navigation(
    records: Sequence[PatientResponseRecord],
    classifier: Classifier,
) -> NavigationTable:
    """Classify every response against its question and bucket the outcome.

    Classifier failures exclude the record (and are counted); they never
    abort the run.
    """
    cells: dict[tuple[str, ResponsePattern], NavCell] = {}
    per_generator: dict[str, list[bool]] = {}
    excluded_total = 0
    for record in records:
        key = (record.generator, record.pattern)
        cell = cells.get(key)
        if cell is None:
            cell = cells[key] = NavCell(
                generator=record.generator, pattern=record.pattern, counts={}, n=0, excluded=0
            )
        try:
            verdict = classifier.classify(record.question_text, record.text)
        except (ClassifierFailure, MalformedStructuredOutput, ProviderError) as exc:
            logger.warning("excluding record %s: %s", record.record_id, exc)
            cell.excluded += 1
            excluded_total += 1
            continue
        category = categorize(verdict, record.pattern, record.label)
        cell.counts[category.value] = cell.counts.get(category.value, 0) + 1
        cell.n += 1
        per_generator.setdefault(record.generator, []).append(
            category in ACCEPTABLE_CATEGORIES
        )
    ordered = sorted(
        cells.values(),
        key=lambda c: (c.generator, list(ResponsePattern).index(c.pattern)),
    )
    per_generator_acceptable = {
        generator: _accuracy(flags) for generator, flags in sorted(per_generator.items())
    }
    gen_values = [v for v in per_generator_acceptable.values() if v is not None]
    pooled_flags = [f for flags in per_generator.values() for f in flags]
    return NavigationTable(
        cells=ordered,
        per_generator_acceptable=per_generator_acceptable,
        mean_acceptable=sum(gen_values) / len(gen_values) if gen_values else None,
        pooled_acceptable=_accuracy(pooled_flags),
        excluded_total=excluded_total,
    )


# ---------------------------------------------------------------------------
# Report


@dataclass
class EvalReport:
    retrieval: RetrievalMetrics | None = None
    navigation: NavigationTable | None = None
    meta: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "retrieval": self.retrieval.to_dict() if self.retrieval else None,
            "navigation": self.navigation.to_dict() if self.navigation else None,
            "meta": dict(sorted(self.meta.items())),
        }


def _format_value(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def report_csv_rows(report: EvalReport) -> list[tuple[str, str, str]]:
    rows: list[tuple[str, str, str]] = []
    if report.retrieval is not None:
        for g in report.retrieval.per_generator:
            rows.append((g.generator, "retrieval/n", _format_value(g.n)))
            for metric in _RETRIEVAL_METRIC_NAMES:
                rows.append((g.generator, f"retrieval/{metric}", _format_value(getattr(g, metric))))
            for metric, std in sorted(g.specialty_std.items()):
                rows.append((g.generator, f"retrieval/{metric}/specialty_std", _format_value(std)))
        for metric in _RETRIEVAL_METRIC_NAMES:
            rows.append(("_mean", f"retrieval/{metric}", _format_value(report.retrieval.mean[metric])))
            rows.append(("_pooled", f"retrieval/{metric}", _format_value(report.retrieval.pooled[metric])))
    if report.navigation is not None:
        for cell in report.navigation.cells:
            prefix = f"navigation/{cell.pattern.value}"
            rows.append((cell.generator, f"{prefix}/n", _format_value(cell.n)))
            rows.append((cell.generator, f"{prefix}/excluded", _format_value(cell.excluded)))
            for category, share in cell.shares().items():
                rows.append((cell.generator, f"{prefix}/share_{category}", _format_value(share)))
            rows.append(
                (cell.generator, f"{prefix}/acceptable_share", _format_value(cell.acceptable_share()))
            )
        for generator, value in report.navigation.per_generator_acceptable.items():
            rows.append((generator, "navigation/acceptable_share", _format_value(value)))
        rows.append(
            ("_mean", "navigation/acceptable_share", _format_value(report.navigation.mean_acceptable))
        )
        rows.append(
            ("_pooled", "navigation/acceptable_share", _format_value(report.navigation.pooled_acceptable))
        )
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows


def emit_report(report: EvalReport, out_dir: str | Path) -> tuple[Path, Path]:
    """Write report.json and report.csv. Emission is deterministic: the same
    report object always yields byte-identical files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    json_path = out / "report.json"
    csv_path = out / "report.csv"
    json_path.write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(["generator", "metric", "value"])
    for row in report_csv_rows(report):
        writer.writerow(row)
    csv_path.write_text(buffer.getvalue(), encoding="utf-8")
    return json_path, csv_path
