"""The guided conversation: intake, chart selection, question-by-question walk.

A session moves through phases: collect demographics, collect the opening
concern, then navigate one flowchart question at a time. Navigation only
advances on a certain on-topic yes or no; everything else re-asks, confirms,
or, after too many stuck turns, escalates to a human. Every navigating turn
is recorded in an append-only trail for audit.

All mutation happens in ``submit_message`` and friends, and only after every
fallible step (classification, selection, redirect resolution) has succeeded,
so a raised error never leaves a session half-updated.
"""

from __future__ import annotations

import json
import logging
import re
import secrets
from dataclasses import dataclass, field
from datetime import datetime, timezone
from enum import Enum
from typing import Any, Callable, Mapping, Protocol, Union

from .errors import (
    ProviderError,
    RedirectDepthExceeded,
    SessionClosed,
    UnresolvableRedirect,
)
from .flowcharts import Condition, Flowchart, FlowchartLibrary, Node, NodeKind, Sex
from .gateway import TEMPERATURE_CHAT, Embedder, TextProvider, render_prompt
from .interpretation import (
    Advance,
    AxisVerdict,
    Classifier,
    ConfirmUncertain,
    NavigationAction,
    action_from_dict,
    action_to_dict,
    classify_response,
    derive_action,
)
from .retrieval import (
    Demographics,
    RetrievalIndex,
    ScoredCandidate,
    Selection,
    Selector,
    compose_query_text,
    search_text,
    select_flowchart,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Reply composition


class ComposeMode(str, Enum):
    CONVEY = "convey"
    REASK = "reask"
    CONFIRM = "confirm"


class ReplyComposer(Protocol):
    def compose(self, mode: ComposeMode, node_text: str, require_verbatim: bool = False) -> str: ...


class TemplateComposer:
    """Fixed-string composition. Free, instant, and never fails."""

    offline = True

    REASK_PREFIX = "Let's get back to the question: "
    CONFIRM_PREFIX = "Just to confirm — "

    def compose(self, mode: ComposeMode, node_text: str, require_verbatim: bool = False) -> str:
        if mode is ComposeMode.REASK:
            return self.REASK_PREFIX + node_text
        if mode is ComposeMode.CONFIRM:
            return self.CONFIRM_PREFIX + node_text
        return node_text


_COMPOSE_TEMPLATE_IDS = {
    ComposeMode.CONVEY: "chat_convey",
    ComposeMode.REASK: "chat_reask",
    ComposeMode.CONFIRM: "chat_confirm",
}


class LlmComposer:
    """Provider-backed composition with a hard floor: when the provider fails
    or paraphrases away the question, fall back to the fixed templates."""

    offline = False

    def __init__(self, provider: TextProvider, fallback: TemplateComposer | None = None) -> None:
        self._provider = provider
        self._fallback = fallback or TemplateComposer()

    def compose(self, mode: ComposeMode, node_text: str, require_verbatim: bool = False) -> str:
        prompt = render_prompt(_COMPOSE_TEMPLATE_IDS[mode], node_text=node_text)
        try:
            reply = self._provider.generate(prompt, temperature=TEMPERATURE_CHAT).strip()
        except ProviderError as exc:
            logger.warning("composer degraded to template: %s", exc)
            return self._fallback.compose(mode, node_text, require_verbatim)
        if not reply or (require_verbatim and node_text not in reply):
            logger.warning("composer output dropped the question; using template")
            return self._fallback.compose(mode, node_text, require_verbatim)
        return reply


# ---------------------------------------------------------------------------
# Phases and session state


@dataclass(frozen=True)
class CollectingDemographics:
    name = "collecting_demographics"


@dataclass(frozen=True)
class CollectingConcern:
    name = "collecting_concern"


@dataclass(frozen=True)
class Navigating:
    flowchart_id: str
    node_id: str
    consecutive_non_advances: int = 0
    redirect_depth: int = 0
    name = "navigating"


@dataclass(frozen=True)
class Completed:
    flowchart_id: str
    terminal_node_id: str
    recommendation: str
    name = "completed"


@dataclass(frozen=True)
class NoFlowchartEscalation:
    name = "no_flowchart_escalation"


@dataclass(frozen=True)
class StalledEscalation:
    flowchart_id: str
    node_id: str
    name = "stalled_escalation"


Phase = Union[
    CollectingDemographics,
    CollectingConcern,
    Navigating,
    Completed,
    NoFlowchartEscalation,
    StalledEscalation,
]

TERMINAL_PHASES = (Completed, NoFlowchartEscalation, StalledEscalation)


@dataclass(frozen=True)
class TrailEntry:
    turn_index: int
    flowchart_id: str
    node_id: str
    question_text: str
    utterance: str
    verdict: AxisVerdict
    action: NavigationAction
    timestamp: str

    def to_dict(self) -> dict[str, Any]:
        answer = self.verdict.actual_answer
        return {
            "turn_index": self.turn_index,
            "flowchart_id": self.flowchart_id,
            "node_id": self.node_id,
            "question_text": self.question_text,
            "utterance": self.utterance,
            "verdict": {
                "is_on_topic": self.verdict.is_on_topic,
                "is_answered": self.verdict.is_answered,
                "actual_answer": answer.value if answer is not None else None,
                "is_uncertain": self.verdict.is_uncertain,
            },
            "action": action_to_dict(self.action),
            "timestamp": self.timestamp,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "TrailEntry":
        verdict_data = data["verdict"]
        answer = verdict_data.get("actual_answer")
        verdict = AxisVerdict(
            is_on_topic=bool(verdict_data["is_on_topic"]),
            is_answered=bool(verdict_data["is_answered"]),
            actual_answer=Condition(answer) if answer is not None else None,
            is_uncertain=bool(verdict_data["is_uncertain"]),
        )
        return cls(
            turn_index=int(data["turn_index"]),
            flowchart_id=str(data["flowchart_id"]),
            node_id=str(data["node_id"]),
            question_text=str(data["question_text"]),
            utterance=str(data["utterance"]),
            verdict=verdict,
            action=action_from_dict(data["action"]),
            timestamp=str(data["timestamp"]),
        )


def trail_to_jsonl(entries: list[TrailEntry] | tuple[TrailEntry, ...]) -> str:
    """One JSON object per line, keys sorted, so equal trails are equal bytes."""
    if not entries:
        return ""
    return "\n".join(json.dumps(e.to_dict(), sort_keys=True) for e in entries) + "\n"


@dataclass
class Session:
    session_id: str
    created_at: str
    phase: Phase = field(default_factory=CollectingDemographics)
    demographics: Demographics | None = None
    opening_statement: str | None = None
    selection: Selection | None = None
    transcript: list[tuple[str, str]] = field(default_factory=list)  # (speaker, text)
    trail: list[TrailEntry] = field(default_factory=list)

    @property
    def closed(self) -> bool:
        return isinstance(self.phase, TERMINAL_PHASES)

    @property
    def has_advanced(self) -> bool:
        return any(isinstance(e.action, Advance) for e in self.trail)

    @property
    def last_reply(self) -> str | None:
        for speaker, text in reversed(self.transcript):
            if speaker == "nurse":
                return text
        return None

    def to_dict(self) -> dict[str, Any]:
        phase: dict[str, Any] = {"name": self.phase.name}
        if isinstance(self.phase, Navigating):
            phase.update(
                flowchart_id=self.phase.flowchart_id,
                node_id=self.phase.node_id,
                consecutive_non_advances=self.phase.consecutive_non_advances,
                redirect_depth=self.phase.redirect_depth,
            )
        elif isinstance(self.phase, Completed):
            phase.update(
                flowchart_id=self.phase.flowchart_id,
                terminal_node_id=self.phase.terminal_node_id,
                recommendation=self.phase.recommendation,
            )
        elif isinstance(self.phase, StalledEscalation):
            phase.update(flowchart_id=self.phase.flowchart_id, node_id=self.phase.node_id)
        demographics = None
        if self.demographics is not None:
            demographics = {
                "sex": self.demographics.sex.value,
                "age_value": self.demographics.age_value,
                "age_unit": self.demographics.age_unit,
            }
        selection = None
        if self.selection is not None:
            selection = {
                "flowchart_id": self.selection.flowchart_id,
                "note": self.selection.note,
                "candidates_shown": [
                    {
                        "flowchart_id": c.flowchart_id,
                        "description_text": c.description_text,
                        "score": c.score,
                        "name": c.name,
                    }
                    for c in self.selection.candidates_shown
                ],
            }
        return {
            "session_id": self.session_id,
            "created_at": self.created_at,
            "phase": phase,
            "demographics": demographics,
            "opening_statement": self.opening_statement,
            "selection": selection,
            "transcript": [list(pair) for pair in self.transcript],
            "trail": [e.to_dict() for e in self.trail],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Session":
        phase_data = dict(data["phase"])
        name = phase_data.pop("name")
        phase: Phase
        if name == "collecting_demographics":
            phase = CollectingDemographics()
        elif name == "collecting_concern":
            phase = CollectingConcern()
        elif name == "navigating":
            phase = Navigating(**phase_data)
        elif name == "completed":
            phase = Completed(**phase_data)
        elif name == "no_flowchart_escalation":
            phase = NoFlowchartEscalation()
        elif name == "stalled_escalation":
            phase = StalledEscalation(**phase_data)
        else:
            raise ValueError(f"unknown phase {name!r}")
        demographics = None
        if data.get("demographics"):
            d = data["demographics"]
            demographics = Demographics(Sex(d["sex"]), int(d["age_value"]), str(d["age_unit"]))
        selection = None
        if data.get("selection"):
            s = data["selection"]
            selection = Selection(
                flowchart_id=s["flowchart_id"],
                candidates_shown=tuple(
                    ScoredCandidate(
                        flowchart_id=c["flowchart_id"],
                        description_text=c["description_text"],
                        score=c["score"],
                        name=c.get("name"),
                    )
                    for c in s["candidates_shown"]
                ),
                note=s.get("note"),
            )
        return cls(
            session_id=str(data["session_id"]),
            created_at=str(data["created_at"]),
            phase=phase,
            demographics=demographics,
            opening_statement=data.get("opening_statement"),
            selection=selection,
            transcript=[(str(s), str(t)) for s, t in data.get("transcript", [])],
            trail=[TrailEntry.from_dict(e) for e in data.get("trail", [])],
        )


# ---------------------------------------------------------------------------
# Demographics intake


_SEX_RE = re.compile(r"\b(female|male)\b", re.IGNORECASE)
_AGE_RE = re.compile(r"(\d{1,4})\s*(?:-|\s)*\s*(years?|yrs?|yr|y/?o|months?|mons?|mos?|mo)\b", re.IGNORECASE)


def parse_demographics_text(text: str) -> Demographics | None:
    """Pull sex and age out of free text, or None when either is missing
    or out of range. 'female, 34 years' and 'Male 3 months' both work."""
    sex_match = _SEX_RE.search(text)
    age_match = _AGE_RE.search(text)
    if not sex_match or not age_match:
        return None
    sex = Sex(sex_match.group(1).lower())
    value = int(age_match.group(1))
    unit_raw = age_match.group(2).lower()
    unit = "months" if unit_raw.startswith("mo") else "years"
    try:
        return Demographics(sex, value, unit)
    except Exception:
        return None


# ---------------------------------------------------------------------------
# Engine


ASK_DEMOGRAPHICS = (
    "Welcome to online self-triage. To get started, please tell me your sex "
    "(male or female) and age, for example: female, 34 years."
)
REASK_DEMOGRAPHICS = (
    "Sorry, I didn't catch that. Please give your sex (male or female) and "
    "your age with a unit, for example: male, 6 months."
)
ASK_CONCERN = "Thank you. What brings you here today? Please describe your main concern."
NO_CHART_REPLY = (
    "I couldn't find a self-triage flowchart that matches your concern, so I "
    "won't guess. Please contact your doctor or your local urgent care to be "
    "assessed in person."
)
STALL_REPLY = (
    "We don't seem to be getting anywhere with this question, and I don't want "
    "to hold you up. Please contact your doctor or your local health line to "
    "talk it through with a person."
)


@dataclass(frozen=True)
class EngineConfig:
    candidate_count: int = 10
    shown_alternatives: int = 3
    stall_limit: int = 3
    redirect_limit: int = 5
    applicability_filter: bool = True


@dataclass(frozen=True)
class TurnResult:
    reply: str
    session: Session


@dataclass(frozen=True)
class _WalkPlan:
    """Outcome of walking from a node through info and redirect nodes until
    a question or an action. Computed before any session mutation."""

    notices: tuple[str, ...]
    chart: Flowchart
    node: Node
    redirect_depth: int

    @property
    def completed(self) -> bool:
        return self.node.kind is NodeKind.ACTION


def _default_clock() -> str:
    return datetime.now(timezone.utc).isoformat()


class ConversationEngine:
    """Drives sessions. Holds no per-session state itself; safe to share
    across sessions as long as each single session is used serially."""

    def __init__(
        self,
        library: FlowchartLibrary,
        index: RetrievalIndex,
        embedder: Embedder,
        selector: Selector,
        classifier: Classifier,
        composer: ReplyComposer | None = None,
        config: EngineConfig | None = None,
        clock: Callable[[], str] | None = None,
    ) -> None:
        self.library = library
        self.index = index
        self.embedder = embedder
        self.selector = selector
        self.classifier = classifier
        self.composer = composer or TemplateComposer()
        self.config = config or EngineConfig()
        self.clock = clock or _default_clock

    # -- session lifecycle

    def start_session(self, demographics: Demographics | None = None) -> Session:
        session = Session(
            session_id=secrets.token_hex(16),
            created_at=self.clock(),
        )
        if demographics is not None:
            session.demographics = demographics
            session.phase = CollectingConcern()
            session.transcript.append(("nurse", ASK_CONCERN))
        else:
            session.transcript.append(("nurse", ASK_DEMOGRAPHICS))
        return session

    def submit_message(self, session: Session, text: str) -> TurnResult:
        """Process one patient message. Raises SessionClosed on finished
        sessions; on any other error the session is left untouched."""
        if session.closed:
            raise SessionClosed(f"session {session.session_id} is {session.phase.name}")
        if isinstance(session.phase, CollectingDemographics):
            return self._turn_demographics(session, text)
        if isinstance(session.phase, CollectingConcern):
            return self._turn_concern(session, text)
        assert isinstance(session.phase, Navigating)
        return self._turn_navigate(session, text)

    def switch_chart(self, session: Session, chart_id: str) -> TurnResult:
        """Swap the active chart. Only allowed while navigating and before
        the first recorded answer."""
        if not isinstance(session.phase, Navigating):
            raise SessionClosed("chart switching is only possible while navigating")
        if session.has_advanced:
            raise SessionClosed("chart can no longer be switched after the first answer")
        chart = self.library.get(chart_id)  # KeyError surfaces to the caller
        plan = self._walk(chart, chart.entry, 0)
        reply = self._assemble(
            [f"Okay, let's use: {chart.name}.", *plan.notices], self._closing_reply(plan)
        )
        self._apply_plan(session, plan)
        session.transcript.append(("nurse", reply))
        return TurnResult(reply, session)

    # -- per-phase turns

    def _turn_demographics(self, session: Session, text: str) -> TurnResult:
        demographics = parse_demographics_text(text)
        if demographics is None:
            reply = REASK_DEMOGRAPHICS
        else:
            session.demographics = demographics
            session.phase = CollectingConcern()
            reply = ASK_CONCERN
        session.transcript.append(("patient", text))
        session.transcript.append(("nurse", reply))
        return TurnResult(reply, session)

    def _turn_concern(self, session: Session, text: str) -> TurnResult:
        assert session.demographics is not None
        query_text = compose_query_text(session.demographics, text)
        candidates = search_text(
            self.index,
            query_text,
            self.config.candidate_count,
            self.embedder,
            library=self.library,
            demographics=session.demographics,
            applicability_filter=self.config.applicability_filter,
        )
        selection = select_flowchart(
            query_text, candidates, self.selector, self.config.shown_alternatives
        )
        if selection.no_flowchart:
            session.opening_statement = text
            session.selection = selection
            session.phase = NoFlowchartEscalation()
            session.transcript.append(("patient", text))
            session.transcript.append(("nurse", NO_CHART_REPLY))
            return TurnResult(NO_CHART_REPLY, session)

        chart = self.library.get(selection.flowchart_id)
        plan = self._walk(chart, chart.entry, 0)

        lead = [f"Based on what you told me, we'll go through: {chart.name}."]
        others = [
            c.name or c.flowchart_id
            for c in selection.candidates_shown
            if c.flowchart_id != selection.flowchart_id
        ]
        if others:
            lead.append("Other flowcharts that might be relevant: " + "; ".join(others) + ".")
        lead.extend(plan.notices)
        reply = self._assemble(lead, self._closing_reply(plan))

        session.opening_statement = text
        session.selection = selection
        self._apply_plan(session, plan)
        session.transcript.append(("patient", text))
        session.transcript.append(("nurse", reply))
        return TurnResult(reply, session)

    def _turn_navigate(self, session: Session, text: str) -> TurnResult:
        phase = session.phase
        assert isinstance(phase, Navigating)
        chart = self.library.get(phase.flowchart_id)
        node = chart.node(phase.node_id)
        verdict = classify_response(node.text, text, self.classifier)
        action = derive_action(verdict)
        entry = TrailEntry(
            turn_index=len(session.trail),
            flowchart_id=chart.id,
            node_id=node.id,
            question_text=node.text,
            utterance=text,
            verdict=verdict,
            action=action,
            timestamp=self.clock(),
        )

        if isinstance(action, Advance):
            successor = self._successor(chart, node.id, action.answer)
            plan = self._walk(chart, successor, phase.redirect_depth)
            reply = self._assemble(list(plan.notices), self._closing_reply(plan))
            session.trail.append(entry)
            self._apply_plan(session, plan)
        else:
            stuck = phase.consecutive_non_advances + 1
            if stuck >= self.config.stall_limit:
                reply = STALL_REPLY
                session.trail.append(entry)
                session.phase = StalledEscalation(flowchart_id=chart.id, node_id=node.id)
            else:
                mode = (
                    ComposeMode.CONFIRM
                    if isinstance(action, ConfirmUncertain)
                    else ComposeMode.REASK
                )
                reply = self.composer.compose(mode, node.text, require_verbatim=True)
                session.trail.append(entry)
                session.phase = Navigating(
                    flowchart_id=phase.flowchart_id,
                    node_id=phase.node_id,
                    consecutive_non_advances=stuck,
                    redirect_depth=phase.redirect_depth,
                )
        session.transcript.append(("patient", text))
        session.transcript.append(("nurse", reply))
        return TurnResult(reply, session)

    # -- plumbing

    def _successor(self, chart: Flowchart, node_id: str, answer: Condition) -> str:
        for edge in chart.edges:
            if edge.src == node_id and edge.condition is answer:
                return edge.dst
        raise UnresolvableRedirect(  # cannot happen on a validated chart
            f"no {answer.value} branch from {node_id} in chart {chart.id}"
        )

    def _walk(self, chart: Flowchart, node_id: str, redirect_depth: int) -> _WalkPlan:
        notices: list[str] = []
        current_chart = chart
        current_id = node_id
        depth = redirect_depth
        while True:
            node = current_chart.node(current_id)
            if node.kind in (NodeKind.QUESTION, NodeKind.ACTION):
                return _WalkPlan(tuple(notices), current_chart, node, depth)
            if node.kind is NodeKind.INFO:
                notices.append(node.text)
                for edge in current_chart.edges:
                    if edge.src == current_id and edge.condition is Condition.UNCONDITIONAL:
                        current_id = edge.dst
                        break
                continue
            # redirect
            assert node.target is not None
            depth += 1
            if depth > self.config.redirect_limit:
                raise RedirectDepthExceeded(
                    f"session would enter more than {self.config.redirect_limit} charts"
                )
            if node.target not in self.library:
                raise UnresolvableRedirect(
                    f"chart {current_chart.id!r} redirects to unavailable chart {node.target!r}"
                )
            current_chart = self.library.get(node.target)
            notices.append(f"Let's continue with: {current_chart.name}.")
            current_id = current_chart.entry

    def _closing_reply(self, plan: _WalkPlan) -> str:
        if plan.completed:
            return self.composer.compose(ComposeMode.CONVEY, plan.node.text)
        return self.composer.compose(ComposeMode.CONVEY, plan.node.text, require_verbatim=True)

    def _apply_plan(self, session: Session, plan: _WalkPlan) -> None:
        if plan.completed:
            session.phase = Completed(
                flowchart_id=plan.chart.id,
                terminal_node_id=plan.node.id,
                recommendation=plan.node.text,
            )
        else:
            session.phase = Navigating(
                flowchart_id=plan.chart.id,
                node_id=plan.node.id,
                consecutive_non_advances=0,
                redirect_depth=plan.redirect_depth,
            )

    @staticmethod
    def _assemble(lead: list[str], closing: str) -> str:
        parts = [p for p in lead if p]
        parts.append(closing)
        return "\n".join(parts)
