"""Reading a patient utterance against the current question.

Every utterance is judged on four axes: is it on topic, does it answer the
question, what is the answer, and does it sound uncertain. The verdict is
then mapped to exactly one navigation action. Two classifier backends exist:
a provider-backed one that parses structured JSON output, and a rule-based
one (lexicons plus token overlap) that is deterministic, free, and offline.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from typing import Any, Mapping, Protocol, Union

from .errors import ClassifierFailure, MalformedStructuredOutput
from .flowcharts import Condition
from .gateway import TEMPERATURE_DECISION, TextProvider, render_prompt


@dataclass(frozen=True)
class AxisVerdict:
    """The four-axis reading of one utterance.

    ``actual_answer`` of None means no answer was given. A verdict claiming
    is_answered without an answer is contradictory and refuses to exist.
    """

    is_on_topic: bool
    is_answered: bool
    actual_answer: Condition | None  # YES or NO; None when absent
    is_uncertain: bool

    def __post_init__(self) -> None:
        if self.is_answered and self.actual_answer is None:
            raise MalformedStructuredOutput("is_answered without an actual answer")
        if self.actual_answer is Condition.UNCONDITIONAL:
            raise MalformedStructuredOutput("actual_answer must be yes, no, or absent")

    def to_wire(self) -> dict[str, str | None]:
        def yn(flag: bool) -> str:
            return "Yes" if flag else "No"

        answer = None
        if self.actual_answer is not None:
            answer = "Yes" if self.actual_answer is Condition.YES else "No"
        return {
            "isOnTopic": yn(self.is_on_topic),
            "isAnswered": yn(self.is_answered),
            "actualAnswer": answer,
            "isUncertain": yn(self.is_uncertain),
        }


_CANONICAL_FIELDS = {
    "isontopic": "is_on_topic",
    "isanswered": "is_answered",
    "actualanswer": "actual_answer",
    "isuncertain": "is_uncertain",
}

_ABSENT_STRINGS = {"", "null", "none", "n/a", "na", "absent"}


def _fold_key(key: str) -> str:
    return re.sub(r"[^a-z]", "", key.lower())


def _parse_flag(value: Any, field: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered == "yes":
            return True
        if lowered == "no":
            return False
    raise MalformedStructuredOutput(f"{field} must be Yes or No, got {value!r}")


def _parse_answer(value: Any) -> Condition | None:
    if value is None or (isinstance(value, str) and value.strip().lower() in _ABSENT_STRINGS):
        return None
    if isinstance(value, bool):
        return Condition.YES if value else Condition.NO
    if isinstance(value, str):
        lowered = value.strip().lower()
        if lowered == "yes":
            return Condition.YES
        if lowered == "no":
            return Condition.NO
    raise MalformedStructuredOutput(f"actualAnswer must be Yes, No, or null, got {value!r}")


def _extract_json_object(text: str) -> Mapping[str, Any]:
    cleaned = re.sub(r"```[a-zA-Z]*", "", text).replace("```", "")
    decoder = json.JSONDecoder()
    for start in range(len(cleaned)):
        if cleaned[start] != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(cleaned[start:])
        except ValueError:
            continue
        if isinstance(obj, Mapping):
            return obj
    raise MalformedStructuredOutput("no JSON object found in classifier output")


def parse_verdict(payload: str | Mapping[str, Any]) -> AxisVerdict:
    """Parse the wire form. Field names are matched case-insensitively
    (``isOnTopic``, ``is_on_topic`` and friends); values Yes/No likewise.
    Missing fields, surplus fields, or non-answer values are malformed.
    """
    obj = _extract_json_object(payload) if isinstance(payload, str) else payload
    seen: dict[str, Any] = {}
    for key, value in obj.items():
        canonical = _CANONICAL_FIELDS.get(_fold_key(str(key)))
        if canonical is None:
            raise MalformedStructuredOutput(f"unexpected field {key!r}")
        if canonical in seen:
            raise MalformedStructuredOutput(f"field {key!r} appears twice")
        seen[canonical] = value
    missing = sorted(set(_CANONICAL_FIELDS.values()) - set(seen))
    if missing:
        raise MalformedStructuredOutput(f"missing fields {missing}")
    return AxisVerdict(
        is_on_topic=_parse_flag(seen["is_on_topic"], "isOnTopic"),
        is_answered=_parse_flag(seen["is_answered"], "isAnswered"),
        actual_answer=_parse_answer(seen["actual_answer"]),
        is_uncertain=_parse_flag(seen["is_uncertain"], "isUncertain"),
    )


# ---------------------------------------------------------------------------
# Navigation actions


@dataclass(frozen=True)
class Advance:
    answer: Condition  # YES or NO
    kind: str = "advance"


@dataclass(frozen=True)
class RestateOffTopic:
    kind: str = "restate_off_topic"


@dataclass(frozen=True)
class ConfirmUncertain:
    kind: str = "confirm_uncertain"


@dataclass(frozen=True)
class Clarify:
    kind: str = "clarify"


NavigationAction = Union[Advance, RestateOffTopic, ConfirmUncertain, Clarify]


def derive_action(verdict: AxisVerdict) -> NavigationAction:
    """Map a verdict to the single thing the conversation does next.

    Priority order matters and is fixed: topic first, then uncertainty,
    then a usable answer, and a clarification request as the fallback.
    The session only ever advances on a certain, on-topic yes or no.
    """
    if not verdict.is_on_topic:
        return RestateOffTopic()
    if verdict.is_uncertain:
        return ConfirmUncertain()
    if verdict.is_answered and verdict.actual_answer is not None:
        return Advance(answer=verdict.actual_answer)
    return Clarify()


def action_to_dict(action: NavigationAction) -> dict[str, str]:
    if isinstance(action, Advance):
        return {"kind": action.kind, "answer": action.answer.value}
    return {"kind": action.kind}


def action_from_dict(data: Mapping[str, Any]) -> NavigationAction:
    kind = data.get("kind")
    if kind == "advance":
        return Advance(answer=Condition(data["answer"]))
    if kind == "restate_off_topic":
        return RestateOffTopic()
    if kind == "confirm_uncertain":
        return ConfirmUncertain()
    if kind == "clarify":
        return Clarify()
    raise ValueError(f"unknown action kind {kind!r}")


# ---------------------------------------------------------------------------
# Rule-based classification


HEDGE_PHRASES: tuple[str, ...] = (
    "not sure",
    "maybe",
    "i guess",
    "possibly",
    "i doubt",
    "kind of",
    "i don't know",
    "probably",
    "it depends",
)

YES_PHRASES: tuple[str, ...] = (
    "yes",
    "yeah",
    "yep",
    "uh-huh",
    "absolutely",
    "definitely",
    "that's right",
    "for sure",
)

NO_PHRASES: tuple[str, ...] = (
    "no",
    "nope",
    "not at all",
    "never",
    "negative",
)

STOPWORDS: frozenset[str] = frozenset(
    """
    a about above after again all am an and any are as at be because been
    before being below between both but by could did do does doing down
    during each few for from further had has have having he her here hers
    herself him himself his how i if in into is it its itself just me more
    most my myself no nor not now of off on once only or other our ours
    ourselves out over own same she should so some such than that the their
    theirs them themselves then there these they this those through to too
    under until up very was we were what when where which while who whom why
    will with you your yours yourself yourselves
    """.split()
)

_WORD_RE = re.compile(r"[a-z0-9]+")


def _tokens(text: str) -> list[str]:
    return _WORD_RE.findall(text.lower())


def _phrase_tokens(phrases: tuple[str, ...]) -> list[tuple[str, ...]]:
    return [tuple(_tokens(p)) for p in phrases]


_HEDGE_TOKENS = _phrase_tokens(HEDGE_PHRASES)
_YES_TOKENS = _phrase_tokens(YES_PHRASES)
_NO_TOKENS = _phrase_tokens(NO_PHRASES)


def _matches_at(tokens: list[str], position: int, phrase: tuple[str, ...]) -> bool:
    end = position + len(phrase)
    return end <= len(tokens) and tuple(tokens[position:end]) == phrase


def _contains_phrase(tokens: list[str], phrases: list[tuple[str, ...]]) -> bool:
    return any(
        _matches_at(tokens, i, phrase) for i in range(len(tokens)) for phrase in phrases
    )


def _earliest_polarity(tokens: list[str]) -> Condition | None:
    """First yes- or no-phrase by token position; longer phrases win a tie."""
    for i in range(len(tokens)):
        best: tuple[int, Condition] | None = None
        for phrase in _YES_TOKENS:
            if _matches_at(tokens, i, phrase) and (best is None or len(phrase) > best[0]):
                best = (len(phrase), Condition.YES)
        for phrase in _NO_TOKENS:
            if _matches_at(tokens, i, phrase) and (best is None or len(phrase) > best[0]):
                best = (len(phrase), Condition.NO)
        if best is not None:
            return best[1]
    return None


def rule_based_classify(question: str, response: str) -> AxisVerdict:
    """Deterministic classifier over fixed lexicons.

    A response is on topic when it carries a polarity word, a hedge, or at
    least one content token shared with the question. It counts as answered
    exactly when a polarity phrase matched; the earliest match in the text
    supplies the answer. Any hedge phrase marks it uncertain.
    """
    response_tokens = _tokens(response)
    hedged = _contains_phrase(response_tokens, _HEDGE_TOKENS)
    polarity = _earliest_polarity(response_tokens)
    question_content = set(_tokens(question)) - STOPWORDS
    response_content = set(response_tokens) - STOPWORDS
    overlap = question_content & response_content
    on_topic = polarity is not None or hedged or bool(overlap)
    return AxisVerdict(
        is_on_topic=on_topic,
        is_answered=polarity is not None,
        actual_answer=polarity,
        is_uncertain=hedged,
    )


# ---------------------------------------------------------------------------
# Classifier backends


class Classifier(Protocol):
    def classify(self, question: str, response: str) -> AxisVerdict: ...


class RuleBasedClassifier:
    offline = True

    def classify(self, question: str, response: str) -> AxisVerdict:
        return rule_based_classify(question, response)


class LlmClassifier:
    """Provider-backed classifier. One retry on malformed output, then raise."""

    offline = False

    def __init__(self, provider: TextProvider, max_malformed_retries: int = 1) -> None:
        self._provider = provider
        self._retries = max_malformed_retries

    def classify(self, question: str, response: str) -> AxisVerdict:
        prompt = render_prompt("decision_agent", question=question, response=response)
        last: MalformedStructuredOutput | None = None
        for _ in range(self._retries + 1):
            raw = self._provider.generate(prompt, temperature=TEMPERATURE_DECISION)
            try:
                return parse_verdict(raw)
            except MalformedStructuredOutput as exc:
                last = exc
        assert last is not None
        raise ClassifierFailure(f"classifier output stayed malformed after retry: {last}")


def classify_response(question: str, response: str, classifier: Classifier) -> AxisVerdict:
    return classifier.classify(question, response)
