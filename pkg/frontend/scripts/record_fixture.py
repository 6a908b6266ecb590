"""Record real service traffic into the frontend contract fixture.

Drives the triageflow HTTP service in-process (no sockets) through the same
conversations the browser tests replay, capturing every request and response
verbatim. Run from the repository root after installing the Python package:

    python3 frontend/scripts/record_fixture.py

Three sessions are recorded: the main scripted walk with a chart switch, a
session against a selector that declines every chart (the seek-care path,
unreachable with the offline argmax selector), and a pediatric session for
the caregiver hint. Session ids and timestamps are pinned so re-recording
is byte-stable.
"""

from __future__ import annotations

import json
import secrets
from pathlib import Path
from typing import Any, Sequence

from fastapi.testclient import TestClient

from triageflow import (
    ArgmaxSelector,
    ConversationEngine,
    HashEmbedder,
    RuleBasedClassifier,
    build_index,
    load_library,
)
from triageflow.conversation import EngineConfig
from triageflow.fixtures import fixture_charts_dir
from triageflow.retrieval import NO_FLOWCHART_AVAILABLE
from triageflow.service import create_app

FIXTURE_PATH = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "recorded-conversation.json"

CONCERN = "I feel unwell with a headache and a slight fever"
SCRIPT = ("Maybe.", "No.", "Purple elephants dance quietly.", "Yes.")


class TickingClock:
    def __init__(self) -> None:
        self.count = 0

    def __call__(self) -> str:
        self.count += 1
        return f"2024-01-01T00:00:{self.count:02d}+00:00"


class RefusingSelector:
    """Declines every candidate; exercises the no-chart outcome."""

    offline = True

    def select(self, query_text: str, candidates: Sequence[Any]) -> str:
        return NO_FLOWCHART_AVAILABLE


class SequentialIds:
    """Replaces secrets.token_hex while recording so ids stay stable."""

    def __init__(self) -> None:
        self.count = 0
        self.original = secrets.token_hex

    def __enter__(self) -> "SequentialIds":
        def fake(nbytes: int = 32) -> str:
            self.count += 1
            return f"{self.count:0{2 * nbytes}x}"

        secrets.token_hex = fake
        return self

    def __exit__(self, *exc_info: object) -> None:
        secrets.token_hex = self.original


class Recorder:
    def __init__(self) -> None:
        self.exchanges: list[dict[str, Any]] = []

    def call(
        self,
        client: TestClient,
        method: str,
        path: str,
        body: dict[str, Any] | None = None,
    ) -> Any:
        if method == "GET":
            response = client.get(path)
        else:
            response = client.post(path, json=body)
        content_type = response.headers.get("content-type", "")
        exchange: dict[str, Any] = {
            "method": method,
            "path": path,
            "request": body,
            "status": response.status_code,
            "content_type": content_type,
        }
        if content_type.startswith("application/json"):
            exchange["response"] = response.json()
        else:
            exchange["response_text"] = response.text
        self.exchanges.append(exchange)
        return exchange


def make_engine(selector: Any) -> ConversationEngine:
    library, report = load_library(fixture_charts_dir())
    assert report.ok, "bundled corpus failed validation"
    embedder = HashEmbedder()
    return ConversationEngine(
        library=library,
        index=build_index(library, embedder),
        embedder=embedder,
        selector=selector,
        classifier=RuleBasedClassifier(),
        # A four-wide shortlist puts the agent's pick plus three true
        # alternatives in front of the user at selection time.
        config=EngineConfig(shown_alternatives=4),
        clock=TickingClock(),
    )


def record() -> dict[str, Any]:
    recorder = Recorder()
    sessions: dict[str, str] = {}

    with SequentialIds():
        client = TestClient(create_app(make_engine(ArgmaxSelector())))
        recorder.call(client, "GET", "/flowcharts")

        # Main walk: demographics at creation, concern, switch to an
        # alternative, then uncertain / no / off-topic / yes to completion,
        # ending with one message past the close for the 409.
        created = recorder.call(
            client,
            "POST",
            "/sessions",
            {"sex": "male", "age_value": 35, "age_unit": "years"},
        )
        main_id = created["response"]["session"]["session_id"]
        sessions["main"] = main_id
        recorder.call(client, "POST", f"/sessions/{main_id}/messages", {"text": CONCERN})
        recorder.call(client, "GET", f"/sessions/{main_id}/trail")
        recorder.call(
            client,
            "POST",
            f"/sessions/{main_id}/chart",
            {"flowchart_id": "feeling-generally-ill"},
        )
        recorder.call(client, "GET", f"/sessions/{main_id}/trail")
        for line in SCRIPT:
            recorder.call(client, "POST", f"/sessions/{main_id}/messages", {"text": line})
            recorder.call(client, "GET", f"/sessions/{main_id}/trail")
        recorder.call(client, "POST", f"/sessions/{main_id}/messages", {"text": "Hello?"})

        # No chart fits: demographics arrive as a chat message here, so the
        # in-session demographics form is exercised too.
        refusing = TestClient(create_app(make_engine(RefusingSelector())))
        created = recorder.call(refusing, "POST", "/sessions", {})
        no_chart_id = created["response"]["session"]["session_id"]
        sessions["no_chart"] = no_chart_id
        recorder.call(
            refusing, "POST", f"/sessions/{no_chart_id}/messages", {"text": "female, 30 years"}
        )
        recorder.call(refusing, "GET", f"/sessions/{no_chart_id}/trail")
        recorder.call(
            refusing,
            "POST",
            f"/sessions/{no_chart_id}/messages",
            {"text": "My elbow itches when I think about Tuesdays"},
        )
        recorder.call(refusing, "GET", f"/sessions/{no_chart_id}/trail")

        # Pediatric session: only the creation matters (caregiver hint).
        created = recorder.call(
            client,
            "POST",
            "/sessions",
            {"sex": "male", "age_value": 6, "age_unit": "months"},
        )
        sessions["pediatric"] = created["response"]["session"]["session_id"]

    return {
        "note": "Recorded from the triageflow HTTP service by scripts/record_fixture.py; regenerate rather than editing by hand.",
        "sessions": sessions,
        "exchanges": recorder.exchanges,
    }


def main() -> None:
    fixture = record()
    FIXTURE_PATH.parent.mkdir(parents=True, exist_ok=True)
    FIXTURE_PATH.write_text(json.dumps(fixture, indent=2) + "\n", encoding="utf-8")
    print(f"wrote {FIXTURE_PATH} ({len(fixture['exchanges'])} exchanges)")


if __name__ == "__main__":
    main()
