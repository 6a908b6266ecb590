"""Flowchart-guided conversational self-triage.

The package parses and validates flowchart decision graphs, retrieves the
right chart for a patient's opening statement, walks it one question per
conversational turn with four-axis answer interpretation, and ships the
evaluation harness, HTTP service and CLI around that core.
"""

from .conversation import (
    ConversationEngine,
    EngineConfig,
    LlmComposer,
    Session,
    TemplateComposer,
    TrailEntry,
    TurnResult,
    trail_to_jsonl,
)
from .errors import TriageError
from .flowcharts import (
    Applicability,
    Condition,
    Edge,
    Flowchart,
    FlowchartLibrary,
    Node,
    NodeKind,
    RuleCode,
    Sex,
    ValidationReport,
    enumerate_paths,
    load_library,
    parse_flowchart,
    parse_flowchart_json,
    serialize_flowchart,
    validate,
)
from .gateway import (
    HashEmbedder,
    HttpTextProvider,
    ProviderConfig,
    hash_embed,
    provider_configured,
    render_prompt,
)
from .interpretation import (
    AxisVerdict,
    LlmClassifier,
    RuleBasedClassifier,
    derive_action,
    parse_verdict,
)
from .retrieval import (
    ArgmaxSelector,
    Demographics,
    LlmSelector,
    Query,
    RetrievalIndex,
    build_index,
    compose_query_text,
    load_index,
    save_index,
    search,
    select_flowchart,
)
from .service import FileSessionStore, MemorySessionStore, create_app

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Applicability",
    "ArgmaxSelector",
    "AxisVerdict",
    "Condition",
    "ConversationEngine",
    "Demographics",
    "Edge",
    "EngineConfig",
    "FileSessionStore",
    "Flowchart",
    "FlowchartLibrary",
    "HashEmbedder",
    "HttpTextProvider",
    "LlmClassifier",
    "LlmComposer",
    "LlmSelector",
    "MemorySessionStore",
    "Node",
    "NodeKind",
    "ProviderConfig",
    "Query",
    "RetrievalIndex",
    "RuleBasedClassifier",
    "RuleCode",
    "Session",
    "Sex",
    "TemplateComposer",
    "TrailEntry",
    "TriageError",
    "TurnResult",
    "ValidationReport",
    "build_index",
    "compose_query_text",
    "create_app",
    "derive_action",
    "enumerate_paths",
    "hash_embed",
    "load_index",
    "load_library",
    "parse_flowchart",
    "parse_flowchart_json",
    "parse_verdict",
    "provider_configured",
    "render_prompt",
    "save_index",
    "search",
    "select_flowchart",
    "serialize_flowchart",
    "trail_to_jsonl",
    "validate",
]
