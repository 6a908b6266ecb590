"""Flowchart model: documents, parsing, validation, path enumeration, library.

A flowchart is a rooted DAG of typed nodes. Question nodes branch on a
yes/no answer, info nodes chain unconditionally into a redirect, and
action or redirect nodes end the walk (a redirect continues the session
in another chart, but ends the path within this one).

Node ids follow a kind-prefix convention: ``N`` question, ``F`` redirect,
``A`` action, ``I`` info.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Mapping

from .errors import (
    DuplicateNodeId,
    EmptyLibrary,
    FlowchartParseError,
    InvalidFlowchart,
    UnknownNodeKindPrefix,
)


class NodeKind(str, Enum):
    QUESTION = "question"
    REDIRECT = "redirect"
    ACTION = "action"
    INFO = "info"


KIND_PREFIXES: dict[str, NodeKind] = {
    "N": NodeKind.QUESTION,
    "F": NodeKind.REDIRECT,
    "A": NodeKind.ACTION,
    "I": NodeKind.INFO,
}


class Condition(str, Enum):
    YES = "yes"
    NO = "no"
    UNCONDITIONAL = "unconditional"


class Sex(str, Enum):
    FEMALE = "female"
    MALE = "male"


MAX_AGE_MONTHS = 1440  # 120 years; ages beyond this are treated as input errors


def _format_age(months: int) -> str:
    if months % 12 == 0 and months >= 12:
        years = months // 12
        return f"{years} year" if years == 1 else f"{years} years"
    return "1 month" if months == 1 else f"{months} months"


@dataclass(frozen=True)
class Applicability:
    """Who a chart is written for: allowed sexes and an age window in months.

    ``age_max_months`` of ``None`` means no upper bound.
    """

    sexes: frozenset[Sex]
    age_min_months: int
    age_max_months: int | None

    def contains(self, sex: Sex, age_months: int) -> bool:
        if sex not in self.sexes:
            return False
        if age_months < self.age_min_months:
            return False
        if self.age_max_months is not None and age_months > self.age_max_months:
            return False
        return True

    def phrase(self) -> str:
        """Human wording used in retrieval documents, e.g. 'All ages - Male and Female'."""
        if self.age_min_months == 0 and self.age_max_months is None:
            ages = "All ages"
        elif self.age_max_months is None:
            ages = f"Over {_format_age(self.age_min_months)}"
        elif self.age_min_months == 0:
            ages = f"Up to {_format_age(self.age_max_months)}"
        else:
            ages = f"{_format_age(self.age_min_months)} to {_format_age(self.age_max_months)}"
        if self.sexes == frozenset({Sex.MALE, Sex.FEMALE}):
            sexes = "Male and Female"
        elif self.sexes == frozenset({Sex.MALE}):
            sexes = "Male"
        else:
            sexes = "Female"
        return f"{ages} - {sexes}"


@dataclass(frozen=True)
class Node:
    id: str
    kind: NodeKind
    text: str
    target: str | None = None  # redirect nodes: id of the chart to continue in


@dataclass(frozen=True)
class Edge:
    src: str
    dst: str
    condition: Condition


@dataclass(frozen=True)
class Flowchart:
    """One parsed flowchart document. Treat as immutable after parse."""

    id: str
    name: str
    description: str
    specialty: str
    applicability: Applicability
    entry: str
    nodes: Mapping[str, Node]  # insertion order mirrors the document
    edges: tuple[Edge, ...]
    external_targets: frozenset[str] = frozenset()

    def node(self, node_id: str) -> Node:
        try:
            return self.nodes[node_id]
        except KeyError:
            raise InvalidFlowchart(f"chart {self.id!r} has no node {node_id!r}") from None

    def outgoing(self, node_id: str) -> list[Edge]:
        return [e for e in self.edges if e.src == node_id]

    def question_nodes(self) -> list[Node]:
        return [n for n in self.nodes.values() if n.kind is NodeKind.QUESTION]

    def description_text(self) -> str:
        """The string a retrieval index embeds for this chart."""
        return f"{self.name} ({self.applicability.phrase()}): {self.description}"


# ---------------------------------------------------------------------------
# Parsing


_TOP_KEYS_REQUIRED = (
    "id",
    "name",
    "description",
    "specialty",
    "applicability",
    "entry",
    "nodes",
    "edges",
)
_TOP_KEYS_OPTIONAL = ("external_targets",)


def _reject_unknown_keys(obj: Mapping[str, Any], allowed: tuple[str, ...], locus: str) -> None:
    unknown = sorted(set(obj) - set(allowed))
    if unknown:
        raise FlowchartParseError(f"unknown keys {unknown}", locus)


def _require_str(obj: Mapping[str, Any], key: str, locus: str, allow_empty: bool = False) -> str:
    value = obj.get(key)
    if not isinstance(value, str) or (not allow_empty and not value.strip()):
        raise FlowchartParseError(f"{key!r} must be a non-empty string", locus)
    return value


def _parse_applicability(obj: Any, locus: str) -> Applicability:
    if not isinstance(obj, Mapping):
        raise FlowchartParseError("'applicability' must be an object", locus)
    _reject_unknown_keys(obj, ("sexes", "age_min_months", "age_max_months"), locus)
    for key in ("sexes", "age_min_months", "age_max_months"):
        if key not in obj:
            raise FlowchartParseError(f"missing key {key!r}", locus)
    raw_sexes = obj["sexes"]
    if not isinstance(raw_sexes, list) or not raw_sexes:
        raise FlowchartParseError("'sexes' must be a non-empty array", locus)
    sexes: set[Sex] = set()
    for item in raw_sexes:
        if not isinstance(item, str) or item.lower() not in ("male", "female"):
            raise FlowchartParseError(f"unknown sex {item!r}", f"{locus}.sexes")
        sexes.add(Sex(item.lower()))
    age_min = obj["age_min_months"]
    if not isinstance(age_min, int) or isinstance(age_min, bool) or age_min < 0:
        raise FlowchartParseError("'age_min_months' must be a non-negative integer", locus)
    age_max = obj["age_max_months"]
    if age_max is not None:
        if not isinstance(age_max, int) or isinstance(age_max, bool) or age_max < age_min:
            raise FlowchartParseError(
                "'age_max_months' must be null or an integer >= age_min_months", locus
            )
    return Applicability(frozenset(sexes), age_min, age_max)


def _parse_node(obj: Any, index: int) -> Node:
    locus = f"nodes[{index}]"
    if not isinstance(obj, Mapping):
        raise FlowchartParseError("node entries must be objects", locus)
    _reject_unknown_keys(obj, ("id", "kind", "text", "target"), locus)
    node_id = _require_str(obj, "id", locus)
    if node_id[0] not in KIND_PREFIXES:
        raise UnknownNodeKindPrefix(
            f"node id {node_id!r} does not start with one of N/F/A/I", locus
        )
    raw_kind = obj.get("kind")
    try:
        kind = NodeKind(raw_kind)
    except ValueError:
        raise FlowchartParseError(f"unknown node kind {raw_kind!r}", locus) from None
    text = _require_str(obj, "text", locus)
    target = obj.get("target")
    if kind is NodeKind.REDIRECT:
        if not isinstance(target, str) or not target.strip():
            raise FlowchartParseError("redirect nodes require a 'target' chart id", locus)
    elif target is not None:
        raise FlowchartParseError(f"{kind.value} nodes must not carry 'target'", locus)
    return Node(id=node_id, kind=kind, text=text, target=target)


def _parse_edge(obj: Any, index: int) -> Edge:
    locus = f"edges[{index}]"
    if not isinstance(obj, Mapping):
        raise FlowchartParseError("edge entries must be objects", locus)
    _reject_unknown_keys(obj, ("from", "to", "condition"), locus)
    src = _require_str(obj, "from", locus)
    dst = _require_str(obj, "to", locus)
    raw_condition = obj.get("condition")
    try:
        condition = Condition(raw_condition)
    except ValueError:
        raise FlowchartParseError(f"unknown edge condition {raw_condition!r}", locus) from None
    return Edge(src=src, dst=dst, condition=condition)


def parse_flowchart(document: Mapping[str, Any], source: str | None = None) -> Flowchart:
    """Turn one JSON-shaped document into a Flowchart.

    Raises FlowchartParseError (or a subclass) on any shape problem. Graph
    level problems such as missing branches are left to ``validate``.
    """

    prefix = f"{source}: " if source else ""
    if not isinstance(document, Mapping):
        raise FlowchartParseError(f"{prefix}document must be an object")
    try:
        _reject_unknown_keys(document, _TOP_KEYS_REQUIRED + _TOP_KEYS_OPTIONAL, "document")
        for key in _TOP_KEYS_REQUIRED:
            if key not in document:
                raise FlowchartParseError(f"missing key {key!r}", "document")
        chart_id = _require_str(document, "id", "document")
        name = _require_str(document, "name", "document")
        description = _require_str(document, "description", "document")
        specialty = _require_str(document, "specialty", "document")
        entry = _require_str(document, "entry", "document")
        applicability = _parse_applicability(document["applicability"], "applicability")
        raw_nodes = document["nodes"]
        if not isinstance(raw_nodes, list) or not raw_nodes:
            raise FlowchartParseError("'nodes' must be a non-empty array", "document")
        nodes: dict[str, Node] = {}
        for i, raw in enumerate(raw_nodes):
            node = _parse_node(raw, i)
            if node.id in nodes:
                raise DuplicateNodeId(f"node id {node.id!r} appears twice", f"nodes[{i}]")
            nodes[node.id] = node
        raw_edges = document["edges"]
        if not isinstance(raw_edges, list):
            raise FlowchartParseError("'edges' must be an array", "document")
        edges = tuple(_parse_edge(raw, i) for i, raw in enumerate(raw_edges))
        raw_external = document.get("external_targets", [])
        if not isinstance(raw_external, list) or any(
            not isinstance(t, str) or not t for t in raw_external
        ):
            raise FlowchartParseError(
                "'external_targets' must be an array of chart ids", "document"
            )
        return Flowchart(
            id=chart_id,
            name=name,
            description=description,
            specialty=specialty,
            applicability=applicability,
            entry=entry,
            nodes=nodes,
            edges=edges,
            external_targets=frozenset(raw_external),
        )
    except FlowchartParseError as exc:
        if prefix and not str(exc).startswith(prefix.rstrip()):
            exc.args = (f"{prefix}{exc.args[0]}",) + exc.args[1:]
        raise


def parse_flowchart_json(text: str, source: str | None = None) -> Flowchart:
    try:
        document = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FlowchartParseError(
            f"{source + ': ' if source else ''}invalid JSON: {exc.msg}",
            f"line {exc.lineno} column {exc.colno}",
        ) from None
    return parse_flowchart(document, source=source)


def serialize_flowchart(chart: Flowchart) -> dict[str, Any]:
    """Inverse of parse_flowchart, preserving node and edge order."""
    doc: dict[str, Any] = {
        "id": chart.id,
        "name": chart.name,
        "description": chart.description,
        "specialty": chart.specialty,
        "applicability": {
            "sexes": sorted(s.value for s in chart.applicability.sexes),
            "age_min_months": chart.applicability.age_min_months,
            "age_max_months": chart.applicability.age_max_months,
        },
        "entry": chart.entry,
        "nodes": [
            {
                "id": n.id,
                "kind": n.kind.value,
                "text": n.text,
                **({"target": n.target} if n.target is not None else {}),
            }
            for n in chart.nodes.values()
        ],
        "edges": [
            {"from": e.src, "to": e.dst, "condition": e.condition.value} for e in chart.edges
        ],
    }
    if chart.external_targets:
        doc["external_targets"] = sorted(chart.external_targets)
    return doc


# ---------------------------------------------------------------------------
# Validation


class RuleCode(str, Enum):
    ENTRY_INVALID = "EntryInvalid"
    MISSING_BRANCH = "MissingBranch"
    EXTRA_BRANCH = "ExtraBranch"
    ACTION_HAS_OUT_EDGE = "ActionHasOutEdge"
    REDIRECT_HAS_OUT_EDGE = "RedirectHasOutEdge"
    INFO_EDGE_INVALID = "InfoEdgeInvalid"
    CYCLE_DETECTED = "CycleDetected"
    UNREACHABLE_NODE = "UnreachableNode"
    UNKNOWN_EDGE_ENDPOINT = "UnknownEdgeEndpoint"
    UNRESOLVED_REDIRECT = "UnresolvedRedirect"
    KIND_PREFIX_MISMATCH = "KindPrefixMismatch"


@dataclass(frozen=True)
class Finding:
    code: RuleCode
    where: str
    message: str

    def __str__(self) -> str:
        return f"{self.code.value} at {self.where}: {self.message}"


@dataclass
class ValidationReport:
    chart_id: str
    errors: list[Finding] = field(default_factory=list)
    warnings: list[Finding] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors

    def codes(self) -> set[str]:
        return {f.code.value for f in self.errors}


def validate(chart: Flowchart, library: "FlowchartLibrary | None" = None) -> ValidationReport:
    """Check every graph rule. With ``library`` given, redirect targets must
    resolve there unless declared external; without it, resolution is skipped
    so the structural rules can be checked for a chart in isolation.
    """

    report = ValidationReport(chart_id=chart.id)
    errors = report.errors

    def err(code: RuleCode, where: str, message: str) -> None:
        errors.append(Finding(code, where, message))

    # Entry must name a real node and be a root.
    entry_ok = chart.entry in chart.nodes
    if not entry_ok:
        err(RuleCode.ENTRY_INVALID, "entry", f"entry {chart.entry!r} is not a node")

    # Edges with unknown endpoints are reported once per bad endpoint and
    # excluded from every check below.
    usable_edges: list[Edge] = []
    for i, edge in enumerate(chart.edges):
        bad = False
        for endpoint in (edge.src, edge.dst):
            if endpoint not in chart.nodes:
                err(
                    RuleCode.UNKNOWN_EDGE_ENDPOINT,
                    f"edges[{i}]",
                    f"edge {edge.src!r} -> {edge.dst!r} references unknown node {endpoint!r}",
                )
                bad = True
        if not bad:
            usable_edges.append(edge)

    if entry_ok and any(e.dst == chart.entry for e in usable_edges):
        err(RuleCode.ENTRY_INVALID, "entry", f"entry {chart.entry!r} has incoming edges")

    outgoing: dict[str, list[Edge]] = {node_id: [] for node_id in chart.nodes}
    for edge in usable_edges:
        outgoing[edge.src].append(edge)

    for node in chart.nodes.values():
        expected_kind = KIND_PREFIXES[node.id[0]]
        if expected_kind is not node.kind:
            err(
                RuleCode.KIND_PREFIX_MISMATCH,
                node.id,
                f"id prefix says {expected_kind.value}, node declares {node.kind.value}",
            )
        out = outgoing[node.id]
        if node.kind is NodeKind.QUESTION:
            yes = [e for e in out if e.condition is Condition.YES]
            no = [e for e in out if e.condition is Condition.NO]
            other = [e for e in out if e.condition is Condition.UNCONDITIONAL]
            if not yes:
                err(RuleCode.MISSING_BRANCH, node.id, "question has no Yes branch")
            if not no:
                err(RuleCode.MISSING_BRANCH, node.id, "question has no No branch")
            if len(yes) > 1 or len(no) > 1 or other:
                err(
                    RuleCode.EXTRA_BRANCH,
                    node.id,
                    "question must have exactly one Yes and one No branch",
                )
        elif node.kind is NodeKind.ACTION:
            if out:
                err(RuleCode.ACTION_HAS_OUT_EDGE, node.id, "action nodes are terminal")
        elif node.kind is NodeKind.REDIRECT:
            if out:
                err(RuleCode.REDIRECT_HAS_OUT_EDGE, node.id, "redirect nodes are terminal")
        else:  # info
            valid_chain = (
                len(out) == 1
                and out[0].condition is Condition.UNCONDITIONAL
                and chart.nodes[out[0].dst].kind is NodeKind.REDIRECT
            )
            if not valid_chain:
                err(
                    RuleCode.INFO_EDGE_INVALID,
                    node.id,
                    "info nodes need exactly one unconditional edge to a redirect",
                )

    cycle = _find_cycle(chart.nodes, usable_edges)
    if cycle:
        err(RuleCode.CYCLE_DETECTED, cycle[0], "cycle: " + " -> ".join(cycle))

    if entry_ok:
        reached = _reachable_from(chart.entry, usable_edges)
        for node_id in chart.nodes:
            if node_id not in reached:
                err(RuleCode.UNREACHABLE_NODE, node_id, "not reachable from the entry node")

    for node in chart.nodes.values():
        if node.kind is not NodeKind.REDIRECT:
            continue
        assert node.target is not None
        if node.target in chart.external_targets:
            report.warnings.append(
                Finding(
                    RuleCode.UNRESOLVED_REDIRECT,
                    node.id,
                    f"target {node.target!r} declared external",
                )
            )
        elif library is not None and node.target not in library:
            err(
                RuleCode.UNRESOLVED_REDIRECT,
                node.id,
                f"target {node.target!r} not in library and not declared external",
            )

    return report


def _reachable_from(start: str, edges: list[Edge]) -> set[str]:
    adjacency: dict[str, list[str]] = {}
    for edge in edges:
        adjacency.setdefault(edge.src, []).append(edge.dst)
    seen = {start}
    stack = [start]
    while stack:
        for nxt in adjacency.get(stack.pop(), ()):
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def _find_cycle(nodes: Mapping[str, Node], edges: list[Edge]) -> list[str] | None:
    """Return one cycle as a node id list (first id repeated at the end), or None."""
    adjacency: dict[str, list[str]] = {node_id: [] for node_id in nodes}
    for edge in edges:
        adjacency[edge.src].append(edge.dst)
    WHITE, GREY, BLACK = 0, 1, 2
    colour = {node_id: WHITE for node_id in nodes}
    parent: dict[str, str] = {}

    for root in nodes:
        if colour[root] != WHITE:
            continue
        stack: list[tuple[str, Iterator[str]]] = [(root, iter(adjacency[root]))]
        colour[root] = GREY
        while stack:
            node_id, children = stack[-1]
            advanced = False
            for child in children:
                if colour[child] == GREY:
                    trail = [node_id]
                    cursor = node_id
                    while cursor != child:
                        cursor = parent[cursor]
                        trail.append(cursor)
                    trail.reverse()  # child ... node_id
                    trail.append(child)  # close the loop
                    return trail
                if colour[child] == WHITE:
                    colour[child] = GREY
                    parent[child] = node_id
                    stack.append((child, iter(adjacency[child])))
                    advanced = True
                    break
            if not advanced:
                colour[node_id] = BLACK
                stack.pop()
    return None


# ---------------------------------------------------------------------------
# Path enumeration


@dataclass(frozen=True)
class PathStep:
    node_id: str
    condition: Condition  # YES/NO at questions, UNCONDITIONAL through info nodes


@dataclass(frozen=True)
class PathTrace:
    steps: tuple[PathStep, ...]
    terminal: str  # id of the action or redirect node the walk ends on

    def question_answers(self) -> tuple[tuple[str, Condition], ...]:
        return tuple(
            (s.node_id, s.condition)
            for s in self.steps
            if s.condition is not Condition.UNCONDITIONAL
        )

    def describe(self) -> str:
        parts = [
            f"{s.node_id}={'Yes' if s.condition is Condition.YES else 'No'}"
            for s in self.steps
            if s.condition is not Condition.UNCONDITIONAL
        ]
        return " ".join(parts) + f" -> {self.terminal}" if parts else f"-> {self.terminal}"


def enumerate_paths(chart: Flowchart) -> list[PathTrace]:
    """Every root-to-terminal path, depth first, Yes explored before No.

    Two graph paths that share an answer sequence (branches that merge and
    split again) are one path here: a path is identified by its sequence of
    question answers, not by edges.
    """

    structural = validate(chart, library=None)
    if not structural.ok:
        raise InvalidFlowchart(
            f"chart {chart.id!r} fails validation: " + ", ".join(sorted(structural.codes()))
        )

    by_condition: dict[tuple[str, Condition], str] = {}
    for edge in chart.edges:
        by_condition[(edge.src, edge.condition)] = edge.dst

    paths: list[PathTrace] = []

    def walk(node_id: str, steps: tuple[PathStep, ...]) -> None:
        node = chart.nodes[node_id]
        if node.kind in (NodeKind.ACTION, NodeKind.REDIRECT):
            paths.append(PathTrace(steps=steps, terminal=node_id))
            return
        if node.kind is NodeKind.INFO:
            nxt = by_condition[(node_id, Condition.UNCONDITIONAL)]
            walk(nxt, steps + (PathStep(node_id, Condition.UNCONDITIONAL),))
            return
        for condition in (Condition.YES, Condition.NO):
            nxt = by_condition[(node_id, condition)]
            walk(nxt, steps + (PathStep(node_id, condition),))

    walk(chart.entry, ())
    return paths


# ---------------------------------------------------------------------------
# Library


@dataclass
class FlowchartLibrary:
    charts: dict[str, Flowchart] = field(default_factory=dict)

    def get(self, chart_id: str) -> Flowchart:
        try:
            return self.charts[chart_id]
        except KeyError:
            raise KeyError(f"no flowchart with id {chart_id!r}") from None

    def ids(self) -> list[str]:
        return sorted(self.charts)

    def __contains__(self, chart_id: object) -> bool:
        return chart_id in self.charts

    def __len__(self) -> int:
        return len(self.charts)

    def __iter__(self) -> Iterator[Flowchart]:
        for chart_id in self.ids():
            yield self.charts[chart_id]


@dataclass
class ChartIssue:
    source: str
    chart_id: str | None
    problems: list[str]


@dataclass
class LoadReport:
    loaded: list[str] = field(default_factory=list)
    excluded: list[ChartIssue] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.excluded


def load_library(directory: str | Path) -> tuple[FlowchartLibrary, LoadReport]:
    """Load every ``*.json`` chart in ``directory`` (sorted by file name).

    Charts that fail to parse or validate are excluded and reported, never
    silently dropped. Raises EmptyLibrary when nothing usable remains and
    OSError when the directory itself cannot be read.
    """

    directory = Path(directory)
    if not directory.is_dir():
        raise NotADirectoryError(f"flowchart directory {str(directory)!r} does not exist")

    report = LoadReport()
    parsed: dict[str, Flowchart] = {}
    sources: dict[str, str] = {}

    for path in sorted(directory.glob("*.json")):
        try:
            chart = parse_flowchart_json(path.read_text(encoding="utf-8"), source=path.name)
        except FlowchartParseError as exc:
            report.excluded.append(ChartIssue(path.name, None, [str(exc)]))
            continue
        if chart.id in parsed:
            report.excluded.append(
                ChartIssue(
                    path.name,
                    chart.id,
                    [f"duplicate chart id {chart.id!r} (already loaded from {sources[chart.id]})"],
                )
            )
            continue
        structural = validate(chart, library=None)
        if not structural.ok:
            report.excluded.append(
                ChartIssue(path.name, chart.id, [str(f) for f in structural.errors])
            )
            continue
        parsed[chart.id] = chart
        sources[chart.id] = path.name

    # Redirect targets must resolve against whatever actually loaded; an
    # exclusion can invalidate dependants, so iterate to a fixed point.
    while True:
        dropped = False
        for chart_id in sorted(parsed):
            chart = parsed[chart_id]
            bad = [
                node
                for node in chart.nodes.values()
                if node.kind is NodeKind.REDIRECT
                and node.target not in parsed
                and node.target not in chart.external_targets
            ]
            if bad:
                report.excluded.append(
                    ChartIssue(
                        sources[chart_id],
                        chart_id,
                        [
                            f"{RuleCode.UNRESOLVED_REDIRECT.value} at {n.id}: target "
                            f"{n.target!r} not in library and not declared external"
                            for n in bad
                        ],
                    )
                )
                del parsed[chart_id]
                dropped = True
        if not dropped:
            break

    for chart_id in sorted(parsed):
        chart = parsed[chart_id]
        for node in chart.nodes.values():
            if node.kind is NodeKind.REDIRECT and node.target in chart.external_targets:
                report.warnings.append(
                    f"{chart_id}: redirect {node.id} targets external chart {node.target!r}"
                )

    if not parsed:
        raise EmptyLibrary(f"no usable flowchart in {str(directory)!r}")

    library = FlowchartLibrary(charts={cid: parsed[cid] for cid in sorted(parsed)})
    report.loaded = library.ids()
    return library, report
