"""Flowchart parsing, validation rules, and path enumeration.

The path enumeration tests check the production walker against a second,
independently written recursive enumerator, plus frozen expected counts for
the bundled corpus (hand-derived before the walker existed).
"""

from __future__ import annotations

import copy
import json

import pytest
from hypothesis import given, settings, strategies as st

from triageflow.errors import (
    DuplicateNodeId,
    EmptyLibrary,
    FlowchartParseError,
    InvalidFlowchart,
    UnknownNodeKindPrefix,
)
from triageflow.flowcharts import (
    Condition,
    FlowchartLibrary,
    NodeKind,
    RuleCode,
    Sex,
    enumerate_paths,
    load_library,
    parse_flowchart,
    parse_flowchart_json,
    serialize_flowchart,
    validate,
)
from triageflow.fixtures import fixture_charts_dir

# Hand-derived from the source material before the walker was written:
# count of root-to-terminal paths per bundled chart.
EXPECTED_PATH_COUNTS = {
    "abdominal-pain": 8,
    "anxiety": 5,
    "chest-pain": 6,
    "crying-in-infants": 6,
    "earache": 6,
    "feeling-generally-ill": 14,
    "fever": 7,
    "headache": 10,
    "infertility-in-men": 5,
    "painful-periods": 5,
    "recurring-abdominal-pain": 5,
    "unexplained-weight-loss": 5,
}

# Depth-first terminal order (Yes explored before No) for the main chart,
# derived by hand from its figure.
EXPECTED_MAIN_TERMINALS = [
    "F1", "A1", "F2", "A2", "A3", "A4", "A5", "A7", "F3", "A8", "A6", "A7", "F3", "A8",
]


def load_fixture_doc(chart_id: str) -> dict:
    path = fixture_charts_dir() / f"{chart_id}.json"
    return json.loads(path.read_text(encoding="utf-8"))


def oracle_paths(chart):
    """Independent recursive enumerator: (answer tuple, terminal id) per path."""
    successors: dict[str, dict[Condition, str]] = {}
    for edge in chart.edges:
        successors.setdefault(edge.src, {})[edge.condition] = edge.dst
    found = []

    def go(node_id, answers):
        node = chart.nodes[node_id]
        if node.kind in (NodeKind.ACTION, NodeKind.REDIRECT):
            found.append((tuple(answers), node_id))
            return
        if node.kind is NodeKind.INFO:
            go(successors[node_id][Condition.UNCONDITIONAL], answers)
            return
        go(successors[node_id][Condition.YES], answers + [(node_id, "yes")])
        go(successors[node_id][Condition.NO], answers + [(node_id, "no")])

    go(chart.entry, [])
    return found


class TestParsing:
    def test_all_fixture_charts_round_trip(self, library):
        for chart in library:
            assert parse_flowchart(serialize_flowchart(chart)) == chart

    def test_serialized_document_reparses_from_source_file(self, library):
        for chart in library:
            assert parse_flowchart(load_fixture_doc(chart.id)) == chart

    def test_unknown_top_level_key_rejected(self):
        doc = load_fixture_doc("fever")
        doc["comment"] = "nope"
        with pytest.raises(FlowchartParseError, match="comment"):
            parse_flowchart(doc)

    def test_unknown_node_key_rejected(self):
        doc = load_fixture_doc("fever")
        doc["nodes"][0]["color"] = "red"
        with pytest.raises(FlowchartParseError, match="color"):
            parse_flowchart(doc)

    def test_unknown_edge_key_rejected(self):
        doc = load_fixture_doc("fever")
        doc["edges"][0]["weight"] = 2
        with pytest.raises(FlowchartParseError, match="weight"):
            parse_flowchart(doc)

    def test_duplicate_node_id_rejected(self):
        doc = load_fixture_doc("fever")
        doc["nodes"].append(dict(doc["nodes"][0]))
        with pytest.raises(DuplicateNodeId):
            parse_flowchart(doc)

    def test_redirect_requires_target(self):
        doc = load_fixture_doc("feeling-generally-ill")
        for node in doc["nodes"]:
            if node["id"] == "F1":
                del node["target"]
        with pytest.raises(FlowchartParseError, match="target"):
            parse_flowchart(doc)

    def test_target_on_non_redirect_rejected(self):
        doc = load_fixture_doc("fever")
        doc["nodes"][0]["target"] = "anxiety"
        with pytest.raises(FlowchartParseError, match="target"):
            parse_flowchart(doc)

    def test_unknown_kind_rejected(self):
        doc = load_fixture_doc("fever")
        doc["nodes"][0]["kind"] = "decision"
        with pytest.raises(FlowchartParseError):
            parse_flowchart(doc)

    def test_unknown_id_prefix_rejected(self):
        doc = load_fixture_doc("fever")
        doc["nodes"][0]["id"] = "X1"
        with pytest.raises(UnknownNodeKindPrefix):
            parse_flowchart(doc)

    def test_bool_is_not_an_age(self):
        doc = load_fixture_doc("fever")
        doc["applicability"]["age_min_months"] = True
        with pytest.raises(FlowchartParseError):
            parse_flowchart(doc)

    def test_syntax_error_reports_position(self):
        with pytest.raises(FlowchartParseError, match="line"):
            parse_flowchart_json('{"id": "x",')

    def test_applicability_phrases(self, library):
        assert library.get("fever").applicability.phrase() == "All ages - Male and Female"
        assert library.get("painful-periods").applicability.phrase() == "Over 9 years - Female"
        assert (
            library.get("crying-in-infants").applicability.phrase()
            == "Up to 1 year - Male and Female"
        )
        assert library.get("infertility-in-men").applicability.phrase().endswith("- Male")

    def test_description_text_layout(self, library):
        chart = library.get("fever")
        text = chart.description_text()
        assert text.startswith("Fever Flowchart (All ages - Male and Female): ")
        assert chart.description in text


def mutated(chart_id: str, mutate) -> "dict":
    doc = copy.deepcopy(load_fixture_doc(chart_id))
    mutate(doc)
    return doc


def codes_of(doc: dict) -> set[str]:
    return validate(parse_flowchart(doc), library=None).codes()


class TestValidationRules:
    """Each mutation of a known-good chart trips exactly one rule."""

    def test_clean_chart_has_no_findings(self, library):
        report = validate(library.get("feeling-generally-ill"), library=library)
        assert report.ok and not report.warnings

    def test_missing_branch(self):
        doc = mutated(
            "feeling-generally-ill",
            lambda d: d["edges"].remove(
                {"from": "N9", "to": "N10", "condition": "yes"}
            ),
        )
        assert codes_of(doc) == {"MissingBranch"}

    def test_extra_branch(self):
        doc = mutated(
            "feeling-generally-ill",
            lambda d: d["edges"].append({"from": "N9", "to": "A6", "condition": "yes"}),
        )
        assert codes_of(doc) == {"ExtraBranch"}

    def test_entry_invalid_unknown_node(self):
        doc = mutated("feeling-generally-ill", lambda d: d.update(entry="N99"))
        assert codes_of(doc) == {"EntryInvalid"}

    def test_action_has_out_edge(self):
        doc = mutated(
            "feeling-generally-ill",
            lambda d: d["edges"].append({"from": "A6", "to": "A8", "condition": "yes"}),
        )
        assert codes_of(doc) == {"ActionHasOutEdge"}

    def test_redirect_has_out_edge(self):
        doc = mutated(
            "feeling-generally-ill",
            lambda d: d["edges"].append({"from": "F1", "to": "A1", "condition": "yes"}),
        )
        assert codes_of(doc) == {"RedirectHasOutEdge"}

    def test_info_edge_invalid(self):
        def flip(d):
            for edge in d["edges"]:
                if edge["from"] == "I1":
                    edge["condition"] = "yes"

        doc = mutated("feeling-generally-ill", flip)
        assert codes_of(doc) == {"InfoEdgeInvalid"}

    def test_cycle_detected(self):
        def retarget(d):
            for edge in d["edges"]:
                if edge["from"] == "N9" and edge["condition"] == "yes":
                    edge["to"] = "N4"

        doc = mutated("feeling-generally-ill", retarget)
        assert codes_of(doc) == {"CycleDetected"}

    def test_unreachable_node(self):
        doc = mutated(
            "feeling-generally-ill",
            lambda d: d["nodes"].append({"id": "A9", "kind": "action", "text": "Rest."}),
        )
        assert codes_of(doc) == {"UnreachableNode"}

    def test_unknown_edge_endpoint(self):
        doc = mutated(
            "feeling-generally-ill",
            lambda d: d["edges"].append({"from": "N99", "to": "A8", "condition": "yes"}),
        )
        assert codes_of(doc) == {"UnknownEdgeEndpoint"}

    def test_terminal_loop_back_to_entry_trips_several_rules(self):
        # A terminal that points back at the entry is simultaneously an
        # action with an out-edge, a cycle, and an entry with incoming edges.
        doc = mutated(
            "feeling-generally-ill",
            lambda d: d["edges"].append({"from": "A8", "to": "N1", "condition": "yes"}),
        )
        assert {"ActionHasOutEdge", "CycleDetected", "EntryInvalid"} <= codes_of(doc)

    def test_kind_prefix_mismatch(self):
        def mislabel(d):
            for node in d["nodes"]:
                if node["id"] == "A8":
                    node["id"] = "I9"
            for edge in d["edges"]:
                if edge["to"] == "A8":
                    edge["to"] = "I9"

        doc = mutated("feeling-generally-ill", mislabel)
        assert "KindPrefixMismatch" in codes_of(doc)

    def test_cycle_finding_reports_the_loop(self):
        def retarget(d):
            for edge in d["edges"]:
                if edge["from"] == "N9" and edge["condition"] == "yes":
                    edge["to"] = "N4"

        report = validate(parse_flowchart(mutated("feeling-generally-ill", retarget)))
        [finding] = [f for f in report.errors if f.code is RuleCode.CYCLE_DETECTED]
        assert "N4" in finding.message and "N9" in finding.message

    def test_unresolved_redirect_needs_library(self):
        chart = parse_flowchart(load_fixture_doc("feeling-generally-ill"))
        lonely = FlowchartLibrary(charts={chart.id: chart})
        report = validate(chart, library=lonely)
        assert report.codes() == {"UnresolvedRedirect"}
        assert validate(chart, library=None).ok

    def test_declared_external_target_is_a_warning(self):
        doc = mutated(
            "feeling-generally-ill",
            lambda d: d.update(
                external_targets=["fever", "anxiety", "unexplained-weight-loss"]
            ),
        )
        chart = parse_flowchart(doc)
        report = validate(chart, library=FlowchartLibrary(charts={chart.id: chart}))
        assert report.ok
        assert len(report.warnings) == 3


class TestPathEnumeration:
    def test_frozen_path_counts(self, library):
        counts = {chart.id: len(enumerate_paths(chart)) for chart in library}
        assert counts == EXPECTED_PATH_COUNTS
        assert sum(counts.values()) == 82

    def test_main_chart_terminal_sequence(self, library):
        paths = enumerate_paths(library.get("feeling-generally-ill"))
        assert [p.terminal for p in paths] == EXPECTED_MAIN_TERMINALS

    def test_first_path_is_the_all_yes_branch(self, library):
        first = enumerate_paths(library.get("feeling-generally-ill"))[0]
        assert first.question_answers() == (("N1", Condition.YES),)
        assert first.terminal == "F1"

    def test_walker_matches_independent_oracle(self, library):
        for chart in library:
            expected = oracle_paths(chart)
            actual = [
                (
                    tuple((nid, cond.value) for nid, cond in trace.question_answers()),
                    trace.terminal,
                )
                for trace in enumerate_paths(chart)
            ]
            assert actual == expected, chart.id

    def test_info_hops_are_recorded_unconditionally(self, library):
        paths = enumerate_paths(library.get("feeling-generally-ill"))
        via_info = [p for p in paths if p.terminal == "F2"]
        assert len(via_info) == 1
        conditions = [s.condition for s in via_info[0].steps]
        assert Condition.UNCONDITIONAL in conditions

    def test_broken_chart_refuses_enumeration(self):
        doc = mutated("feeling-generally-ill", lambda d: d.update(entry="N99"))
        with pytest.raises(InvalidFlowchart):
            enumerate_paths(parse_flowchart(doc))

    def test_describe_mentions_every_answer(self, library):
        trace = enumerate_paths(library.get("feeling-generally-ill"))[-1]
        text = trace.describe()
        assert text.endswith("-> A8")
        assert "N1=No" in text


def make_binary_tree_doc(depth: int) -> dict:
    """A complete binary question tree: every leaf is a distinct action."""
    nodes = []
    edges = []
    counter = {"q": 0, "a": 0}

    def build(level: int) -> str:
        if level == depth:
            counter["a"] += 1
            node_id = f"A{counter['a']}"
            nodes.append({"id": node_id, "kind": "action", "text": f"Advice {node_id}."})
            return node_id
        counter["q"] += 1
        node_id = f"N{counter['q']}"
        nodes.append({"id": node_id, "kind": "question", "text": f"Question {node_id}?"})
        edges.append({"from": node_id, "to": build(level + 1), "condition": "yes"})
        edges.append({"from": node_id, "to": build(level + 1), "condition": "no"})
        return node_id

    entry = build(0)
    return {
        "id": "generated-tree",
        "name": "Generated Tree Flowchart",
        "description": "Synthetic complete binary tree.",
        "specialty": "testing",
        "applicability": {"sexes": ["female", "male"], "age_min_months": 0, "age_max_months": None},
        "entry": entry,
        "nodes": nodes,
        "edges": edges,
    }


class TestGeneratedCharts:
    @given(depth=st.integers(min_value=1, max_value=6))
    @settings(max_examples=20, deadline=None)
    def test_complete_tree_has_two_to_the_depth_paths(self, depth):
        chart = parse_flowchart(make_binary_tree_doc(depth))
        assert validate(chart).ok
        paths = enumerate_paths(chart)
        assert len(paths) == 2**depth
        assert paths == [
            trace for trace in paths if len(trace.question_answers()) == depth
        ]

    @given(depth=st.integers(min_value=1, max_value=5))
    @settings(max_examples=15, deadline=None)
    def test_round_trip_on_generated_charts(self, depth):
        chart = parse_flowchart(make_binary_tree_doc(depth))
        assert parse_flowchart(serialize_flowchart(chart)) == chart

    @given(depth=st.integers(min_value=1, max_value=5))
    @settings(max_examples=15, deadline=None)
    def test_generated_tree_matches_oracle(self, depth):
        chart = parse_flowchart(make_binary_tree_doc(depth))
        actual = [
            (tuple((n, c.value) for n, c in t.question_answers()), t.terminal)
            for t in enumerate_paths(chart)
        ]
        assert actual == oracle_paths(chart)


class TestLibraryLoading:
    def test_bundled_corpus_loads_clean(self, charts_dir):
        library, report = load_library(charts_dir)
        assert len(library) == 12
        assert report.ok and not report.warnings

    def test_corrupt_file_is_excluded_with_reason(self, tmp_path):
        good = load_fixture_doc("fever")
        # fever redirects nowhere, so it stands alone
        (tmp_path / "fever.json").write_text(json.dumps(good))
        (tmp_path / "broken.json").write_text("{not json")
        library, report = load_library(tmp_path)
        assert library.ids() == ["fever"]
        [issue] = report.excluded
        assert issue.source.endswith("broken.json")

    def test_duplicate_chart_id_excluded(self, tmp_path):
        doc = load_fixture_doc("fever")
        (tmp_path / "a.json").write_text(json.dumps(doc))
        (tmp_path / "b.json").write_text(json.dumps(doc))
        library, report = load_library(tmp_path)
        assert len(library) == 1
        [issue] = report.excluded
        assert issue.source.endswith("b.json")
        assert any("duplicate" in p.lower() for p in issue.problems)

    def test_redirect_exclusion_cascades(self, tmp_path):
        # main redirects into fever/anxiety/weight-loss; anxiety is broken,
        # so main must fall with it, while the self-contained charts stay.
        for chart_id in ("feeling-generally-ill", "fever", "unexplained-weight-loss"):
            (tmp_path / f"{chart_id}.json").write_text(json.dumps(load_fixture_doc(chart_id)))
        broken = load_fixture_doc("anxiety")
        broken["entry"] = "N99"
        (tmp_path / "anxiety.json").write_text(json.dumps(broken))
        library, report = load_library(tmp_path)
        assert library.ids() == ["fever", "unexplained-weight-loss"]
        excluded = {i.chart_id for i in report.excluded}
        assert excluded == {"anxiety", "feeling-generally-ill"}

    def test_empty_directory_raises(self, tmp_path):
        with pytest.raises(EmptyLibrary):
            load_library(tmp_path)

    def test_missing_directory_raises(self, tmp_path):
        with pytest.raises(NotADirectoryError):
            load_library(tmp_path / "nope")

    def test_iteration_is_id_sorted(self, library):
        ids = [chart.id for chart in library]
        assert ids == sorted(ids)


class TestApplicability:
    def test_contains_respects_all_bounds(self, library):
        applicability = library.get("painful-periods").applicability
        assert applicability.contains(Sex.FEMALE, 108)
        assert not applicability.contains(Sex.FEMALE, 107)
        assert not applicability.contains(Sex.MALE, 300)

    def test_upper_bound(self, library):
        applicability = library.get("crying-in-infants").applicability
        assert applicability.contains(Sex.MALE, 12)
        assert not applicability.contains(Sex.MALE, 13)
