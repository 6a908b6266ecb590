"""Retrieval: query composition, the vector index, ranking, and selection.

Cosine ranking is verified against a plain-Python oracle (no numpy) and the
applicability filter against a brute-force grid over sex and age.
"""

from __future__ import annotations

import math
import random

import pytest

from triageflow.errors import (
    EmptyLibrary,
    IndexFormatError,
    InvalidDemographics,
    SelectorFailure,
)
from triageflow.flowcharts import Sex
from triageflow.gateway import CannedTextProvider, HashEmbedder
from triageflow.retrieval import (
    NO_FLOWCHART_AVAILABLE,
    ArgmaxSelector,
    Demographics,
    LlmSelector,
    Query,
    ScoredCandidate,
    build_index,
    compose_query_text,
    cosine_scores,
    load_index,
    save_index,
    search,
    search_text,
    select_flowchart,
)


def cosine_oracle(a, b):
    dot = sum(x * y for x, y in zip(a, b))
    norm_a = math.sqrt(sum(x * x for x in a))
    norm_b = math.sqrt(sum(x * x for x in b))
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    return dot / (norm_a * norm_b)


class TestDemographics:
    def test_unit_normalisation(self):
        assert Demographics(Sex.FEMALE, 30, "Years").age_unit == "years"
        assert Demographics(Sex.MALE, 6, "month").age_unit == "months"

    def test_age_months_conversion(self):
        assert Demographics(Sex.FEMALE, 2, "years").age_months == 24
        assert Demographics(Sex.FEMALE, 18, "months").age_months == 18

    def test_age_text_singular(self):
        assert Demographics(Sex.MALE, 1, "years").age_text() == "1 year"
        assert Demographics(Sex.MALE, 1, "months").age_text() == "1 month"
        assert Demographics(Sex.MALE, 30, "years").age_text() == "30 years"

    def test_sex_text(self):
        assert Demographics(Sex.FEMALE, 30, "years").sex_text() == "Female"

    @pytest.mark.parametrize("value,unit", [(0, "years"), (-2, "months"), (121, "years"), (1441, "months")])
    def test_out_of_range_age_rejected(self, value, unit):
        with pytest.raises(InvalidDemographics):
            Demographics(Sex.FEMALE, value, unit)

    def test_bad_unit_rejected(self):
        with pytest.raises(InvalidDemographics):
            Demographics(Sex.FEMALE, 30, "weeks")

    def test_bool_age_rejected(self):
        with pytest.raises(InvalidDemographics):
            Demographics(Sex.FEMALE, True, "years")

    def test_non_int_age_rejected(self):
        with pytest.raises(InvalidDemographics):
            Demographics(Sex.FEMALE, 30.5, "years")


class TestQueryComposition:
    def test_exact_wording(self):
        demographics = Demographics(Sex.FEMALE, 30, "years")
        text = compose_query_text(demographics, "I feel off lately.")
        assert text == "Sex: Female. Age: 30 years. Concern: I feel off lately."

    def test_single_month_wording(self):
        demographics = Demographics(Sex.MALE, 1, "months")
        assert compose_query_text(demographics, "crying a lot") == (
            "Sex: Male. Age: 1 month. Concern: crying a lot"
        )


class TestIndex:
    def test_entries_are_id_sorted_and_complete(self, index, library):
        ids = [e.flowchart_id for e in index.entries]
        assert ids == library.ids()
        assert index.embedder_id == "hash-fnv1a-256"
        assert index.dimension == 256

    def test_build_is_deterministic(self, library, embedder):
        assert build_index(library, embedder) == build_index(library, embedder)

    def test_entry_embeds_description_text(self, index, library, embedder):
        entry = index.entries[0]
        chart = library.get(entry.flowchart_id)
        assert entry.description_text == chart.description_text()
        assert list(entry.embedding) == embedder.embed([entry.description_text])[0]

    def test_empty_library_refused(self):
        from triageflow.flowcharts import FlowchartLibrary

        with pytest.raises(EmptyLibrary):
            build_index(FlowchartLibrary(), HashEmbedder())

    def test_save_load_round_trip(self, index, tmp_path):
        path = tmp_path / "index.json"
        save_index(index, path)
        assert load_index(path) == index
        assert load_index(path, expected_embedder_id="hash-fnv1a-256") == index

    def test_save_is_byte_deterministic(self, index, tmp_path):
        first, second = tmp_path / "a.json", tmp_path / "b.json"
        save_index(index, first)
        save_index(index, second)
        assert first.read_bytes() == second.read_bytes()

    def test_embedder_mismatch_on_load(self, index, tmp_path):
        path = tmp_path / "index.json"
        save_index(index, path)
        with pytest.raises(IndexFormatError, match="expected"):
            load_index(path, expected_embedder_id="provider-xyz")

    def test_unsupported_format_version(self, tmp_path):
        path = tmp_path / "index.json"
        path.write_text('{"format_version": 99, "embedder_id": "x", "dimension": 1, "entries": []}')
        with pytest.raises(IndexFormatError, match="format"):
            load_index(path)

    def test_corrupt_file(self, tmp_path):
        path = tmp_path / "index.json"
        path.write_text("{oops")
        with pytest.raises(IndexFormatError, match="cannot read"):
            load_index(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(IndexFormatError, match="cannot read"):
            load_index(tmp_path / "absent.json")

    def test_dimension_mismatch_detected(self, tmp_path):
        path = tmp_path / "index.json"
        path.write_text(
            '{"format_version": 1, "embedder_id": "x", "dimension": 3, '
            '"entries": [{"flowchart_id": "a", "description_text": "t", "embedding": [1.0, 2.0]}]}'
        )
        with pytest.raises(IndexFormatError, match="dimension"):
            load_index(path)


class TestCosineRanking:
    def test_scores_match_oracle(self, index, embedder):
        query_vector = embedder.embed(["fever and aching joints in a child"])[0]
        scores = cosine_scores(index, query_vector)
        expected = [cosine_oracle(query_vector, e.embedding) for e in index.entries]
        assert scores == pytest.approx(expected, abs=1e-12)

    def test_query_dimension_checked(self, index):
        with pytest.raises(IndexFormatError, match="dimension"):
            cosine_scores(index, [1.0, 0.0])

    def test_verbatim_description_ranks_first_with_unit_score(self, index, embedder, library):
        for chart in library:
            [top] = search_text(index, chart.description_text(), 1, embedder)
            assert top.flowchart_id == chart.id
            assert top.score == pytest.approx(1.0, abs=1e-12)

    def test_topk_lists_nest(self, index, embedder):
        rng = random.Random(7)
        words = (
            "pain fever ache stomach head chest ear cry weight period "
            "worry tired child baby sharp dull night"
        ).split()
        for _ in range(25):
            text = " ".join(rng.choices(words, k=rng.randint(1, 12)))
            previous = None
            for n in (1, 3, 5, 12):
                current = [c.flowchart_id for c in search_text(index, text, n, embedder)]
                assert len(current) == min(n, len(index))
                if previous is not None:
                    assert current[: len(previous)] == previous
                previous = current

    def test_ranking_matches_full_sort_oracle(self, index, embedder):
        text = "my stomach hurts after eating"
        query_vector = embedder.embed([text])[0]
        pairs = [
            (-cosine_oracle(query_vector, e.embedding), e.flowchart_id) for e in index.entries
        ]
        expected = [fid for _, fid in sorted(pairs)]
        got = [c.flowchart_id for c in search_text(index, text, len(index), embedder)]
        assert got == expected

    def test_tie_breaks_on_id(self, embedder):
        # Two entries with identical embeddings: the lexically smaller id wins.
        from triageflow.retrieval import IndexEntry, RetrievalIndex

        vector = tuple(embedder.embed(["same text"])[0])
        index = RetrievalIndex(
            embedder_id=embedder.embedder_id,
            dimension=embedder.dimension,
            entries=(
                IndexEntry("zebra", "same text", vector),
                IndexEntry("aardvark", "same text", vector),
            ),
        )
        results = search_text(index, "same text", 2, embedder)
        assert [c.flowchart_id for c in results] == ["aardvark", "zebra"]

    def test_nonpositive_n_returns_nothing(self, index, embedder):
        assert search_text(index, "anything", 0, embedder) == []
        assert search_text(index, "anything", -2, embedder) == []

    def test_wrong_embedder_refused(self, index):
        different = HashEmbedder(dimension=64)
        with pytest.raises(IndexFormatError, match="embedder"):
            search_text(index, "anything", 3, different)


class TestApplicabilityFilter:
    def test_filter_matches_brute_force_over_grid(self, index, embedder, library):
        statement = "I have been feeling unwell and losing weight"
        ages = [1, 6, 12, 13, 24, 108, 120, 300, 600]
        for sex in (Sex.FEMALE, Sex.MALE):
            for age_months in ages:
                unfiltered = search_text(index, statement, len(index), embedder)
                allowed = {
                    chart.id
                    for chart in library
                    if chart.applicability.contains(sex, age_months)
                }
                expected = [c.flowchart_id for c in unfiltered if c.flowchart_id in allowed]
                demographics = Demographics(sex, age_months, "months")
                filtered = search_text(
                    index,
                    statement,
                    len(index),
                    embedder,
                    library=library,
                    demographics=demographics,
                    applicability_filter=True,
                )
                assert [c.flowchart_id for c in filtered] == expected, (sex, age_months)

    def test_age_and_sex_bounds_exclude_charts(self, index, embedder, library):
        infant = Demographics(Sex.FEMALE, 3, "months")
        results = search_text(
            index,
            "baby will not stop crying",
            len(index),
            embedder,
            library=library,
            demographics=infant,
            applicability_filter=True,
        )
        ids = {c.flowchart_id for c in results}
        assert "crying-in-infants" in ids
        assert "painful-periods" not in ids  # age floor
        assert "infertility-in-men" not in ids  # sex
        adult = Demographics(Sex.MALE, 40, "years")
        adult_ids = {
            c.flowchart_id
            for c in search_text(
                index,
                "baby will not stop crying",
                len(index),
                embedder,
                library=library,
                demographics=adult,
                applicability_filter=True,
            )
        }
        assert "crying-in-infants" not in adult_ids  # age ceiling
        assert "infertility-in-men" in adult_ids

    def test_filter_requires_library_and_demographics(self, index, embedder):
        with pytest.raises(ValueError, match="applicability_filter"):
            search_text(index, "x", 3, embedder, applicability_filter=True)

    def test_search_wrapper_uses_composed_query(self, index, embedder, library):
        demographics = Demographics(Sex.FEMALE, 30, "years")
        query = Query(demographics, "feeling generally unwell")
        via_query = search(index, query, 5, embedder, library=library)
        via_text = search_text(
            index,
            compose_query_text(demographics, "feeling generally unwell"),
            5,
            embedder,
            library=library,
            demographics=demographics,
            applicability_filter=True,
        )
        assert via_query == via_text
        assert all(c.name for c in via_query)


def candidates_fixture():
    return [
        ScoredCandidate("recurring-abdominal-pain", "recurring pain text", 0.9, "Recurring Abdominal Pain Flowchart"),
        ScoredCandidate("abdominal-pain", "pain text", 0.8, "Abdominal Pain Flowchart"),
        ScoredCandidate("fever", "fever text", 0.7, "Fever Flowchart"),
    ]


class ScriptedSelector:
    offline = True

    def __init__(self, reply):
        self.reply = reply

    def select(self, query_text, candidates):
        return self.reply


class TestSelection:
    def test_argmax_picks_top(self):
        assert ArgmaxSelector().select("q", candidates_fixture()) == "recurring-abdominal-pain"

    def test_argmax_on_empty_returns_sentinel(self):
        assert ArgmaxSelector().select("q", []) == NO_FLOWCHART_AVAILABLE

    def test_exact_id_reply(self):
        selection = select_flowchart("q", candidates_fixture(), ScriptedSelector("fever"))
        assert selection.flowchart_id == "fever"
        assert not selection.no_flowchart

    def test_exact_name_reply_case_insensitive(self):
        selection = select_flowchart("q", candidates_fixture(), ScriptedSelector("FEVER FLOWCHART"))
        assert selection.flowchart_id == "fever"

    def test_sentinel_reply(self):
        selection = select_flowchart(
            "q", candidates_fixture(), ScriptedSelector("No flowchart available.")
        )
        assert selection.no_flowchart
        assert selection.candidates_shown == tuple(candidates_fixture()[:3])

    def test_name_quoted_in_longer_reply(self):
        selection = select_flowchart(
            "q",
            candidates_fixture(),
            ScriptedSelector("I would use the Fever Flowchart for this patient."),
        )
        assert selection.flowchart_id == "fever"

    def test_longest_name_wins_when_nested(self):
        # 'Abdominal Pain Flowchart' is a substring of the recurring variant;
        # quoting the longer name must not resolve to the shorter chart.
        selection = select_flowchart(
            "q",
            candidates_fixture(),
            ScriptedSelector("Best match: recurring abdominal pain flowchart"),
        )
        assert selection.flowchart_id == "recurring-abdominal-pain"

    def test_shorter_name_still_reachable(self):
        selection = select_flowchart(
            "q",
            candidates_fixture(),
            ScriptedSelector("Go with the abdominal pain flowchart here."),
        )
        assert selection.flowchart_id == "abdominal-pain"

    def test_unique_fragment_resolves(self):
        selection = select_flowchart("q", candidates_fixture(), ScriptedSelector("Fever"))
        assert selection.flowchart_id == "fever"

    def test_ambiguous_fragment_is_no_flowchart(self):
        # "abdominal pain" appears in two candidate names and is a whole-word
        # substring of both, so the longest containment rule cannot apply and
        # the fragment rule finds two owners.
        selection = select_flowchart(
            "q", candidates_fixture(), ScriptedSelector("Pain Flowchart")
        )
        assert selection.no_flowchart
        assert selection.note is not None

    def test_unresolvable_reply_is_no_flowchart_with_note(self):
        selection = select_flowchart(
            "q", candidates_fixture(), ScriptedSelector("the moon is made of cheese")
        )
        assert selection.no_flowchart
        assert "matches no candidate" in selection.note

    def test_empty_candidates_short_circuits(self):
        selection = select_flowchart("q", [], ScriptedSelector("anything"))
        assert selection.no_flowchart
        assert selection.candidates_shown == ()
        assert "no candidates" in selection.note

    def test_non_string_selector_reply_raises(self):
        with pytest.raises(SelectorFailure, match="expected str"):
            select_flowchart("q", candidates_fixture(), ScriptedSelector(42))

    def test_shown_respects_limit(self):
        selection = select_flowchart(
            "q", candidates_fixture(), ScriptedSelector("fever"), shown=2
        )
        assert len(selection.candidates_shown) == 2

    def test_llm_selector_prompt_and_reply(self):
        provider = CannedTextProvider(default="Fever Flowchart")
        selector = LlmSelector(provider)
        selection = select_flowchart("Sex: Female. Age: 30 years.", candidates_fixture(), selector)
        assert selection.flowchart_id == "fever"
        [prompt] = provider.calls
        assert "Sex: Female. Age: 30 years." in prompt
        for candidate in candidates_fixture():
            assert candidate.description_text in prompt
