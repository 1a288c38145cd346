import json
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from promptclimb.core import Template, seeded_rng
from promptclimb.pool import (
    AnnotatedCaption,
    AnnotationError,
    BuildReport,
    CorpusTooSmallError,
    admissible,
    build_pool,
    load_corpus,
    naive_noun_spans,
    sample_initial,
    templatize,
)

from conftest import FIXTURES


def spans_for(caption, *phrases):
    spans = []
    cursor = 0
    for phrase in phrases:
        start = caption.index(phrase, cursor)
        spans.append((start, start + len(phrase)))
        cursor = start + len(phrase)
    return tuple(spans)


class TestAnnotatedCaption:
    def test_rejects_out_of_bounds(self):
        with pytest.raises(AnnotationError):
            AnnotatedCaption("short", ((0, 99),))

    def test_rejects_overlap(self):
        with pytest.raises(AnnotationError):
            AnnotatedCaption("a dog runs", ((0, 5), (3, 8)))

    def test_rejects_whitespace_only_span(self):
        with pytest.raises(AnnotationError):
            AnnotatedCaption("a dog", ((1, 2),))


class TestTemplatize:
    def test_one_template_per_span_in_order(self):
        caption = "A dog runs in the park"
        annotated = AnnotatedCaption(caption, spans_for(caption, "A dog", "the park"))
        assert [t.text for t in templatize(annotated)] == ["{} runs in the park", "A dog runs in {}"]

    def test_whole_string_span_yields_bare_placeholder(self):
        annotated = AnnotatedCaption("Sunset", ((0, 6),))
        templates = templatize(annotated)
        assert [t.text for t in templates] == ["{}"]
        assert not admissible(templates[0])  # rejected later, at corpus admission

    def test_zero_spans_yield_empty_list(self):
        assert templatize(AnnotatedCaption("nothing here", ())) == []

    def test_every_template_has_a_placeholder(self):
        caption = "The red boat crosses a wide river"
        annotated = AnnotatedCaption(caption, spans_for(caption, "The red boat", "a wide river"))
        assert all(t.placeholder_count >= 1 for t in templatize(annotated))

    @given(st.data())
    def test_preserves_text_outside_the_span(self, data):
        words = data.draw(st.lists(st.sampled_from(["dog", "park", "red", "old", "river"]),
                                   min_size=2, max_size=6))
        caption = " ".join(words)
        start_word = data.draw(st.integers(0, len(words) - 1))
        end_word = data.draw(st.integers(start_word, len(words) - 1))
        start = len(" ".join(words[:start_word])) + (1 if start_word else 0)
        end = len(" ".join(words[: end_word + 1]))
        annotated = AnnotatedCaption(caption, ((start, end),))
        (template,) = templatize(annotated)
        left, _, right = template.text.partition("{}")
        assert caption.startswith(left)
        assert caption.endswith(right)


class TestBuildPool:
    def writelines(self, tmp_path, records):
        path = tmp_path / "annotations.jsonl"
        path.write_text("\n".join(json.dumps(r) for r in records) + "\n")
        return path

    def test_counts_and_dedup(self, tmp_path):
        caption_a = "A dog runs in the park"
        caption_b = "A dog runs in the park today"
        caption_c = "A dog sits in the park"
        records = [
            {"caption": caption_a, "noun_phrases": [list(s) for s in spans_for(caption_a, "A dog", "the park")]},
            {"caption": caption_b, "noun_phrases": [list(s) for s in spans_for(caption_b, "A dog", "the park")]},
            {"caption": caption_c, "noun_phrases": [list(s) for s in spans_for(caption_c, "A dog", "the park")]},
        ]
        # caption_b's first span yields "{} runs in the park today"; its second yields
        # "A dog runs in {} today"; caption_c intersects caption_a on nothing, but
        # repeat caption_a to force one duplicate of each of its templates
        records.append(records[0])
        out = tmp_path / "corpus.txt"
        report = build_pool([json.dumps(r) for r in records], out)
        assert report.captions_read == 4
        assert report.templates_emitted == 6
        assert report.duplicates_dropped == 2
        assert len(load_corpus(out)) == 6

    def test_empty_stream(self, tmp_path):
        out = tmp_path / "corpus.txt"
        report = build_pool([], out)
        assert report == BuildReport()
        assert load_corpus(out) == []

    def test_malformed_records_are_skipped_not_fatal(self, tmp_path):
        caption = "A dog runs"
        good = {"caption": caption, "noun_phrases": [list(spans_for(caption, "A dog")[0])]}
        lines = ["not json", json.dumps({"caption": "x"}), json.dumps(good),
                 json.dumps({"caption": "bad", "noun_phrases": [[0, 99]]})]
        report = build_pool(lines, tmp_path / "corpus.txt")
        assert report.malformed_skipped == 3
        assert report.templates_emitted == 1

    def test_degenerate_templates_rejected(self, tmp_path):
        records = [{"caption": "Sunset", "noun_phrases": [[0, 6]]}]
        report = build_pool([json.dumps(r) for r in records], tmp_path / "corpus.txt")
        assert report.degenerate_rejected == 1
        assert report.templates_emitted == 0

    def test_max_captions(self, tmp_path):
        caption = "A dog runs"
        record = json.dumps({"caption": caption, "noun_phrases": [list(spans_for(caption, "A dog")[0])]})
        report = build_pool([record] * 5, tmp_path / "corpus.txt", max_captions=2)
        assert report.captions_read == 2

    def test_fixture_corpus_matches_brute_force_recount(self, tmp_path):
        """Independent recount of the 100-caption fixture (direct nested
        loops, list-based dedup) must agree with build_pool exactly."""
        lines = (FIXTURES / "captions_100.jsonl").read_text().splitlines()
        out = tmp_path / "corpus.txt"
        report = build_pool(lines, out)

        expected: list[str] = []
        dups = degenerate = 0
        for line in lines:
            record = json.loads(line)
            caption = record["caption"]
            for start, end in record["noun_phrases"]:
                left, right = caption[:start], caption[end:]
                if left.endswith(" ") and right.startswith(" "):
                    right = right[1:]
                text = (left + "{}" + right).strip()
                content = text.replace("{}", "")
                if len([c for c in content if not c.isspace()]) < 3:
                    degenerate += 1
                    continue
                if text in expected:
                    dups += 1
                else:
                    expected.append(text)

        produced = [t.text for t in load_corpus(out)]
        assert produced == expected
        assert report.templates_emitted == len(expected)
        assert report.duplicates_dropped == dups
        assert report.degenerate_rejected == degenerate
        assert report.captions_read == 100


class TestSampleInitial:
    def corpus(self, n):
        return [Template(f"template number {i} {{}}") for i in range(n)]

    def test_whole_corpus_when_m_equals_size(self):
        corpus = self.corpus(6)
        sample = sample_initial(corpus, 6, seeded_rng(0, "s"))
        assert sorted(t.text for t in sample) == sorted(t.text for t in corpus)

    def test_deterministic_for_same_stream(self):
        corpus = self.corpus(50)
        a = sample_initial(corpus, 10, seeded_rng(7, "s"))
        b = sample_initial(corpus, 10, seeded_rng(7, "s"))
        assert [t.text for t in a] == [t.text for t in b]

    def test_error_names_both_sizes(self):
        with pytest.raises(CorpusTooSmallError, match="3.*5|5.*3"):
            sample_initial(self.corpus(3), 5, seeded_rng(0, "s"))

    def test_draws_are_uniform(self):
        """Chi-square over 10k single draws from 10 templates: every count
        within 3 sigma of the expected 1000."""
        corpus = self.corpus(10)
        rng = seeded_rng(123, "uniformity")
        counts = Counter()
        draws = 10_000
        for _ in range(draws):
            counts[sample_initial(corpus, 1, rng)[0].text] += 1
        expected = draws / len(corpus)
        sigma = np.sqrt(draws * (1 / len(corpus)) * (1 - 1 / len(corpus)))
        for text in (t.text for t in corpus):
            assert abs(counts[text] - expected) <= 3 * sigma


class TestNaiveChunker:
    def test_finds_article_led_runs(self):
        spans = naive_noun_spans("A dog runs in the park")
        texts = ["A dog runs in the park"[s:e] for s, e in spans]
        assert "A dog runs in" in texts[0] or texts[0].startswith("A dog")
        assert any(t.startswith("the park") for t in texts)

    def test_no_articles_no_spans(self):
        assert naive_noun_spans("dogs run fast") == []
