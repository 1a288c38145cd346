import json

import pytest
from hypothesis import given, strategies as st

from promptclimb.core import (
    Budget,
    EmptyLedgerError,
    Ledger,
    LedgerEntry,
    PromptClimbError,
    PromptPool,
    RunConfig,
    ScoredTemplate,
    Template,
    best_so_far,
    replay_cost,
    seeded_rng,
    utc_now,
)


def entry(text, score, run_id="r", restart=0, reset=0, it=0, origin="llm_proposal",
          tokens=(0, 0), extra=None):
    return LedgerEntry(
        run_id=run_id, restart=restart, reset=reset, iter=it, template_text=text,
        score=score, tokens_in=tokens[0], tokens_out=tokens[1], origin=origin,
        timestamp=utc_now(), extra=extra or {},
    )


class TestTemplate:
    def test_placeholder_count(self):
        assert Template("a photo of a {}").placeholder_count == 1
        assert Template("A top-down view of {} arranged in a pattern {}").placeholder_count == 2
        assert Template("no placeholder").placeholder_count == 0

    def test_rejects_untrimmed(self):
        with pytest.raises(ValueError):
            Template(" padded ")
        with pytest.raises(ValueError):
            Template("two\nlines")

    def test_word_count_counts_placeholder(self):
        assert Template("a photo of a {}").word_count == 5


class TestScoredTemplate:
    def test_rejects_out_of_range(self):
        t = Template("a {}")
        with pytest.raises(ValueError):
            ScoredTemplate(t, 1.2, "initial_pool", 0)
        with pytest.raises(ValueError):
            ScoredTemplate(t, float("nan"), "initial_pool", 0)

    def test_rejects_unknown_origin(self):
        with pytest.raises(ValueError):
            ScoredTemplate(Template("a {}"), 0.5, "mystery", 0)


class TestPromptPool:
    def test_admission_is_idempotent(self):
        pool = PromptPool()
        first = pool.admit(Template("a {}"), 0.5, "initial_pool", 0)
        again = pool.admit(Template("a {}"), 0.9, "llm_proposal", 1)
        assert again is first
        assert len(pool) == 1
        assert pool.get("a {}").score == 0.5

    def test_rejects_placeholderless(self):
        with pytest.raises(ValueError):
            PromptPool().admit(Template("plain text"), 0.5, "initial_pool", 0)

    def test_best_breaks_ties_by_admission(self):
        pool = PromptPool()
        pool.admit(Template("a {}"), 0.7, "initial_pool", 0)
        pool.admit(Template("b {}"), 0.7, "initial_pool", 1)
        assert pool.best().text == "a {}"

    @given(st.lists(st.sampled_from(["a {}", "b {}", "c {}", "d {}"]), min_size=1, max_size=12))
    def test_admission_idempotent_property(self, texts):
        pool = PromptPool()
        for i, text in enumerate(texts):
            pool.admit(Template(text), 0.5, "initial_pool", i)
        assert len(pool) == len(set(texts))


class TestBestSoFar:
    def test_argmax(self):
        entries = [entry("a {}", 0.9), entry("b {}", 0.5, it=1)]
        assert best_so_far(entries).template_text == "a {}"

    def test_tie_goes_to_earliest(self):
        entries = [entry("a {}", 0.7), entry("b {}", 0.7, it=1)]
        assert best_so_far(entries).template_text == "a {}"

    def test_empty_raises(self):
        with pytest.raises(EmptyLedgerError):
            best_so_far([])
        with pytest.raises(EmptyLedgerError):
            best_so_far([entry("x", None)])


class TestLedgerFile:
    def test_round_trip_and_field_names(self, tmp_path):
        path = tmp_path / "run.jsonl"
        ledger = Ledger(path)
        ledger.append(entry("a {}", 0.25, tokens=(120, 8), extra={"note": "x"}))
        ledger.append(entry("b {}", None, it=1))
        ledger.close()

        lines = path.read_text().splitlines()
        record = json.loads(lines[0])
        assert list(record) == ["run_id", "restart", "reset", "iter", "template_text",
                                "score", "tokens_in", "tokens_out", "origin", "timestamp", "extra"]
        assert "score" not in json.loads(lines[1])  # absent, not null

        reloaded = Ledger(path)
        assert len(reloaded) == 2
        assert reloaded.entries[0].score == 0.25
        assert reloaded.entries[1].score is None

    def test_partial_final_line_discarded(self, tmp_path):
        path = tmp_path / "run.jsonl"
        ledger = Ledger(path)
        ledger.append(entry("a {}", 0.5))
        ledger.close()
        with path.open("a") as fh:
            fh.write('{"run_id": "r", "restart": 0, "res')  # crashed mid-write
        reloaded = Ledger(path)
        assert len(reloaded) == 1

    def test_corrupt_middle_line_is_fatal(self, tmp_path):
        path = tmp_path / "run.jsonl"
        ledger = Ledger(path)
        ledger.append(entry("a {}", 0.5))
        ledger.close()
        raw = path.read_text()
        path.write_text("not json\n" + raw)
        with pytest.raises(PromptClimbError):
            Ledger(path)

    def test_replay_reconstructs_cost(self, tmp_path):
        path = tmp_path / "run.jsonl"
        ledger = Ledger(path)
        budget = Budget(price_per_1k_tokens=0.0015)
        for i, (tin, tout) in enumerate([(400, 100), (350, 50)]):
            ledger.append(entry(f"t{i} {{}}", 0.5, it=i, tokens=(tin, tout)))
            budget.add_proposer_call(tin, tout)
        ledger.close()
        assert replay_cost(Ledger(path).entries, 0.0015) == pytest.approx(budget.cost)

    def test_best_so_far_monotone_over_any_prefix(self):
        scores = [0.2, 0.9, 0.4, 0.9, 0.95, 0.1]
        entries = [entry(f"t{i} {{}}", s, it=i) for i, s in enumerate(scores)]
        best = float("-inf")
        maxima = []
        for e in entries:
            best = max(best, e.score)
            maxima.append(best)
        assert maxima == sorted(maxima)


class TestBudget:
    def test_counters_and_cost(self):
        budget = Budget(price_per_1k_tokens=0.0015)
        budget.add_proposer_call(400, 100)
        budget.add_proposer_call(600, 0)
        assert budget.proposer_calls == 2
        assert budget.cost == pytest.approx((400 + 100 + 600) / 1000 * 0.0015)
        with pytest.raises(ValueError):
            budget.add_proposer_call(-1, 0)


class TestRunConfig:
    def test_defaults_match_reference_setup(self):
        cfg = RunConfig()
        assert (cfg.n_restart, cfg.n_reset, cfg.n_iter) == (20, 50, 10)
        assert (cfg.m, cfg.k, cfg.proposer_temperature) == (100, 15, 1.0)
        assert cfg.calls_per_restart == 500

    def test_validation(self):
        with pytest.raises(PromptClimbError):
            RunConfig(n_iter=0)
        with pytest.raises(PromptClimbError):
            RunConfig(m=10, k=6)  # 2k > m
        with pytest.raises(PromptClimbError):
            RunConfig(feedback_mode="both")


class TestSeededRng:
    def test_same_stream_reproduces(self):
        a = seeded_rng(42, "restart-0").integers(0, 1000, size=8)
        b = seeded_rng(42, "restart-0").integers(0, 1000, size=8)
        assert list(a) == list(b)

    def test_streams_are_independent(self):
        a = seeded_rng(42, "restart-0").integers(0, 1000, size=8)
        b = seeded_rng(42, "restart-1").integers(0, 1000, size=8)
        assert list(a) != list(b)

    def test_seed_changes_stream(self):
        a = seeded_rng(1, "restart-0").integers(0, 1000, size=8)
        b = seeded_rng(2, "restart-0").integers(0, 1000, size=8)
        assert list(a) != list(b)
