import pytest

from promptclimb.core import Ledger, RunConfig, Template
from promptclimb.evaluator import ClassificationTask, SyntheticOracle
from promptclimb.optimizer import run
from promptclimb.proposer import MockChatBackend
from promptclimb.report import (
    FoldResult,
    aggregate_folds,
    best_so_far_curve,
    calls_to_reach,
    generate_report,
    render_fold_table,
    render_method_table,
    write_summary,
)
from promptclimb.synthbench import bench_corpus, bench_oracle_spec, bench_vocabulary


class TestAggregateFolds:
    def test_constant_scores(self):
        assert aggregate_folds([0.5, 0.5, 0.5]) == (0.5, 0.0)

    def test_population_std(self):
        mean, std = aggregate_folds([0.4, 0.6])
        assert mean == pytest.approx(0.5)
        assert std == pytest.approx(0.1)

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            aggregate_folds([])


class TestMethodTable:
    def test_renders_stored_comparison_numbers(self):
        """Layout check against stored averages; nothing is recomputed."""
        rows = [("initial-pool", 56.0), ("p-only", 60.1), ("p+n", 61.1)]
        table = render_method_table(rows)
        lines = table.splitlines()
        assert lines[0].split() == ["method", "avg"]
        assert "initial-pool  56.0" in table
        assert "p-only" in lines[2] and "60.1" in lines[2]
        assert "p+n" in lines[3] and "61.1" in lines[3]


class TestFoldTable:
    def test_table_and_footer(self):
        results = [
            FoldResult(0, Template("a {}"), 0.8),
            FoldResult(1, Template("b {}"), 0.6),
            FoldResult(2, Template("c {}"), 0.7),
        ]
        table = render_fold_table("pets", results)
        assert "dataset: pets" in table
        assert "train mean +/- std: 0.7000 +/- 0.0816" in table

    def test_test_scores_column_when_present(self):
        results = [FoldResult(0, Template("a {}"), 0.8, test_score=0.75)]
        table = render_fold_table("pets", results)
        assert "test" in table.splitlines()[1]
        assert "0.7500" in table


class TestCurves:
    def run_small(self, tmp_path):
        cfg = RunConfig(n_restart=1, n_reset=2, n_iter=3, m=10, k=2, seed=4)
        ledger = Ledger(tmp_path / "fold_0.ledger.jsonl")
        result = run(cfg, bench_corpus(), SyntheticOracle(bench_oracle_spec(), seed=0),
                     MockChatBackend(seed=4, vocabulary=bench_vocabulary()),
                     ClassificationTask("synthetic", 1, 0),
                     ledger=ledger, run_id="curve")
        ledger.close()
        return result

    def test_curve_starts_at_baseline_and_is_monotone(self, tmp_path):
        result = self.run_small(tmp_path)
        curve = best_so_far_curve(result.ledger.entries)
        assert curve[0][0] == 0
        assert curve[-1][0] == 6
        values = [v for _, v in curve]
        assert values == sorted(values)

    def test_calls_to_reach(self, tmp_path):
        result = self.run_small(tmp_path)
        curve = best_so_far_curve(result.ledger.entries)
        baseline = curve[0][1]
        assert calls_to_reach(result.ledger.entries, baseline) == 0
        assert calls_to_reach(result.ledger.entries, 2.0) is None

    def test_generate_report_writes_all_artifacts(self, tmp_path):
        result = self.run_small(tmp_path)
        write_summary(tmp_path, {
            "run_id": "curve", "dataset": "synthetic",
            "folds": [{"fold": 0, "best_template": result.best.text,
                       "train_score": result.best.score}],
        })
        text = generate_report(tmp_path, figures=True)
        assert "dataset: synthetic" in text
        assert (tmp_path / "report.txt").exists()
        tsv = (tmp_path / "curves.tsv").read_text().splitlines()
        assert tsv[0] == "fold\tcalls\tbest_score"
        assert len(tsv) > 1
        assert (tmp_path / "figures" / "best_so_far.png").stat().st_size > 0
