"""Fold aggregation and run reporting.

Reports come out three ways: a plain-text table, tab-delimited curve data
for downstream analysis, and rendered PNG figures of the best-so-far
trajectories.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional, Sequence

from .core import INITIAL_POOL_RESET, Ledger, LedgerEntry, Template


@dataclass(frozen=True)
class FoldResult:
    fold: int
    best_template: Template
    train_score: float
    test_score: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.train_score <= 1.0:
            raise ValueError(f"train_score outside [0,1]: {self.train_score!r}")


def aggregate_folds(values: Sequence[float]) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation."""
    if not values:
        raise ValueError("no fold results to aggregate")
    mean = sum(values) / len(values)
    variance = sum((v - mean) ** 2 for v in values) / len(values)
    return mean, math.sqrt(variance)


def best_so_far_curve(entries: Iterable[LedgerEntry]) -> list[tuple[int, float]]:
    """(proposer calls so far, best score so far) sampled at every proposal.

    A leading (0, s) point carries the best initial-pool score so the curve
    starts at the sampled baseline.
    """
    curve: list[tuple[int, float]] = []
    best = float("-inf")
    calls = 0
    seen_initial = False
    for entry in entries:
        if entry.score is not None and entry.score > best:
            best = entry.score
        if entry.reset == INITIAL_POOL_RESET:
            seen_initial = True
            continue
        if not curve and seen_initial and best > float("-inf"):
            curve.append((0, best))
        calls += 1
        if best > float("-inf"):
            curve.append((calls, best))
    if not curve and best > float("-inf"):
        curve.append((0, best))
    return curve


def calls_to_reach(entries: Iterable[LedgerEntry], threshold: float) -> Optional[int]:
    """Proposer calls spent before best-so-far first reaches threshold.

    0 means an initial template already clears it; None means the run
    never got there.
    """
    for calls, best in best_so_far_curve(entries):
        if best >= threshold:
            return calls
    return None


def final_best(entries: Iterable[LedgerEntry]) -> float:
    best = float("-inf")
    for entry in entries:
        if entry.score is not None and entry.score > best:
            best = entry.score
    if best == float("-inf"):
        raise ValueError("no scored entries")
    return best


def render_fold_table(dataset: str, results: Sequence[FoldResult]) -> str:
    """Plain-text per-fold table with the mean +/- std footer."""
    has_test = any(r.test_score is not None for r in results)
    header = ["fold", "train", "test", "best template"] if has_test else ["fold", "train", "best template"]
    rows = []
    for r in sorted(results, key=lambda r: r.fold):
        cells = [str(r.fold), f"{r.train_score:.4f}"]
        if has_test:
            cells.append(f"{r.test_score:.4f}" if r.test_score is not None else "-")
        cells.append(r.best_template.text)
        rows.append(cells)
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(header)]
    lines = [f"dataset: {dataset}"]
    lines.append("  ".join(h.ljust(widths[i]) for i, h in enumerate(header)).rstrip())
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)).rstrip())
    mean, std = aggregate_folds([r.train_score for r in results])
    lines.append(f"train mean +/- std: {mean:.4f} +/- {std:.4f}")
    if has_test:
        tested = [r.test_score for r in results if r.test_score is not None]
        tmean, tstd = aggregate_folds(tested)
        lines.append(f"test mean +/- std: {tmean:.4f} +/- {tstd:.4f}")
    return "\n".join(lines)


def render_method_table(rows: Sequence[tuple[str, float]]) -> str:
    """Comparison table of method -> average accuracy (stored numbers)."""
    name_width = max(len("method"), *(len(name) for name, _ in rows))
    lines = ["method".ljust(name_width) + "  avg"]
    for name, avg in rows:
        lines.append(name.ljust(name_width) + f"  {avg:.1f}")
    return "\n".join(lines)


def write_summary(run_dir: Path, payload: dict) -> Path:
    path = Path(run_dir) / "summary.json"
    path.write_text(json.dumps(payload, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def load_summary(run_dir: Path) -> dict:
    return json.loads((Path(run_dir) / "summary.json").read_text(encoding="utf-8"))


def write_curves_tsv(path: Path, curves: dict[int, list[tuple[int, float]]]) -> Path:
    """One row per (fold, calls) sample: fold<TAB>calls<TAB>best_score."""
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        fh.write("fold\tcalls\tbest_score\n")
        for fold in sorted(curves):
            for calls, best in curves[fold]:
                fh.write(f"{fold}\t{calls}\t{best:.6f}\n")
    return path


def render_figures(run_dir: Path, curves: dict[int, list[tuple[int, float]]]) -> list[Path]:
    """Render best-so-far trajectories to PNG under <run_dir>/figures."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    figures_dir = Path(run_dir) / "figures"
    figures_dir.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 4))
    for fold in sorted(curves):
        xs = [c for c, _ in curves[fold]]
        ys = [b for _, b in curves[fold]]
        ax.step(xs, ys, where="post", label=f"fold {fold}")
    ax.set_xlabel("proposer calls")
    ax.set_ylabel("best train score so far")
    ax.legend()
    fig.tight_layout()
    out = figures_dir / "best_so_far.png"
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return [out]


def ledger_paths(run_dir: Path) -> dict[int, Path]:
    out = {}
    for path in sorted(Path(run_dir).glob("fold_*.ledger.jsonl")):
        fold = int(path.name.split("_")[1].split(".")[0])
        out[fold] = path
    return out


def generate_report(run_dir: Path, figures: bool = True) -> str:
    """Build report.txt, curves.tsv, and figures for a finished run."""
    run_dir = Path(run_dir)
    summary = load_summary(run_dir)
    results = [
        FoldResult(
            fold=f["fold"],
            best_template=Template(f["best_template"]),
            train_score=f["train_score"],
            test_score=f.get("test_score"),
        )
        for f in summary["folds"]
    ]
    text = render_fold_table(summary["dataset"], results)
    curves = {}
    for fold, path in ledger_paths(run_dir).items():
        curves[fold] = best_so_far_curve(Ledger(path).entries)
    if curves:
        write_curves_tsv(run_dir / "curves.tsv", curves)
        if figures:
            render_figures(run_dir, curves)
    (run_dir / "report.txt").write_text(text + "\n", encoding="utf-8")
    return text
