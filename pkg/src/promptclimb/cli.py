"""Command-line surface: pool building, optimization runs, reports, cost."""

from __future__ import annotations

import json
import time
from pathlib import Path
from typing import Optional

import click

from . import optimizer, report, synthbench, t2i
from .core import Budget, ConfigError, Ledger, RunConfig
from .evaluator import CachedScorer, ClassificationTask, RemoteScorer, SyntheticOracle
from .pool import annotate_naively, build_pool, load_corpus
from .proposer import MockChatBackend, OpenAIChatBackend, RecordingBackend, ReplayBackend

CONFIG_KEYS = {
    "n_restart": int,
    "n_reset": int,
    "n_iter": int,
    "m": int,
    "k": int,
    "feedback_mode": str,
    "conversation_mode": str,
    "proposer_temperature": float,
    "seed": int,
    "shots": int,
    "folds": str,
}


def _parse_folds(raw: str) -> tuple[int, ...]:
    return tuple(int(f) for f in str(raw).replace(" ", "").split(",") if f != "")


def load_config_file(path: Path) -> dict:
    """Flat key=value config; keys are the RunConfig field names."""
    values: dict = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if key not in CONFIG_KEYS:
            raise ConfigError(f"{path}:{lineno}: unknown config key {key!r}")
        values[key] = CONFIG_KEYS[key](value)
    if "folds" in values:
        values["folds"] = _parse_folds(values["folds"])
    return values


def build_run_config(file_values: dict, flag_values: dict) -> RunConfig:
    """flag > config file > built-in default."""
    merged = dict(file_values)
    for key, value in flag_values.items():
        if value is not None:
            merged[key] = value
    if isinstance(merged.get("folds"), str):
        merged["folds"] = _parse_folds(merged["folds"])
    return RunConfig(**merged)


def fmt_money(value: float) -> str:
    text = f"{value:.4f}".rstrip("0")
    whole, _, frac = text.partition(".")
    frac = frac.ljust(2, "0")
    return f"${whole}.{frac}"


@click.group()
@click.version_option(package_name="promptclimb")
def main() -> None:
    """Search natural-language prompts for vision-language models."""


# --- pool -------------------------------------------------------------------


@main.group("pool")
def pool_group() -> None:
    """Build and inspect template corpora."""


@pool_group.command("build")
@click.option("--annotations", type=click.Path(exists=True, path_type=Path),
              help="JSONL with caption + noun_phrases spans.")
@click.option("--captions", type=click.Path(exists=True, path_type=Path),
              help="Raw caption lines; spans come from the naive chunker.")
@click.option("--out", required=True, type=click.Path(path_type=Path))
@click.option("--max-captions", type=int, default=None)
def pool_build(annotations: Optional[Path], captions: Optional[Path], out: Path,
               max_captions: Optional[int]) -> None:
    """Turn annotated captions into a deduplicated template corpus."""
    if (annotations is None) == (captions is None):
        raise click.UsageError("give exactly one of --annotations or --captions")
    if annotations is not None:
        stream = annotations.read_text(encoding="utf-8").splitlines()
    else:
        stream = []
        for line in captions.read_text(encoding="utf-8").splitlines():
            line = line.strip()
            if not line:
                continue
            annotated = annotate_naively(line)
            stream.append(json.dumps(
                {"caption": annotated.caption, "noun_phrases": list(annotated.noun_phrase_spans)}
            ))
    result = build_pool(stream, out, max_captions=max_captions)
    for key, value in result.as_dict().items():
        click.echo(f"{key}: {value}")


# --- optimize -----------------------------------------------------------------


@main.group("optimize")
def optimize_group() -> None:
    """Run a prompt search."""


_CONFIG_OPTIONS = [
    click.option("--restarts", "n_restart", type=int, default=None),
    click.option("--resets", "n_reset", type=int, default=None),
    click.option("--iters", "n_iter", type=int, default=None),
    click.option("--m", "m", type=int, default=None),
    click.option("--k", "k", type=int, default=None),
    click.option("--feedback-mode", "feedback_mode",
                 type=click.Choice(["p_only", "p_plus_n"]), default=None),
    click.option("--conversation-mode", "conversation_mode",
                 type=click.Choice(["multi_turn", "iterative", "non_iterative"]), default=None),
    click.option("--temperature", "proposer_temperature", type=float, default=None),
    click.option("--seed", "seed", type=int, default=None),
    click.option("--shots", "shots", type=int, default=None),
    click.option("--folds", "folds", type=str, default=None),
]


def _with_config_options(fn):
    for option in reversed(_CONFIG_OPTIONS):
        fn = option(fn)
    return fn


def _classify_options(fn):
    fn = click.option("--corpus", "corpus_path", type=click.Path(exists=True, path_type=Path),
                      help="Template corpus; defaults to the built-in synthetic one with --mock.")(fn)
    fn = click.option("--dataset", default="synthetic", show_default=True)(fn)
    fn = click.option("--config", "config_path", type=click.Path(exists=True, path_type=Path))(fn)
    fn = click.option("--out", "out_dir", type=click.Path(path_type=Path), default=Path("runs"),
                      show_default=True)(fn)
    fn = click.option("--run-id", default=None, help="Defaults to <dataset>-<timestamp>.")(fn)
    fn = click.option("--resume", "resume_id", default=None,
                      help="Resume the run with this id from its ledger.")(fn)
    fn = click.option("--mock", is_flag=True, help="Swap all backends to deterministic mocks.")(fn)
    fn = click.option("--mock-proposer", is_flag=True, help="Mock only the chat backend.")(fn)
    fn = click.option("--endpoint", default=None, help="Scoring service base URL.")(fn)
    fn = click.option("--chat-model", default="gpt-3.5-turbo", show_default=True)(fn)
    fn = click.option("--chat-endpoint", default="https://api.openai.com/v1", show_default=True)(fn)
    fn = click.option("--api-key-env", default="OPENAI_API_KEY", show_default=True)(fn)
    fn = click.option("--record", "record_path", type=click.Path(path_type=Path),
                      help="Record proposer transcripts to this fixture file.")(fn)
    fn = click.option("--replay", "replay_path", type=click.Path(exists=True, path_type=Path),
                      help="Serve proposer replies from a recorded fixture.")(fn)
    fn = click.option("--jobs", type=int, default=1, show_default=True,
                      help="Restart-level parallelism.")(fn)
    fn = click.option("--oracle-seed", type=int, default=0, show_default=True,
                      help="Landscape seed for the synthetic oracle.")(fn)
    fn = click.option("--price", type=float, default=0.0015, show_default=True,
                      help="Dollars per 1k tokens, for budget accounting.")(fn)
    fn = _with_config_options(fn)
    return fn


def _run_classification(ape: bool, corpus_path, dataset, config_path, out_dir, run_id,
                        resume_id, mock, mock_proposer, endpoint, chat_model, chat_endpoint,
                        api_key_env, record_path, replay_path, jobs, oracle_seed, price,
                        **config_flags) -> None:
    out_dir = Path(out_dir)
    if resume_id:
        run_id = resume_id
        run_dir = out_dir / run_id
        if not run_dir.exists():
            raise click.ClickException(f"cannot resume: {run_dir} does not exist")
        stored = json.loads((run_dir / "config.json").read_text(encoding="utf-8"))
        stored_cfg = dict(stored["config"])
        stored_cfg["folds"] = tuple(stored_cfg["folds"])
        cfg = RunConfig(**stored_cfg)
        # the stored run owns its strategy and dataset; flags cannot change them
        dataset = stored.get("dataset", dataset)
        if stored.get("ape", False) != ape:
            click.echo(f"note: resuming a {'paraphrase' if stored.get('ape') else 'feedback'} "
                       "run; keeping its original strategy")
        ape = stored.get("ape", False)
    else:
        file_values = load_config_file(config_path) if config_path else {}
        try:
            cfg = build_run_config(file_values, config_flags)
        except ConfigError as exc:
            raise click.ClickException(str(exc))
        run_id = run_id or f"{dataset}-{time.strftime('%Y%m%d-%H%M%S')}"
        run_dir = out_dir / run_id
        if run_dir.exists():
            raise click.ClickException(f"{run_dir} already exists; pass --resume {run_id} to continue it")
        run_dir.mkdir(parents=True)
        (run_dir / "config.json").write_text(
            json.dumps(
                {"run_id": run_id, "dataset": dataset, "ape": ape,
                 "config": {**cfg.__dict__, "folds": list(cfg.folds)}},
                indent=2,
            ) + "\n",
            encoding="utf-8",
        )

    if corpus_path is not None:
        corpus = load_corpus(corpus_path)
    elif mock:
        corpus = synthbench.bench_corpus()
    else:
        raise click.UsageError("--corpus is required unless --mock supplies the built-in one")

    budget = Budget(price_per_1k_tokens=price)
    if mock:
        scorer_backend = SyntheticOracle(synthbench.bench_oracle_spec(), seed=oracle_seed)
    elif endpoint:
        scorer_backend = RemoteScorer(endpoint)
    else:
        raise click.UsageError("give --endpoint for live scoring or --mock for the synthetic oracle")
    scorer = CachedScorer(scorer_backend, path=run_dir / "score_cache.jsonl", budget=budget)

    if replay_path:
        backend = ReplayBackend(replay_path)
    elif mock or mock_proposer:
        backend = MockChatBackend(seed=cfg.seed, vocabulary=synthbench.bench_vocabulary())
    else:
        backend = OpenAIChatBackend(model=chat_model, endpoint=chat_endpoint, api_key_env=api_key_env)
    if record_path:
        backend = RecordingBackend(backend, record_path)

    run_fn = optimizer.run_ape_baseline if ape else optimizer.run
    results = []
    for fold in cfg.folds:
        task = ClassificationTask(dataset_id=dataset, shots=cfg.shots, fold=fold)
        ledger = Ledger(run_dir / f"fold_{fold}.ledger.jsonl")
        try:
            outcome = run_fn(cfg, corpus, scorer, backend, task,
                             ledger=ledger, run_id=f"{run_id}/fold{fold}",
                             budget=budget, jobs=jobs)
        finally:
            ledger.close()
        results.append(report.FoldResult(fold=fold, best_template=outcome.best.template,
                                         train_score=outcome.best.score))
        click.echo(f"fold {fold}: best train score {outcome.best.score:.4f} "
                   f"with {outcome.best.template.text!r}")
    mean, std = report.aggregate_folds([r.train_score for r in results])
    report.write_summary(run_dir, {
        "run_id": run_id,
        "dataset": dataset,
        "ape": ape,
        "config": {**cfg.__dict__, "folds": list(cfg.folds)},
        "folds": [
            {"fold": r.fold, "best_template": r.best_template.text, "train_score": r.train_score}
            for r in results
        ],
        "train_mean": mean,
        "train_std": std,
        "budget": budget.snapshot(),
    })
    click.echo(f"train mean +/- std: {mean:.4f} +/- {std:.4f}")
    click.echo(f"run directory: {run_dir}")


@optimize_group.command("classify")
@_classify_options
def optimize_classify(**kwargs) -> None:
    """Hill-climb a classification template with conversational feedback."""
    _run_classification(ape=False, **kwargs)


@optimize_group.command("ape")
@_classify_options
def optimize_ape(**kwargs) -> None:
    """Paraphrase-only baseline under the identical call budget."""
    _run_classification(ape=True, **kwargs)


def _generative_backends(mock: bool, seed: int, chat_endpoint: str, api_key_env: str,
                         image_model: str, critic_model: str):
    if mock:
        return t2i.MockGenerator(), t2i.MockCritic(seed=seed)
    generator = t2i.OpenAIImageGenerator(model=image_model, endpoint=chat_endpoint,
                                         api_key_env=api_key_env)
    critic = t2i.OpenAIVisionCritic(model=critic_model, endpoint=chat_endpoint,
                                    api_key_env=api_key_env)
    return generator, critic


def _generative_options(fn):
    fn = click.option("--queries", "queries_path", required=True,
                      type=click.Path(exists=True, path_type=Path))(fn)
    fn = click.option("--out", "out_dir", type=click.Path(path_type=Path), default=Path("t2i-runs"),
                      show_default=True)(fn)
    fn = click.option("--rounds", type=int, default=3, show_default=True)(fn)
    fn = click.option("--mock", is_flag=True)(fn)
    fn = click.option("--seed", type=int, default=0, show_default=True)(fn)
    fn = click.option("--chat-endpoint", default="https://api.openai.com/v1", show_default=True)(fn)
    fn = click.option("--api-key-env", default="OPENAI_API_KEY", show_default=True)(fn)
    fn = click.option("--image-model", default="dall-e-3", show_default=True)(fn)
    fn = click.option("--critic-model", default="gpt-4-1106-preview", show_default=True)(fn)
    return fn


@optimize_group.command("t2i")
@_generative_options
def optimize_t2i(queries_path, out_dir, rounds, mock, seed, chat_endpoint, api_key_env,
                 image_model, critic_model) -> None:
    """Refine text-to-image prompts for the t2i queries in a file."""
    generator, critic = _generative_backends(mock, seed, chat_endpoint, api_key_env,
                                             image_model, critic_model)
    out_dirs = t2i.run_query_file(queries_path, out_dir, generator, critic, rounds, kinds=("t2i",))
    for path in out_dirs:
        click.echo(f"wrote {path}")


@optimize_group.command("invert")
@_generative_options
def optimize_invert(queries_path, out_dir, rounds, mock, seed, chat_endpoint, api_key_env,
                    image_model, critic_model) -> None:
    """Reverse-engineer prompts for the invert queries in a file."""
    generator, critic = _generative_backends(mock, seed, chat_endpoint, api_key_env,
                                             image_model, critic_model)
    out_dirs = t2i.run_query_file(queries_path, out_dir, generator, critic, rounds,
                                  kinds=("invert",))
    for path in out_dirs:
        click.echo(f"wrote {path}")


# --- report -------------------------------------------------------------------


@main.command("report")
@click.argument("run_id")
@click.option("--runs-dir", type=click.Path(path_type=Path), default=Path("runs"), show_default=True)
@click.option("--figures/--no-figures", default=True, show_default=True)
@click.option("--endpoint", default=None,
              help="Scoring service URL; adds test-split scores for each fold best.")
def report_command(run_id: str, runs_dir: Path, figures: bool, endpoint: Optional[str]) -> None:
    """Render the table, curve data, and figures for a finished run."""
    run_dir = Path(run_id) if Path(run_id).is_dir() else runs_dir / run_id
    if not run_dir.is_dir():
        raise click.ClickException(f"no run directory at {run_dir}")
    if endpoint:
        summary = report.load_summary(run_dir)
        scorer = RemoteScorer(endpoint)
        from .core import Template

        for fold_row in summary["folds"]:
            task = ClassificationTask(
                dataset_id=summary["dataset"],
                shots=summary["config"]["shots"],
                fold=fold_row["fold"],
                split="test",
            )
            fold_row["test_score"] = scorer.score(Template(fold_row["best_template"]), task)
        report.write_summary(run_dir, summary)
    try:
        text = report.generate_report(run_dir, figures=figures)
    except FileNotFoundError as exc:
        raise click.ClickException(f"run is incomplete: {exc}")
    click.echo(text)


# --- cost ---------------------------------------------------------------------


@main.command("cost")
@click.option("--restarts", type=int, default=20, show_default=True)
@click.option("--resets", type=int, default=50, show_default=True)
@click.option("--iters", type=int, default=10, show_default=True)
@click.option("--tokens", type=float, default=500, show_default=True,
              help="Average tokens per proposer call.")
@click.option("--price", type=float, default=0.0015, show_default=True,
              help="Dollars per 1k tokens.")
@click.option("--datasets", type=int, default=1, show_default=True)
def cost_command(restarts: int, resets: int, iters: int, tokens: float, price: float,
                 datasets: int) -> None:
    """Estimate the proposer spend for a run configuration."""
    try:
        cfg = RunConfig(n_restart=restarts, n_reset=resets, n_iter=iters)
        total = optimizer.estimate_cost(cfg, tokens, price)
    except (ConfigError, ValueError) as exc:
        raise click.ClickException(str(exc))
    per_restart = total / restarts
    calls = cfg.calls_per_restart
    click.echo(f"per restart ({calls} calls, {int(calls * tokens):,} tokens): {fmt_money(per_restart)}")
    click.echo(f"per dataset-fold ({restarts} restarts): {fmt_money(total)}")
    if datasets > 1:
        click.echo(f"suite estimate ({datasets} datasets): {fmt_money(total * datasets)}")


if __name__ == "__main__":
    main()
