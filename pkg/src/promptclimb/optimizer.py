"""The hill-climbing engine: restarts, resets, and conversation iterations.

Each restart samples a fresh initial prompt set, scores it once, and then
repeatedly resets to that set and climbs for a fixed number of proposal
iterations. Every proposal event lands in the ledger exactly once, which
is what makes runs resumable and budgets auditable.
"""

from __future__ import annotations

import itertools
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from .core import (
    CONV_ITERATIVE,
    CONV_MULTI_TURN,
    FEEDBACK_P_ONLY,
    INITIAL_POOL_RESET,
    ORIGIN_APE,
    ORIGIN_INITIAL,
    ORIGIN_PROPOSAL,
    Budget,
    Ledger,
    LedgerEntry,
    PromptClimbError,
    PromptPool,
    RunConfig,
    ScoredTemplate,
    Template,
    seeded_rng,
    utc_now,
)
from .evaluator import CachedScorer, ClassificationTask, ScoreBackend
from .pool import sample_initial
from .proposer import (
    ChatBackend,
    FeedbackContext,
    Message,
    ParseRejectError,
    ProposalOutcome,
    ProposerUnavailable,
    REPAIR_MESSAGE,
    build_ape_message,
    build_feedback_messages,
    parse_reply,
    propose,
)


class PoolTooSmallError(PromptClimbError):
    pass


class LedgerMismatchError(PromptClimbError):
    """Resume found ledger rows that contradict the corpus/seed."""


def select_extremes(
    pool: PromptPool, k: int, mode: str
) -> tuple[list[ScoredTemplate], list[ScoredTemplate]]:
    """Pick the prompts shown to the proposer.

    p_plus_n returns the k best (descending) and k worst (ascending);
    p_only returns the 2k best and an empty bottom. Score ties break by
    admission order, older first, and the two lists never overlap.
    """
    need = 2 * k
    if len(pool) < need:
        raise PoolTooSmallError(f"pool has {len(pool)} entries but 2k={need} are needed")
    ranked = sorted(pool, key=lambda e: (-e.score, e.seq))
    if mode == FEEDBACK_P_ONLY:
        return ranked[: 2 * k], []
    top = ranked[:k]
    bottom = sorted(ranked[-k:], key=lambda e: (e.score, e.seq))
    return top, bottom


def estimate_cost(config: RunConfig, avg_tokens_per_call: float, price_per_1k: float) -> float:
    """Projected spend for a full run at a flat tokens-per-call rate."""
    if avg_tokens_per_call <= 0:
        raise ValueError("avg_tokens_per_call must be positive")
    if price_per_1k <= 0:
        raise ValueError("price_per_1k must be positive")
    return config.total_calls * avg_tokens_per_call / 1000.0 * price_per_1k


@dataclass
class RunResult:
    best: ScoredTemplate
    ledger: Ledger
    budget: Budget
    run_id: str


class _SharedState:
    """Ledger, budget, and global-best bookkeeping shared across restarts."""

    def __init__(self, ledger: Ledger, budget: Budget):
        self.ledger = ledger
        self.budget = budget
        self.lock = threading.Lock()
        self.best_text: Optional[str] = None
        self.best_score: float = float("-inf")
        self.best_origin: str = ORIGIN_INITIAL
        self.best_index: int = -1
        self.initial_index: dict[tuple[int, int], LedgerEntry] = {}
        self.proposal_index: dict[tuple[int, int, int], LedgerEntry] = {}
        for position, entry in enumerate(ledger.entries):
            self._index(entry)
            self._track(entry, position)
            if entry.origin == ORIGIN_INITIAL:
                self.budget.add_evaluator_call()
            else:
                self.budget.add_proposer_call(entry.tokens_in, entry.tokens_out)
                if entry.score is not None and not entry.extra.get("duplicate"):
                    self.budget.add_evaluator_call()

    def _index(self, entry: LedgerEntry) -> None:
        if entry.reset == INITIAL_POOL_RESET:
            self.initial_index[(entry.restart, entry.iter)] = entry
        else:
            self.proposal_index[(entry.restart, entry.reset, entry.iter)] = entry

    def _track(self, entry: LedgerEntry, position: int) -> None:
        if entry.score is not None and entry.score > self.best_score:
            self.best_text = entry.template_text
            self.best_score = entry.score
            self.best_origin = entry.origin
            self.best_index = position

    def append(self, entry: LedgerEntry) -> None:
        with self.lock:
            position = len(self.ledger)
            self.ledger.append(entry)
            self._track(entry, position)

    def best(self) -> ScoredTemplate:
        if self.best_text is None:
            raise PromptClimbError("run produced no scored entries")
        return ScoredTemplate(
            template=Template(self.best_text),
            score=self.best_score,
            origin=self.best_origin,
            seq=self.best_index,
        )


class _RestartJob:
    """One restart: initial sampling plus its reset/iteration loops."""

    def __init__(self, engine: "_Engine", restart: int):
        self.engine = engine
        self.restart = restart
        self.seq = itertools.count(0)
        self.history: list[tuple[str, Optional[ProposalOutcome]]] = []
        self.pool: PromptPool = PromptPool()

    def execute(self) -> None:
        engine = self.engine
        config = engine.config
        rng = seeded_rng(config.seed, f"sample/{self.restart}")
        sample = sample_initial(engine.corpus, config.m, rng)
        initial_entries: list[ScoredTemplate] = []
        for idx, template in enumerate(sample):
            prior = engine.state.initial_index.get((self.restart, idx))
            if prior is not None:
                if prior.template_text != template.text:
                    raise LedgerMismatchError(
                        f"restart {self.restart} initial sample diverges from ledger at index {idx}; "
                        "resume requires the original corpus and seed"
                    )
                score = prior.score
            else:
                score = engine.scorer.score(template, task=engine.task)
                engine.state.append(
                    LedgerEntry(
                        run_id=engine.run_id,
                        restart=self.restart,
                        reset=INITIAL_POOL_RESET,
                        iter=idx,
                        template_text=template.text,
                        score=score,
                        tokens_in=0,
                        tokens_out=0,
                        origin=ORIGIN_INITIAL,
                        timestamp=utc_now(),
                    )
                )
            initial_entries.append(
                ScoredTemplate(template=template, score=score, origin=ORIGIN_INITIAL, seq=next(self.seq))
            )
        initial_pool = PromptPool(initial_entries)
        frozen_extremes = None
        if not engine.ape and config.conversation_mode != CONV_ITERATIVE:
            frozen_extremes = select_extremes(initial_pool, config.k, config.feedback_mode)
        for reset in range(config.n_reset):
            self.pool = PromptPool(initial_entries)
            self.history = []
            for it in range(config.n_iter):
                prior = engine.state.proposal_index.get((self.restart, reset, it))
                if prior is not None:
                    self._replay(prior)
                    continue
                self._iterate(reset, it, frozen_extremes)

    # -- one live iteration ---------------------------------------------

    def _iterate(self, reset: int, it: int, frozen_extremes) -> None:
        engine = self.engine
        config = engine.config
        origin = ORIGIN_APE if engine.ape else ORIGIN_PROPOSAL
        stream = f"propose/{self.restart}/{reset}/{it}"
        if engine.ape:
            messages = build_ape_message(self.pool.best().template)
        else:
            if config.conversation_mode == CONV_ITERATIVE:
                top, bottom = select_extremes(self.pool, config.k, config.feedback_mode)
                context = FeedbackContext(
                    top=tuple(top),
                    bottom=tuple(bottom),
                    k=config.k,
                    feedback_mode=config.feedback_mode,
                    conversation_mode=config.conversation_mode,
                )
            else:
                top, bottom = frozen_extremes
                context = FeedbackContext(
                    top=tuple(top),
                    bottom=tuple(bottom),
                    k=config.k,
                    feedback_mode=config.feedback_mode,
                    conversation_mode=config.conversation_mode,
                    history=tuple(self.history) if config.conversation_mode == CONV_MULTI_TURN else (),
                )
            messages = build_feedback_messages(context)

        def log(template_text: str, score, tokens_in: int, tokens_out: int, extra: dict) -> None:
            engine.state.append(
                LedgerEntry(
                    run_id=engine.run_id,
                    restart=self.restart,
                    reset=reset,
                    iter=it,
                    template_text=template_text,
                    score=score,
                    tokens_in=tokens_in,
                    tokens_out=tokens_out,
                    origin=origin,
                    timestamp=utc_now(),
                    extra=extra,
                )
            )

        try:
            reply = propose(
                engine.backend,
                messages,
                config.proposer_temperature,
                budget=engine.budget,
                stream=stream,
                max_retries=engine.proposer_retries,
                backoff=engine.retry_backoff,
                sleep=engine.retry_sleep,
            )
        except ProposerUnavailable as exc:
            log("", None, 0, 0, {"error": str(exc)})
            return
        raw, tokens_in, tokens_out = reply.text, reply.tokens_in, reply.tokens_out
        try:
            template = parse_reply(raw)
        except ParseRejectError:
            repair = list(messages) + [Message("assistant", raw), Message("user", REPAIR_MESSAGE)]
            try:
                retry = propose(
                    engine.backend,
                    repair,
                    config.proposer_temperature,
                    budget=engine.budget,
                    stream=stream + "/repair",
                    max_retries=engine.proposer_retries,
                    backoff=engine.retry_backoff,
                    sleep=engine.retry_sleep,
                )
                tokens_in += retry.tokens_in
                tokens_out += retry.tokens_out
                raw = retry.text
                template = parse_reply(raw)
            except (ProposerUnavailable, ParseRejectError):
                extra = {"rejected": "no_placeholder"}
                self._stash_raw(extra, raw, None)
                log(raw, None, tokens_in, tokens_out, extra)
                if engine.config.conversation_mode == CONV_MULTI_TURN:
                    self.history.append((raw, None))
                return
        prev_max = self.pool.max_score()
        known = self.pool.get(template.text)
        extra: dict = {}
        if known is not None:
            score = known.score
            extra["duplicate"] = True
        else:
            score = engine.scorer.score(template, task=engine.task)
            self.pool.admit(template, score, origin, next(self.seq))
        improved = score > prev_max
        self._stash_raw(extra, raw, template.text)
        log(template.text, score, tokens_in, tokens_out, extra)
        if engine.config.conversation_mode == CONV_MULTI_TURN and not engine.ape:
            self.history.append((raw, ProposalOutcome(template.text, score, improved)))

    def _stash_raw(self, extra: dict, raw: str, parsed_text: Optional[str]) -> None:
        # raw replies only matter for rebuilding multi-turn context on resume
        if self.engine.config.conversation_mode == CONV_MULTI_TURN and raw != parsed_text:
            extra["raw_reply"] = raw

    # -- replaying a prior iteration from the ledger ----------------------

    def _replay(self, entry: LedgerEntry) -> None:
        multi_turn = self.engine.config.conversation_mode == CONV_MULTI_TURN and not self.engine.ape
        raw = entry.extra.get("raw_reply", entry.template_text)
        if entry.score is None:
            if multi_turn and entry.template_text:
                self.history.append((raw, None))
            return
        prev_max = self.pool.max_score()
        if not entry.extra.get("duplicate"):
            self.pool.admit(
                Template(entry.template_text), entry.score, entry.origin, next(self.seq)
            )
        if multi_turn:
            improved = entry.score > prev_max
            self.history.append((raw, ProposalOutcome(entry.template_text, entry.score, improved)))


class _Engine:
    def __init__(
        self,
        config: RunConfig,
        corpus: Sequence[Template],
        scorer: ScoreBackend,
        backend: ChatBackend,
        task: ClassificationTask,
        ledger: Ledger,
        run_id: str,
        budget: Optional[Budget],
        ape: bool,
        proposer_retries: int,
        retry_backoff: float,
        retry_sleep: Callable[[float], None],
    ):
        self.config = config
        self.corpus = corpus
        self.task = task
        self.run_id = run_id
        self.ape = ape
        self.budget = budget if budget is not None else Budget()
        if isinstance(scorer, CachedScorer):
            if scorer.budget is None:
                scorer.budget = self.budget
        else:
            scorer = CachedScorer(scorer, budget=self.budget)
        self.scorer = scorer
        self.backend = backend
        self.state = _SharedState(ledger, self.budget)
        self.proposer_retries = proposer_retries
        self.retry_backoff = retry_backoff
        self.retry_sleep = retry_sleep

    def run(self, jobs: int) -> RunResult:
        restarts = range(self.config.n_restart)
        if jobs <= 1:
            for r in restarts:
                _RestartJob(self, r).execute()
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                futures = [pool.submit(_RestartJob(self, r).execute) for r in restarts]
                for future in futures:
                    future.result()
        return RunResult(
            best=self.state.best(),
            ledger=self.state.ledger,
            budget=self.budget,
            run_id=self.run_id,
        )


def run(
    config: RunConfig,
    corpus: Sequence[Template],
    scorer: ScoreBackend,
    backend: ChatBackend,
    task: ClassificationTask,
    *,
    ledger: Optional[Ledger] = None,
    run_id: str = "run",
    budget: Optional[Budget] = None,
    jobs: int = 1,
    proposer_retries: int = 2,
    retry_backoff: float = 0.5,
    retry_sleep: Callable[[float], None] = time.sleep,
) -> RunResult:
    """Execute the full restart/reset/iteration search and return the
    global best template plus the complete ledger.

    If ``ledger`` already holds rows for this run, completed events are
    skipped and the run continues from the first missing one, so a killed
    process can be resumed by rerunning with the same arguments.
    """
    if len(corpus) < config.m:
        raise PoolTooSmallError(f"corpus has {len(corpus)} templates but m={config.m} requested")
    engine = _Engine(
        config, corpus, scorer, backend, task,
        ledger if ledger is not None else Ledger(),
        run_id, budget, False, proposer_retries, retry_backoff, retry_sleep,
    )
    return engine.run(jobs)


def run_ape_baseline(
    config: RunConfig,
    corpus: Sequence[Template],
    scorer: ScoreBackend,
    backend: ChatBackend,
    task: ClassificationTask,
    *,
    ledger: Optional[Ledger] = None,
    run_id: str = "run",
    budget: Optional[Budget] = None,
    jobs: int = 1,
    proposer_retries: int = 2,
    retry_backoff: float = 0.5,
    retry_sleep: Callable[[float], None] = time.sleep,
) -> RunResult:
    """Same loop shape and budget as ``run`` but every iteration asks for
    a paraphrase of the current best template instead of sending scored
    extremes, giving the single-template baseline a fair comparison."""
    if len(corpus) < config.m:
        raise PoolTooSmallError(f"corpus has {len(corpus)} templates but m={config.m} requested")
    engine = _Engine(
        config, corpus, scorer, backend, task,
        ledger if ledger is not None else Ledger(),
        run_id, budget, True, proposer_retries, retry_backoff, retry_sleep,
    )
    return engine.run(jobs)
