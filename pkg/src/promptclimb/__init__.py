"""Black-box prompt search for vision-language models.

A chat LLM proposes candidate templates, a pluggable evaluator scores
them, and a restart/reset/iteration hill climber keeps the best. The same
conversational machinery drives text-to-image prompt refinement and
prompt inversion.
"""

from .core import (
    Budget,
    Ledger,
    LedgerEntry,
    PromptPool,
    RunConfig,
    ScoredTemplate,
    Template,
    best_so_far,
    seeded_rng,
)
from .evaluator import (
    CachedScorer,
    ClassificationTask,
    RemoteScorer,
    SyntheticOracle,
    SyntheticOracleSpec,
    cached,
    render_class_prompts,
)
from .optimizer import RunResult, estimate_cost, run, run_ape_baseline, select_extremes
from .pool import AnnotatedCaption, build_pool, load_corpus, sample_initial, templatize
from .proposer import (
    FeedbackContext,
    MockChatBackend,
    OpenAIChatBackend,
    build_ape_message,
    build_feedback_messages,
    mock_propose,
    parse_reply,
    propose,
)
from .report import FoldResult, aggregate_folds
from .t2i import (
    CriticReply,
    ImageRef,
    MockCritic,
    MockGenerator,
    customize,
    generate_image,
    invert_prompt,
    parse_critic_reply,
    t2i_optimize,
)

__version__ = "0.1.0"

__all__ = [
    "Budget", "Ledger", "LedgerEntry", "PromptPool", "RunConfig", "ScoredTemplate",
    "Template", "best_so_far", "seeded_rng",
    "CachedScorer", "ClassificationTask", "RemoteScorer", "SyntheticOracle",
    "SyntheticOracleSpec", "cached", "render_class_prompts",
    "RunResult", "estimate_cost", "run", "run_ape_baseline", "select_extremes",
    "AnnotatedCaption", "build_pool", "load_corpus", "sample_initial", "templatize",
    "FeedbackContext", "MockChatBackend", "OpenAIChatBackend", "build_ape_message",
    "build_feedback_messages", "mock_propose", "parse_reply", "propose",
    "FoldResult", "aggregate_folds",
    "CriticReply", "ImageRef", "MockCritic", "MockGenerator", "customize",
    "generate_image", "invert_prompt", "parse_critic_reply", "t2i_optimize",
]
