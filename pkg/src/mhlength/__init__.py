"""Metropolis-Hastings length control for black-box chat LLMs."""

from .constraint import (
    ConstraintScore,
    Exact,
    Interval,
    constraint_score,
    count_words,
    deviation,
    is_satisfied,
)
from .estimator import LengthController
from .harness import load_dataset, run_experiment, summarize
from .judge import Judge, estimate_ratio, parse_judge_output
from .llm import ChatMessage, CompletionResult, GenerationParams, OpenAICompatProvider
from .metrics import EvalSummary, accuracy, l1, l2, mean_convergence_steps, rouge_l, rouge_n
from .mockllm import Discrete, MockBehavior, MockProvider
from .prompts import Demo, Problem, TaskKind
from .sampler import Method, SamplerConfig, acceptance_probability, run_beams, run_chain, run_inst, run_rand

__version__ = "0.1.0"

__all__ = [
    "acceptance_probability",
    "accuracy",
    "ChatMessage",
    "CompletionResult",
    "constraint_score",
    "ConstraintScore",
    "count_words",
    "Demo",
    "deviation",
    "Discrete",
    "estimate_ratio",
    "EvalSummary",
    "Exact",
    "GenerationParams",
    "Interval",
    "is_satisfied",
    "Judge",
    "l1",
    "l2",
    "LengthController",
    "load_dataset",
    "mean_convergence_steps",
    "Method",
    "MockBehavior",
    "MockProvider",
    "OpenAICompatProvider",
    "parse_judge_output",
    "Problem",
    "rouge_l",
    "rouge_n",
    "run_beams",
    "run_chain",
    "run_experiment",
    "run_inst",
    "run_rand",
    "SamplerConfig",
    "summarize",
    "TaskKind",
]
