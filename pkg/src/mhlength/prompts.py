"""Conversation rendering for sampling, proposals, importance proposals and judging.

Template wording lives in ``templates/<family>/<kind>.txt`` so it can be
audited or swapped without touching code. Turns are introduced by ``[SYSTEM]``,
``[USER]`` or ``[ASSISTANT]`` lines; placeholders are ``{x}``, ``{ℓ}``,
``{len}``, ``{dev}``, ``{y_prev}``, ``{y_new}``, ``{criteria}``, ``{format}``
and ``{max_total}``.
"""

from __future__ import annotations

import enum
import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional

from .constraint import Exact, Interval, LengthConstraint, deviation, signed_deviation
from .llm import ChatMessage

DEFAULT_REGIME_THRESHOLD = 3

TEMPLATE_KINDS = (
    "initial",
    "answer",
    "proposal",
    "importance_loose_long",
    "importance_loose_short",
    "importance_exact_long",
    "importance_exact_short",
    "judge",
)


class TaskKind(str, enum.Enum):
    SUMMARIZATION = "summ"
    INSTRUCTION = "instr"
    MATH = "math"

    @property
    def family(self) -> str:
        return "summarization" if self is TaskKind.SUMMARIZATION else "instruction"

    @property
    def criteria_file(self) -> str:
        return {"summ": "summarization", "instr": "instruction", "math": "math"}[self.value]

    @classmethod
    def parse(cls, value) -> "TaskKind":
        if isinstance(value, cls):
            return value
        aliases = {
            "summ": "summ", "summarization": "summ",
            "instr": "instr", "instruction": "instr",
            "math": "math", "math_instruction": "math", "mathinstruction": "math",
        }
        try:
            return cls(aliases[str(value).lower()])
        except KeyError:
            raise ValueError(f"unknown task kind {value!r}") from None


class PromptError(ValueError):
    pass


class MissingDemo(PromptError):
    pass


class AlreadySatisfied(PromptError):
    pass


@dataclass(frozen=True)
class Demo:
    """One-shot demonstration ``(document, summary, length)``."""

    document: str
    summary: str
    length: int
    id: Optional[str] = None


@dataclass(frozen=True)
class Problem:
    id: str
    task: TaskKind
    input: str
    constraint: LengthConstraint
    reference: Optional[str] = None
    demo: Optional[Demo] = None

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind.parse(self.task))
        if not self.input.strip():
            raise PromptError(f"problem {self.id!r}: empty input")
        if self.task is TaskKind.SUMMARIZATION and not isinstance(self.constraint, Exact):
            raise PromptError(f"problem {self.id!r}: summarization templates need an exact target")
        if self.task is not TaskKind.SUMMARIZATION:
            if not isinstance(self.constraint, Interval) or self.constraint.upper is None:
                raise PromptError(f"problem {self.id!r}: instruction templates need a bounded interval")

    @property
    def target_words(self) -> int:
        """The number the templates quote as ``ℓ``."""
        if isinstance(self.constraint, Exact):
            return self.constraint.target
        return self.constraint.upper


_TURN_RE = re.compile(r"^\[(SYSTEM|USER|ASSISTANT)\]\s*$", re.MULTILINE)
_PLACEHOLDER_RE = re.compile(r"\{([^{}\s]+)\}")


@lru_cache(maxsize=None)
def _read(rel: str) -> str:
    return resources.files(__package__).joinpath(f"templates/{rel}").read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def load_template(family: str, kind: str) -> tuple[tuple[str, str], ...]:
    """Parse a template file into ``(role, body)`` turns."""
    text = _read(f"{family}/{kind}.txt")
    parts = _TURN_RE.split(text)
    if parts[0].strip():
        raise PromptError(f"{family}/{kind}: text before the first turn marker")
    turns = []
    for role, body in zip(parts[1::2], parts[2::2]):
        turns.append((role.lower(), body.strip("\n")))
    return tuple(turns)


def template_hashes() -> dict[str, str]:
    out = {}
    for family in ("summarization", "instruction"):
        for kind in TEMPLATE_KINDS:
            out[f"{family}/{kind}"] = hashlib.sha256(_read(f"{family}/{kind}.txt").encode()).hexdigest()[:16]
    for name in ("summarization", "instruction", "math"):
        out[f"criteria/{name}"] = hashlib.sha256(_read(f"criteria/{name}.txt").encode()).hexdigest()[:16]
    return out


def _substitute(body: str, values: dict) -> str:
    def repl(m: re.Match) -> str:
        key = m.group(1)
        if key not in values:
            raise PromptError(f"no value for placeholder {{{key}}}")
        return str(values[key])

    # single pass, so braces inside substituted values are left alone
    return _PLACEHOLDER_RE.sub(repl, body)


def _render(family: str, kind: str, **values) -> list[ChatMessage]:
    return [ChatMessage(role, _substitute(body, values)) for role, body in load_template(family, kind)]


def criteria(task: TaskKind) -> list[tuple[str, str]]:
    """``(name, question)`` pairs of the judge criteria for ``task``."""
    rows = []
    for line in _read(f"criteria/{TaskKind.parse(task).criteria_file}.txt").splitlines():
        if line.strip():
            name, _, question = line.partition(":")
            rows.append((name.strip(), question.strip()))
    return rows


def max_total(task: TaskKind) -> int:
    return 10 * len(criteria(task))


def format_block(task: TaskKind) -> str:
    names = [name for name, _ in criteria(task)]
    total = max_total(task)
    lines = []
    for slot in (1, 2):
        lines.append(f"#### Response {slot}:")
        lines.extend(f"{i}. {name}: [Score]/10" for i, name in enumerate(names, 1))
        lines.append(f"**Overall Score:** [Total Score]/{total}")
    lines += [
        "### Conclusion:",
        "- **Better Response:** [Response 1/Response 2].",
        "- **Score Ratio (Response 1 ÷ Response 2):** [Ratio, rounded to two decimal places].",
    ]
    return "\n".join(lines)


def _criteria_block(task: TaskKind) -> str:
    return "\n".join(f"{i}. **{name}:** {q}" for i, (name, q) in enumerate(criteria(task), 1))


def render_initial(problem: Problem, one_shot: bool = True) -> list[ChatMessage]:
    family = problem.task.family
    turns = _render(family, "initial", x=problem.input, **{"ℓ": problem.target_words})
    if problem.task is TaskKind.SUMMARIZATION and one_shot:
        demo = problem.demo
        if demo is None:
            raise MissingDemo(f"problem {problem.id!r}: one-shot summarization needs a demo")
        head = [t for t in turns if t.role == "system"]
        demo_turns = _render(family, "initial", x=demo.document, **{"ℓ": demo.length})
        demo_user = [t for t in demo_turns if t.role == "user"]
        answer = _render(family, "answer", y_prev=demo.summary)
        turns = head + demo_user + answer + [t for t in turns if t.role != "system"]
    return turns


def _followup(problem: Problem, previous_text: str, kind: str, one_shot: bool, **values) -> list[ChatMessage]:
    if not previous_text or not previous_text.strip():
        raise PromptError("previous_text must be non-empty")
    family = problem.task.family
    return (
        render_initial(problem, one_shot=one_shot)
        + _render(family, "answer", y_prev=previous_text)
        + _render(family, kind, **values)
    )


def render_proposal(problem: Problem, previous_text: str, one_shot: bool = True) -> list[ChatMessage]:
    """Symmetric proposal: regenerate with no length feedback."""
    return _followup(problem, previous_text, "proposal", one_shot)


def importance_kind(previous_count: int, constraint: LengthConstraint, regime_threshold: int = DEFAULT_REGIME_THRESHOLD) -> str:
    signed = signed_deviation(previous_count, constraint)
    if signed == 0:
        raise AlreadySatisfied("constraint already satisfied; no proposal needed")
    regime = "exact" if abs(signed) <= regime_threshold else "loose"
    return f"importance_{regime}_{'long' if signed > 0 else 'short'}"


def render_importance(
    problem: Problem,
    previous_text: str,
    previous_count: int,
    regime_threshold: int = DEFAULT_REGIME_THRESHOLD,
    one_shot: bool = True,
) -> list[ChatMessage]:
    """Length-feedback proposal: loose rewrite when far, add/delete-k when close."""
    kind = importance_kind(previous_count, problem.constraint, regime_threshold)
    c = problem.constraint
    if isinstance(c, Interval) and previous_count < c.lower:
        bound = c.lower
    else:
        bound = problem.target_words
    return _followup(
        problem,
        previous_text,
        kind,
        one_shot,
        **{"len": previous_count, "dev": deviation(previous_count, c), "ℓ": bound},
    )


def render_judge(problem: Problem, candidate_new: str, candidate_prev: str) -> list[ChatMessage]:
    """Pairwise comparison prompt; ``candidate_new`` always sits in slot 1."""
    if not candidate_new.strip() or not candidate_prev.strip():
        raise PromptError("both candidates must be non-empty")
    return _render(
        problem.task.family,
        "judge",
        x=problem.input,
        y_new=candidate_new,
        y_prev=candidate_prev,
        criteria=_criteria_block(problem.task),
        format=format_block(problem.task),
        max_total=max_total(problem.task),
    )


_FRAMING_RE = re.compile(r"^\s*(?:\*\*)?(?:answer|summary)(?:\*\*)?\s*:(?:\*\*)?\s*", re.IGNORECASE)


def strip_framing(text: str) -> str:
    """Drop a leading ``Answer:`` / ``Summary:`` label the model may echo back."""
    return _FRAMING_RE.sub("", text, count=1).strip()
