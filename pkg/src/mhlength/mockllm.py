"""Deterministic fake provider for offline runs and tests.

The mock reads the same template phrases a real model would see, works out
which request it is looking at (initial sample, symmetric proposal, loose or
exact importance proposal, pairwise judge) and answers with synthetic text of
a controlled word count.
"""

from __future__ import annotations

import hashlib
import json
import random
import re
import threading
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

from .constraint import count_words
from .llm import BatchMixin, ChatMessage, CompletionResult, GenerationParams, LLMError, validate_conversation
from .prompts import criteria, strip_framing, TaskKind


class UnclassifiableConversation(LLMError):
    pass


@dataclass(frozen=True)
class Discrete:
    """Finite distribution over integers (uniform unless ``weights`` given)."""

    values: tuple[int, ...]
    weights: Optional[tuple[float, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(int(v) for v in self.values))
        if not self.values:
            raise ValueError("distribution needs at least one value")
        if self.weights is not None:
            w = tuple(float(x) for x in self.weights)
            if len(w) != len(self.values) or any(x < 0 for x in w) or sum(w) <= 0:
                raise ValueError("weights must be non-negative, non-zero and match values")
            object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, lo: int, hi: int, exclude: Sequence[int] = ()) -> "Discrete":
        return cls(tuple(v for v in range(lo, hi + 1) if v not in exclude))

    @classmethod
    def constant(cls, value: int) -> "Discrete":
        return cls((value,))

    @classmethod
    def from_config(cls, cfg) -> "Discrete":
        if isinstance(cfg, Discrete):
            return cfg
        if isinstance(cfg, int):
            return cls.constant(cfg)
        if isinstance(cfg, (list, tuple)):
            return cls(tuple(cfg))
        if "uniform" in cfg:
            lo, hi = cfg["uniform"]
            return cls.uniform(lo, hi, cfg.get("exclude", ()))
        return cls(tuple(cfg["values"]), tuple(cfg["weights"]) if cfg.get("weights") else None)

    def draw(self, rng: random.Random) -> int:
        if self.weights is None:
            return rng.choice(self.values)
        return rng.choices(self.values, weights=self.weights)[0]

    def to_config(self) -> dict:
        out: dict = {"values": list(self.values)}
        if self.weights is not None:
            out["weights"] = list(self.weights)
        return out


DEFAULT_LEXICON = (
    "the", "report", "said", "officials", "city", "new", "plan", "would", "help", "people",
    "water", "local", "council", "year", "school", "market", "police", "state", "team", "after",
    "with", "their", "could", "public", "health", "data", "study", "found", "more", "than",
    "many", "families", "early", "season", "coach", "players", "game", "final", "record", "win",
    "river", "bridge", "project", "funding", "budget", "voters", "election", "law", "court", "judge",
    "company", "shares", "price", "growth", "energy", "climate", "storm", "rain", "road", "travel",
    "doctors", "hospital", "patients", "care", "research", "science", "space", "mission", "launch", "rocket",
    "music", "festival", "artists", "film", "award", "history", "museum", "visitors", "park", "summer",
)

JudgeScript = Union[str, Callable[[int, int, Optional[int]], tuple]]


@dataclass(frozen=True)
class MockBehavior:
    """Knobs of the fake model.

    ``compliance`` is the probability that an explicit length request
    (``add/delete k words`` or ``exactly N words``) is followed exactly;
    otherwise the result misses by a draw from ``miss``.

    ``judge_script`` is ``"quality"`` (each text gets a fixed pseudo-random
    quality from its content, so slots never matter), ``"equal"``,
    ``"closer"`` (the text closer to ``judge_target`` scores 45, the other
    40), or a callable ``(len_1, len_2, judge_target) -> (total_1, total_2)``.
    """

    initial_offset: Discrete = field(default_factory=lambda: Discrete.uniform(-15, 15))
    proposal_drift: Discrete = field(default_factory=lambda: Discrete.uniform(-10, 10))
    compliance: float = 0.9
    miss: Discrete = field(default_factory=lambda: Discrete.uniform(-2, 2, exclude=(0,)))
    judge_script: JudgeScript = "quality"
    judge_target: Optional[int] = None
    quality_spread: int = 3
    lexicon: tuple[str, ...] = DEFAULT_LEXICON

    def __post_init__(self):
        if not 0.0 <= self.compliance <= 1.0:
            raise ValueError("compliance must be in [0, 1]")
        if not self.lexicon or any(count_words(w) != 1 for w in self.lexicon):
            raise ValueError("lexicon entries must each count as exactly one word")
        if isinstance(self.judge_script, str) and self.judge_script not in ("quality", "equal", "closer"):
            raise ValueError(f"unknown judge_script {self.judge_script!r}")
        if self.judge_script == "closer" and self.judge_target is None:
            raise ValueError("judge_script 'closer' needs judge_target")

    @classmethod
    def from_config(cls, cfg: dict) -> "MockBehavior":
        kw = dict(cfg)
        for key in ("initial_offset", "proposal_drift", "miss"):
            if key in kw:
                kw[key] = Discrete.from_config(kw[key])
        if "lexicon" in kw:
            kw["lexicon"] = tuple(kw["lexicon"])
        return cls(**kw)

    def to_config(self) -> dict:
        return {
            "initial_offset": self.initial_offset.to_config(),
            "proposal_drift": self.proposal_drift.to_config(),
            "compliance": self.compliance,
            "miss": self.miss.to_config(),
            "judge_script": self.judge_script if isinstance(self.judge_script, str) else repr(self.judge_script),
            "judge_target": self.judge_target,
            "quality_spread": self.quality_spread,
        }


def synthesize(n_words: int, rng: random.Random, lexicon: Sequence[str] = DEFAULT_LEXICON) -> str:
    """Random prose from ``lexicon`` with exactly ``n_words`` counted words."""
    if n_words <= 0:
        return ""
    words = [rng.choice(lexicon) for _ in range(n_words)]
    out = []
    start = True
    for i, w in enumerate(words):
        if start:
            w = w[:1].upper() + w[1:]
            start = False
        last = i == n_words - 1
        if last or rng.random() < 0.08:
            w += "."
            start = True
        elif rng.random() < 0.06:
            w += ","
        out.append(w)
    return " ".join(out)


# ordered: the exact importance phrases are checked before the loose ones
# because the instruction exact template also says "too long at"
_DELETE_RE = re.compile(r"\bdelete (\d+) words\b")
_ADD_RE = re.compile(r"\badd (\d+) words\b")
_LOOSE_RE = re.compile(r"\btoo (?:long|short) at \d+ words\b")
_LOOSE_TARGET_RE = re.compile(r"improve it to be (?:exactly|at least) (\d+) words")
_PROPOSAL_RE = re.compile(r"generate a new (?:answer|summary) based on the previous one")
_INITIAL_TARGET_RE = re.compile(r"(?:in exactly|using) (\d+) words")
_JUDGE_MARKER = "Score Ratio (Response 1 ÷ Response 2)"


def classify(conversation: Sequence[ChatMessage]) -> str:
    """Name of the template family ``conversation`` was rendered from."""
    last = conversation[-1].content
    if _JUDGE_MARKER in last and "Output Format:" in last:
        return "judge"
    if _DELETE_RE.search(last) or _ADD_RE.search(last):
        return "importance_exact"
    if _LOOSE_RE.search(last):
        return "importance_loose"
    if _PROPOSAL_RE.search(last):
        return "proposal"
    if _INITIAL_TARGET_RE.search(last):
        return "initial"
    raise UnclassifiableConversation(f"cannot classify request: {last[:80]!r}")


def _previous_answer(conversation: Sequence[ChatMessage]) -> str:
    for msg in reversed(conversation):
        if msg.role == "assistant":
            return strip_framing(msg.content)
    raise UnclassifiableConversation("follow-up request without a previous answer")


def _initial_target(conversation: Sequence[ChatMessage]) -> int:
    # last user turn carrying a length instruction (skips the one-shot demo)
    for msg in reversed(conversation):
        if msg.role == "user":
            m = _INITIAL_TARGET_RE.search(msg.content)
            if m:
                return int(m.group(1))
    raise UnclassifiableConversation("no length instruction found")


def _judge_task(text: str) -> TaskKind:
    if "abstractive summarization" in text or "Summary 1:" in text:
        return TaskKind.SUMMARIZATION
    if "Correctness" in text:
        return TaskKind.MATH
    return TaskKind.INSTRUCTION


def _judge_candidates(text: str, task: TaskKind) -> tuple[str, str]:
    label = "Summary" if task is TaskKind.SUMMARIZATION else "Response"
    m = re.search(
        rf"^{label} 1: (.*?)\n{label} 2: (.*?)\nEvaluation Criteria",
        text,
        re.DOTALL | re.MULTILINE,
    )
    if not m:
        raise UnclassifiableConversation("judge prompt without two candidates")
    return m.group(1), m.group(2)


def _split_total(total: int, k: int) -> list[int]:
    total = max(k, min(10 * k, int(total)))
    base, rem = divmod(total, k)
    return [base + (1 if i < rem else 0) for i in range(k)]


def format_verdict(task: TaskKind, total_1: int, total_2: int) -> str:
    """Judge reply in the requested output format."""
    names = [name for name, _ in criteria(task)]
    k = len(names)
    lines = []
    totals = []
    for slot, total in ((1, total_1), (2, total_2)):
        scores = _split_total(total, k)
        totals.append(sum(scores))
        lines.append(f"#### Response {slot}:")
        lines += [f"{i}. {name}: {s}/10" for i, (name, s) in enumerate(zip(names, scores), 1)]
        lines.append(f"**Overall Score:** {sum(scores)}/{10 * k}")
    better = 1 if totals[0] >= totals[1] else 2
    lines += [
        "### Conclusion:",
        f"- **Better Response:** Response {better}.",
        f"- **Score Ratio (Response 1 ÷ Response 2):** {totals[0] / totals[1]:.2f}.",
    ]
    return "\n".join(lines)


def _quality(text: str, spread: int) -> int:
    h = int.from_bytes(hashlib.sha256(text.encode("utf-8")).digest()[:4], "big")
    return h % (2 * spread + 1) - spread


def _call_rng(conversation: Sequence[ChatMessage], seed: Optional[int]) -> random.Random:
    blob = json.dumps([seed, [[m.role, m.content] for m in conversation]], ensure_ascii=False)
    return random.Random(int.from_bytes(hashlib.sha256(blob.encode("utf-8")).digest()[:8], "big"))


def mock_complete(
    conversation: Sequence[ChatMessage],
    params: GenerationParams,
    seed: Optional[int] = None,
    behavior: Optional[MockBehavior] = None,
) -> CompletionResult:
    """One fake completion; fully determined by (conversation, params, seed)."""
    behavior = behavior or MockBehavior()
    validate_conversation(conversation)
    if seed is None:
        seed = params.seed
    kind = classify(conversation)
    rng = _call_rng(conversation, seed)
    last = conversation[-1].content

    if kind == "judge":
        task = _judge_task(last)
        text_1, text_2 = _judge_candidates(last, task)
        k = len(criteria(task))
        base = 8 * k
        script = behavior.judge_script
        if script == "quality":
            t1 = base + _quality(text_1, behavior.quality_spread)
            t2 = base + _quality(text_2, behavior.quality_spread)
        elif script == "equal":
            t1 = t2 = base
        elif script == "closer":
            d1 = abs(count_words(text_1) - behavior.judge_target)
            d2 = abs(count_words(text_2) - behavior.judge_target)
            t1, t2 = (45, 40) if d1 < d2 else (40, 45) if d2 < d1 else (40, 40)
        else:
            t1, t2 = script(count_words(text_1), count_words(text_2), behavior.judge_target)
        return CompletionResult(format_verdict(task, t1, t2), "stop", {"mock": kind})

    if kind == "initial":
        length = _initial_target(conversation) + behavior.initial_offset.draw(rng)
    else:
        prev = count_words(_previous_answer(conversation))
        if kind == "proposal":
            length = prev + behavior.proposal_drift.draw(rng)
        elif kind == "importance_exact":
            m = _DELETE_RE.search(last)
            delta = -int(m.group(1)) if m else int(_ADD_RE.search(last).group(1))
            length = prev + delta
            if rng.random() >= behavior.compliance:
                length += behavior.miss.draw(rng)
        else:
            m = _LOOSE_TARGET_RE.search(last)
            if not m:
                raise UnclassifiableConversation("loose request without a target")
            length = int(m.group(1))
            if rng.random() >= behavior.compliance:
                length += behavior.miss.draw(rng)
    length = max(1, length)
    text = synthesize(length, rng, behavior.lexicon)
    return CompletionResult(text, "stop", {"mock": kind, "length": length})


class MockProvider(BatchMixin):
    """:class:`~mhlength.llm.Provider` backed by :func:`mock_complete`.

    ``seed`` is used when a call's params carry no seed.
    """

    def __init__(self, behavior: Optional[MockBehavior] = None, seed: int = 0, max_in_flight: int = 1):
        self.behavior = behavior or MockBehavior()
        self.seed = seed
        self.max_in_flight = max_in_flight
        self.name = "mock"
        self.calls = 0
        self._lock = threading.Lock()

    def complete(self, conversation, params: GenerationParams) -> CompletionResult:
        with self._lock:
            self.calls += 1
        seed = params.seed if params.seed is not None else self.seed
        return mock_complete(conversation, params, seed, self.behavior)
