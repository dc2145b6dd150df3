"""Pairwise LLM-as-judge: parse scored comparisons into a likelihood-ratio estimate."""

from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass, field, replace
from typing import Optional

from .llm import GenerationParams, Provider
from .prompts import Problem, criteria, render_judge, strip_framing

logger = logging.getLogger(__name__)

RATIO_FLOOR = 0.01
RATIO_CEIL = 100.0
STATED_RATIO_TOLERANCE = 0.05


class UnparseableVerdict(ValueError):
    pass


class JudgeFailure(RuntimeError):
    pass


class Better(str, enum.Enum):
    RESPONSE1 = "Response1"
    RESPONSE2 = "Response2"


@dataclass
class JudgeVerdict:
    per_criterion_1: list[int]
    per_criterion_2: list[int]
    total_1: float
    total_2: float
    better: Better
    stated_ratio: Optional[float]
    effective_ratio: float
    notes: list[str] = field(default_factory=list)


def clamp_ratio(ratio: float) -> float:
    return min(RATIO_CEIL, max(RATIO_FLOOR, ratio))


_NUM = r"(\d+(?:\.\d+)?)"
_HEADER_RE = re.compile(
    r"^[\s#>*_-]*(?:response|summary)\s*([12])\b[\s*_]*(?:\([^)\n]*\))?[\s*_]*:?[\s*_]*$",
    re.IGNORECASE | re.MULTILINE,
)
_OVERALL_RE = re.compile(r"overall\s*(?:score)?[^0-9\n]*?" + _NUM + r"(?:\s*/\s*\d+)?", re.IGNORECASE)
_CRITERION_RE = re.compile(r"^\s*[-*]?\s*\d+\s*[.)]\s*[^\n]*?" + _NUM + r"\s*/\s*10\b", re.MULTILINE)
_BETTER_RE = re.compile(r"better\s*(?:response|summary)[^\n:]*:[\s*_\[]*(?:response|summary)?\s*([12])", re.IGNORECASE)
_RATIO_LINE_RE = re.compile(r"^.*score\s*ratio.*$", re.IGNORECASE | re.MULTILINE)


def _split_sections(text: str) -> dict[int, str]:
    headers = list(_HEADER_RE.finditer(text))
    sections: dict[int, str] = {}
    for i, m in enumerate(headers):
        slot = int(m.group(1))
        end = headers[i + 1].start() if i + 1 < len(headers) else len(text)
        body = text[m.end():end]
        # the conclusion block belongs to neither response
        body = re.split(r"^[\s#*]*conclusion", body, maxsplit=1, flags=re.IGNORECASE | re.MULTILINE)[0]
        sections.setdefault(slot, body)
    return sections


def _stated_ratio(text: str) -> Optional[float]:
    m = _RATIO_LINE_RE.search(text)
    if not m:
        return None
    line = m.group(0)
    # the label itself contains "Response 1 ÷ Response 2"; read after its last colon
    tail = line.rsplit(":", 1)[-1] if ":" in line else line
    nums = re.findall(_NUM, tail)
    return float(nums[0]) if nums else None


def _section_scores(body: str, expected: int) -> tuple[list[int], Optional[float]]:
    overall = None
    scores = []
    for line in body.splitlines():
        if re.search(r"overall", line, re.IGNORECASE):
            m = _OVERALL_RE.search(line)
            if m and overall is None:
                overall = float(m.group(1))
            continue
        m = _CRITERION_RE.match(line)
        if m:
            scores.append(float(m.group(1)))
    scores = [int(s) if float(s).is_integer() else s for s in scores]
    return scores[:expected] if len(scores) > expected else scores, overall


def parse_judge_output(text: str, expected_criteria_count: int) -> JudgeVerdict:
    """Extract both responses' scores from a judge reply.

    Per-response totals are the sum of the criterion scores when all of them
    parse, otherwise the stated overall score. The ratio always comes from the
    totals; the model's own ratio is kept for reference only.
    """
    if expected_criteria_count not in (5, 6):
        raise ValueError("expected_criteria_count must be 5 or 6")
    sections = _split_sections(text)
    notes: list[str] = []
    per: dict[int, list] = {}
    totals: dict[int, float] = {}
    for slot in (1, 2):
        body = sections.get(slot)
        if body is None:
            raise UnparseableVerdict(f"no section for response {slot}")
        scores, overall = _section_scores(body, expected_criteria_count)
        per[slot] = scores
        if len(scores) == expected_criteria_count:
            total = float(sum(scores))
            if overall is not None and abs(overall - total) > 1e-9:
                notes.append(f"response {slot}: stated total {overall:g} != criterion sum {total:g}")
            totals[slot] = total
        elif overall is not None:
            totals[slot] = overall
        else:
            raise UnparseableVerdict(f"no total for response {slot}")

    t1, t2 = totals[1], totals[2]
    if t2 > 0:
        raw = t1 / t2
    else:
        raw = 1.0 if t1 == 0 else RATIO_CEIL
    effective = clamp_ratio(raw)

    stated = _stated_ratio(text)
    if stated is not None and abs(stated - raw) > STATED_RATIO_TOLERANCE:
        notes.append(f"stated ratio {stated:g} disagrees with totals ratio {raw:.4f}")

    m = _BETTER_RE.search(text)
    if m:
        better = Better.RESPONSE1 if m.group(1) == "1" else Better.RESPONSE2
    else:
        better = Better.RESPONSE1 if t1 >= t2 else Better.RESPONSE2

    return JudgeVerdict(
        per_criterion_1=per[1],
        per_criterion_2=per[2],
        total_1=t1,
        total_2=t2,
        better=better,
        stated_ratio=stated,
        effective_ratio=effective,
        notes=notes,
    )


JUDGE_PARAMS = GenerationParams(temperature=0.0, top_p=1.0, top_k=None, max_new_tokens=1024)


def estimate_ratio(
    problem: Problem,
    y_new: str,
    y_prev: str,
    llm: Provider,
    params: GenerationParams = JUDGE_PARAMS,
    retries: int = 1,
) -> float:
    """Judge-estimated ``P(y_new|x) / P(y_prev|x)``.

    An unparseable reply is retried ``retries`` times with a fresh seed before
    :class:`JudgeFailure` is raised. Provider errors propagate unchanged.
    """
    conversation = render_judge(problem, y_new, y_prev)
    expected = len(criteria(problem.task))
    last: Optional[Exception] = None
    for attempt in range(retries + 1):
        p = params
        if attempt and params.seed is not None:
            p = replace(params, seed=params.seed + attempt)
        result = llm.complete(conversation, p)
        try:
            return parse_judge_output(result.text, expected).effective_ratio
        except UnparseableVerdict as exc:
            logger.info("judge reply unparseable (attempt %d): %s", attempt + 1, exc)
            last = exc
    raise JudgeFailure(f"judge output unparseable after {retries + 1} attempts: {last}") from last


@dataclass
class Judge:
    """Binds a provider (usually the generator itself) for ratio estimates."""

    provider: Provider
    params: GenerationParams = JUDGE_PARAMS
    retries: int = 1

    def ratio(self, problem: Problem, y_new: str, y_prev: str, seed: Optional[int] = None) -> float:
        params = self.params if seed is None else replace(self.params, seed=seed)
        return estimate_ratio(problem, strip_framing(y_new), strip_framing(y_prev), self.provider, params, self.retries)
