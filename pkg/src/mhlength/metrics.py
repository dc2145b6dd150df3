"""Length-control metrics (Acc, L1, L2, convergence steps) and plain ROUGE-1/2/L."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass
from typing import Iterable, NamedTuple, Optional, Sequence

from .constraint import tokenize


class EmptyInput(ValueError):
    pass


def _nonempty(values: Sequence) -> list:
    values = list(values)
    if not values:
        raise EmptyInput("metric needs at least one value")
    return values


def accuracy(deviations: Sequence[int]) -> float:
    d = _nonempty(deviations)
    return sum(1 for x in d if x == 0) / len(d)


def l1(deviations: Sequence[int]) -> float:
    d = _nonempty(deviations)
    return sum(abs(x) for x in d) / len(d)


def l2(deviations: Sequence[int]) -> float:
    """Root mean square deviation."""
    d = _nonempty(deviations)
    return math.sqrt(sum(x * x for x in d) / len(d))


def mean_convergence_steps(converged_at: Sequence[Optional[int]], cap: int) -> float:
    """Mean proposal steps to reach the target; unconverged runs count as ``cap``.

    Accepts either raw ``converged_at`` values or objects carrying that attribute.
    """
    vals = _nonempty(converged_at)
    steps = []
    for v in vals:
        v = getattr(v, "converged_at", v)
        steps.append(cap if v is None else v)
    return sum(steps) / len(steps)


class RougeScore(NamedTuple):
    precision: float
    recall: float
    f1: float
    empty_reference: bool = False


def rouge_tokens(text: str) -> list[str]:
    """Lower-cased tokens, punctuation included."""
    return [t.lower() for t in tokenize(text)]


def _f1(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _ngrams(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate_tokens: Sequence[str], reference_tokens: Sequence[str], n: int) -> RougeScore:
    if n < 1:
        raise ValueError("n must be >= 1")
    ref = _ngrams(reference_tokens, n)
    if not ref:
        return RougeScore(0.0, 0.0, 0.0, True)
    cand = _ngrams(candidate_tokens, n)
    overlap = sum((cand & ref).values())
    p = overlap / sum(cand.values()) if cand else 0.0
    r = overlap / sum(ref.values())
    return RougeScore(p, r, _f1(p, r))


def lcs_length(a: Sequence[str], b: Sequence[str]) -> int:
    if len(a) < len(b):
        a, b = b, a
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l(candidate_tokens: Sequence[str], reference_tokens: Sequence[str]) -> RougeScore:
    if not reference_tokens:
        return RougeScore(0.0, 0.0, 0.0, True)
    lcs = lcs_length(candidate_tokens, reference_tokens)
    p = lcs / len(candidate_tokens) if candidate_tokens else 0.0
    r = lcs / len(reference_tokens)
    return RougeScore(p, r, _f1(p, r))


def rouge_f1(candidate: str, reference: str) -> dict[str, float]:
    """ROUGE-1/2/L F1 for two raw strings."""
    c, r = rouge_tokens(candidate), rouge_tokens(reference)
    return {
        "rouge1": rouge_n(c, r, 1).f1,
        "rouge2": rouge_n(c, r, 2).f1,
        "rougeL": rouge_l(c, r).f1,
    }


@dataclass
class EvalSummary:
    n: int
    n_effective: int
    n_error: int
    acc: Optional[float]
    l1: Optional[float]
    l2: Optional[float]
    mean_steps: Optional[float]
    rouge1: Optional[float] = None
    rouge2: Optional[float] = None
    rougeL: Optional[float] = None

    def to_dict(self) -> dict:
        return asdict(self)


def summarize_rows(rows: Iterable[dict]) -> EvalSummary:
    """Aggregate result rows (``status``, ``deviation``, ``converged_at``, ``cap``, ``rouge``)."""
    rows = list(rows)
    ok = [r for r in rows if r.get("status") == "ok"]
    n_error = len(rows) - len(ok)
    if not ok:
        return EvalSummary(len(rows), 0, n_error, None, None, None, None)
    devs = [r["deviation"] for r in ok]
    steps = [r["cap"] if r["converged_at"] is None else r["converged_at"] for r in ok]
    summary = EvalSummary(
        n=len(rows),
        n_effective=len(ok),
        n_error=n_error,
        acc=accuracy(devs),
        l1=l1(devs),
        l2=l2(devs),
        mean_steps=sum(steps) / len(steps),
    )
    scored = [r["rouge"] for r in ok if r.get("rouge")]
    if scored:
        for key in ("rouge1", "rouge2", "rougeL"):
            setattr(summary, key, sum(s[key] for s in scored) / len(scored))
    return summary
