"""Metropolis-Hastings length control and the baselines it is compared against.

Four methods share one chain record format:

* ``inst``  - one instructed sample, no iterations;
* ``rand``  - up to ``max_trials + 1`` independent instructed samples, keep the closest;
* ``mh``    - Metropolis-Hastings with the symmetric "regenerate" proposal;
* ``mh-is`` - Metropolis-Hastings whose proposal carries length feedback, accepted
  with the symmetric-form acceptance as an upper bound.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .constraint import ConstraintScore, LengthConstraint, count_words, deviation
from .judge import Judge, JudgeFailure
from .llm import GenerationParams, Provider
from .prompts import (
    DEFAULT_REGIME_THRESHOLD,
    Problem,
    importance_kind,
    render_importance,
    render_initial,
    render_proposal,
    strip_framing,
)

logger = logging.getLogger(__name__)

_SEED_BOUND = 2**31 - 1


class Method(str, enum.Enum):
    INST = "inst"
    RAND = "rand"
    MH = "mh"
    MHIS = "mh-is"

    @classmethod
    def parse(cls, value) -> "Method":
        if isinstance(value, cls):
            return value
        key = str(value).lower().replace("_", "-").replace("+", "-")
        aliases = {"mhis": "mh-is", "mh-is": "mh-is", "inst": "inst", "rand": "rand", "mh": "mh"}
        try:
            return cls(aliases[key])
        except KeyError:
            raise ValueError(f"unknown method {value!r}") from None


class InvalidState(ValueError):
    """A proposal was requested from a state that already satisfies the constraint."""


class SamplingError(RuntimeError):
    """A chain failed; ``trace`` holds the steps completed before the failure."""

    def __init__(self, message: str, trace: list):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class SamplerConfig:
    method: Method = Method.MHIS
    max_trials: int = 5
    beams: int = 1
    seed: int = 0
    regime_threshold: int = DEFAULT_REGIME_THRESHOLD
    judge_enabled: bool = True
    one_shot: bool = True
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "method", Method.parse(self.method))
        if self.max_trials < 0:
            raise ValueError("max_trials must be >= 0")
        if self.beams < 1:
            raise ValueError("beams must be >= 1")
        if self.regime_threshold < 0:
            raise ValueError("regime_threshold must be >= 0")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")

    def to_dict(self) -> dict:
        return {
            "method": self.method.value,
            "max_trials": self.max_trials,
            "beams": self.beams,
            "seed": self.seed,
            "regime_threshold": self.regime_threshold,
            "judge_enabled": self.judge_enabled,
            "one_shot": self.one_shot,
        }


@dataclass(frozen=True)
class Candidate:
    text: str
    word_count: int
    deviation: int

    @classmethod
    def of(cls, text: str, constraint: LengthConstraint) -> "Candidate":
        n = count_words(text)
        return cls(text, n, deviation(n, constraint))

    @property
    def score(self) -> ConstraintScore:
        return ConstraintScore(self.deviation)

    @property
    def satisfied(self) -> bool:
        return self.deviation == 0


@dataclass
class StepRecord:
    """One draw of a chain. Step 0 is the initial sample and carries no acceptance test."""

    step_index: int
    proposal_text: str
    word_count: int
    deviation: int
    kind: str = "initial"
    f_prev: Optional[ConstraintScore] = None
    f_new: Optional[ConstraintScore] = None
    judge_ratio: Optional[float] = None
    judge_fallback: bool = False
    acceptance: Optional[float] = None
    uniform_draw: Optional[float] = None
    accepted: bool = True
    state_deviation: int = 0

    def to_dict(self) -> dict:
        return {
            "step": self.step_index,
            "kind": self.kind,
            "text": self.proposal_text,
            "word_count": self.word_count,
            "deviation": self.deviation,
            "prev_deviation": None if self.f_prev is None else self.f_prev.deviation,
            "judge_ratio": self.judge_ratio,
            "judge_fallback": self.judge_fallback,
            "acceptance": self.acceptance,
            "u": self.uniform_draw,
            "accepted": self.accepted,
            "state_deviation": self.state_deviation,
        }


@dataclass
class ChainResult:
    final: Candidate
    trace: list[StepRecord]
    converged_at: Optional[int]
    method: Method = Method.MHIS
    beam_index: int = 0

    @property
    def steps(self) -> int:
        """Proposal steps actually taken (the initial sample excluded)."""
        return len(self.trace) - 1

    @property
    def state_deviations(self) -> list[int]:
        return [r.state_deviation for r in self.trace]

    def to_dict(self) -> dict:
        return {
            "beam": self.beam_index,
            "method": self.method.value,
            "final_text": self.final.text,
            "deviation": self.final.deviation,
            "converged_at": self.converged_at,
            "trace": [r.to_dict() for r in self.trace],
        }


def acceptance_probability(
    f_prev: Union[ConstraintScore, float],
    f_new: Union[ConstraintScore, float],
    judge_ratio: float,
) -> float:
    """``min(1, f_new / f_prev * judge_ratio)``; a satisfied proposal is always accepted."""
    prev = float(f_prev)
    if math.isinf(prev):
        raise InvalidState("previous state already satisfies the constraint")
    if not prev > 0:
        raise ValueError(f"f_prev must be positive, got {prev}")
    if not judge_ratio > 0:
        raise ValueError(f"judge_ratio must be positive, got {judge_ratio}")
    new = float(f_new)
    if math.isinf(new):
        return 1.0
    return min(1.0, new / prev * judge_ratio)


def _draw_seed(rng: np.random.Generator) -> int:
    return int(rng.integers(_SEED_BOUND))


def _generate(provider: Provider, conversation, params: GenerationParams, seed: int) -> str:
    result = provider.complete(conversation, replace(params, seed=seed))
    return strip_framing(result.text)


def _beam_rng(seed: int, beam: int) -> np.random.Generator:
    # SeedSequence hashes the pair, so beams get decorrelated streams
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, beam])


def run_inst(
    problem: Problem,
    provider: Provider,
    config: Optional[SamplerConfig] = None,
    rng: Optional[np.random.Generator] = None,
    params: Optional[GenerationParams] = None,
    beam_index: int = 0,
) -> ChainResult:
    config = replace(config or SamplerConfig(), method=Method.INST, max_trials=0)
    result = run_rand(problem, config, provider, rng, params, beam_index)
    result.method = Method.INST
    return result


def run_rand(
    problem: Problem,
    config: SamplerConfig,
    provider: Provider,
    rng: Optional[np.random.Generator] = None,
    params: Optional[GenerationParams] = None,
    beam_index: int = 0,
) -> ChainResult:
    """Best-of-(n+1) independent instructed samples; stops at the first hit."""
    rng = rng if rng is not None else _beam_rng(config.seed, beam_index)
    params = params or GenerationParams()
    conversation = render_initial(problem, one_shot=config.one_shot)
    trace: list[StepRecord] = []
    best: Optional[Candidate] = None
    converged_at = None
    for i in range(config.max_trials + 1):
        seed = _draw_seed(rng)
        try:
            cand = Candidate.of(_generate(provider, conversation, params, seed), problem.constraint)
        except Exception as exc:
            raise SamplingError(f"draw {i + 1} failed: {exc}", trace) from exc
        if best is None or cand.deviation < best.deviation:
            best = cand
        trace.append(
            StepRecord(
                i, cand.text, cand.word_count, cand.deviation,
                kind="initial", accepted=best is cand, state_deviation=best.deviation,
            )
        )
        if cand.satisfied:
            converged_at = i
            break
    return ChainResult(best, trace, converged_at, Method.RAND, beam_index)


def run_chain(
    problem: Problem,
    config: SamplerConfig,
    provider: Provider,
    judge: Optional[Judge] = None,
    rng: Optional[np.random.Generator] = None,
    params: Optional[GenerationParams] = None,
    beam_index: int = 0,
) -> ChainResult:
    """One Metropolis-Hastings chain (``mh`` or ``mh-is``).

    Every step consumes the same three random numbers (proposal seed, judge
    seed, uniform draw) whatever happens, so a chain run with ``n`` trials is
    an exact prefix of the same chain run with ``n + 1``.
    """
    if config.method not in (Method.MH, Method.MHIS):
        raise ValueError(f"run_chain handles mh and mh-is, not {config.method.value}")
    rng = rng if rng is not None else _beam_rng(config.seed, beam_index)
    params = params or GenerationParams()
    if config.judge_enabled and judge is None:
        judge = Judge(provider)
    constraint = problem.constraint
    trace: list[StepRecord] = []

    try:
        seed = _draw_seed(rng)
        current = Candidate.of(
            _generate(provider, render_initial(problem, one_shot=config.one_shot), params, seed), constraint
        )
    except Exception as exc:
        raise SamplingError(f"initial sample failed: {exc}", trace) from exc
    trace.append(
        StepRecord(0, current.text, current.word_count, current.deviation, state_deviation=current.deviation)
    )
    converged_at = 0 if current.satisfied else None

    for i in range(1, config.max_trials + 1):
        if current.satisfied:
            break
        proposal_seed, judge_seed = (int(s) for s in rng.integers(_SEED_BOUND, size=2))
        u = float(rng.random())
        try:
            if config.method is Method.MH:
                kind = "proposal"
                conversation = render_proposal(problem, current.text, one_shot=config.one_shot)
            else:
                kind = importance_kind(current.word_count, constraint, config.regime_threshold)
                conversation = render_importance(
                    problem, current.text, current.word_count, config.regime_threshold, one_shot=config.one_shot
                )
            proposal = Candidate.of(_generate(provider, conversation, params, proposal_seed), constraint)

            ratio: Optional[float] = None
            fallback = False
            if config.judge_enabled and not proposal.satisfied:
                if proposal.text.strip():
                    try:
                        ratio = judge.ratio(problem, proposal.text, current.text, seed=judge_seed)
                    except JudgeFailure as exc:
                        logger.warning("judge failed on step %d, using a neutral ratio: %s", i, exc)
                        ratio, fallback = 1.0, True
                else:
                    ratio, fallback = 1.0, True
        except Exception as exc:
            raise SamplingError(f"step {i} failed: {exc}", trace) from exc

        a = acceptance_probability(current.score, proposal.score, 1.0 if ratio is None else ratio)
        accepted = u <= a
        record = StepRecord(
            i, proposal.text, proposal.word_count, proposal.deviation,
            kind=kind, f_prev=current.score, f_new=proposal.score,
            judge_ratio=ratio, judge_fallback=fallback,
            acceptance=a, uniform_draw=u, accepted=accepted,
        )
        if accepted:
            current = proposal
        record.state_deviation = current.deviation
        trace.append(record)
        if current.satisfied:
            converged_at = i

    return ChainResult(current, trace, converged_at, config.method, beam_index)


def run_method(
    problem: Problem,
    config: SamplerConfig,
    provider: Provider,
    judge: Optional[Judge] = None,
    rng: Optional[np.random.Generator] = None,
    params: Optional[GenerationParams] = None,
    beam_index: int = 0,
) -> ChainResult:
    if config.method is Method.INST:
        return run_inst(problem, provider, config, rng, params, beam_index)
    if config.method is Method.RAND:
        return run_rand(problem, config, provider, rng, params, beam_index)
    return run_chain(problem, config, provider, judge, rng, params, beam_index)


def _steps_to_target(chain: ChainResult) -> int:
    return chain.converged_at if chain.converged_at is not None else chain.steps


def best_chain(chains: list[ChainResult]) -> ChainResult:
    """Smallest final deviation, then fewest steps, then lowest beam index."""
    return min(chains, key=lambda c: (c.final.deviation, _steps_to_target(c), c.beam_index))


@dataclass
class BeamFailure:
    beam_index: int
    error: Exception
    trace: list = field(default_factory=list)


def run_beams(
    problem: Problem,
    config: SamplerConfig,
    provider: Provider,
    judge: Optional[Judge] = None,
    params: Optional[GenerationParams] = None,
) -> tuple[Candidate, list[ChainResult]]:
    """Run ``config.beams`` independent chains and pick the best final candidate.

    Beam ``b`` always uses the stream derived from ``(config.seed, b)``, so
    results do not depend on the beam count, on ``config.workers`` or on
    completion order. Failed beams are logged and skipped; if every beam fails
    the first failure is re-raised.
    """
    if config.judge_enabled and judge is None and config.method in (Method.MH, Method.MHIS):
        judge = Judge(provider)

    def one(beam: int):
        try:
            return run_method(problem, config, provider, judge, _beam_rng(config.seed, beam), params, beam)
        except Exception as exc:
            return BeamFailure(beam, exc, getattr(exc, "trace", []))

    if config.workers > 1 and config.beams > 1:
        with ThreadPoolExecutor(max_workers=min(config.workers, config.beams)) as pool:
            outcomes = list(pool.map(one, range(config.beams)))
    else:
        outcomes = [one(b) for b in range(config.beams)]

    chains = [o for o in outcomes if isinstance(o, ChainResult)]
    failures = [o for o in outcomes if isinstance(o, BeamFailure)]
    for f in failures:
        logger.warning("problem %s beam %d failed: %s", problem.id, f.beam_index, f.error)
    if not chains:
        raise failures[0].error
    return best_chain(chains).final, chains
