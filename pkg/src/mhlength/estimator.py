"""Estimator-style front end so the sampler plugs into sklearn tooling.

``fit`` only validates hyper-parameters and binds the provider (there is
nothing to learn); ``predict`` returns one length-controlled text per problem.
"""

from __future__ import annotations

from dataclasses import replace
from typing import Iterable, Optional

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .harness import DatasetRecord, parse_record, record_seed, to_problem
from .judge import Judge
from .llm import GenerationParams
from .metrics import accuracy, l1, l2
from .mockllm import MockProvider
from .prompts import Problem
from .sampler import Method, SamplerConfig, best_chain, run_beams


def check_problems(X, demos: Iterable[DatasetRecord] = ()) -> list[Problem]:
    """Coerce ``Problem`` / ``DatasetRecord`` / dataset-style dicts into problems."""
    if isinstance(X, (Problem, DatasetRecord, dict)):
        X = [X]
    demos = list(demos)
    out = []
    for i, item in enumerate(X):
        if isinstance(item, Problem):
            out.append(item)
        elif isinstance(item, DatasetRecord):
            out.append(to_problem(item, demos))
        elif isinstance(item, dict):
            out.append(to_problem(parse_record(item, i + 1), demos))
        else:
            raise TypeError(f"item {i}: expected Problem, DatasetRecord or dict, got {type(item).__name__}")
    if not out:
        raise ValueError("no problems given")
    return out


class LengthController(BaseEstimator):
    """Length-controlled generation with any of the four sampling methods.

    Parameters mirror :class:`~mhlength.sampler.SamplerConfig`; ``provider``
    defaults to a :class:`~mhlength.mockllm.MockProvider` so the estimator
    works offline.
    """

    def __init__(
        self,
        provider=None,
        method: str = "mh-is",
        max_trials: int = 5,
        beams: int = 1,
        seed: int = 0,
        regime_threshold: int = 3,
        judge_enabled: bool = True,
        judge_provider=None,
        one_shot: bool = True,
        generation_params: Optional[GenerationParams] = None,
    ):
        self.provider = provider
        self.method = method
        self.max_trials = max_trials
        self.beams = beams
        self.seed = seed
        self.regime_threshold = regime_threshold
        self.judge_enabled = judge_enabled
        self.judge_provider = judge_provider
        self.one_shot = one_shot
        self.generation_params = generation_params

    def fit(self, X=None, y=None):
        self.config_ = SamplerConfig(
            method=Method.parse(self.method),
            max_trials=self.max_trials,
            beams=self.beams,
            seed=self.seed,
            regime_threshold=self.regime_threshold,
            judge_enabled=self.judge_enabled,
            one_shot=self.one_shot,
        )
        self.provider_ = self.provider if self.provider is not None else MockProvider(seed=self.seed)
        self.judge_ = Judge(self.judge_provider or self.provider_) if self.judge_enabled else None
        return self

    def _run(self, X):
        check_is_fitted(self, "config_")
        problems = check_problems(X)
        chains = []
        for p in problems:
            cfg = replace(self.config_, seed=record_seed(self.seed, p.id))
            _, beams = run_beams(p, cfg, self.provider_, self.judge_, self.generation_params)
            chains.append(best_chain(beams))
        self.chains_ = chains
        return problems, chains

    def predict(self, X) -> list[str]:
        _, chains = self._run(X)
        return [c.final.text for c in chains]

    def fit_predict(self, X, y=None) -> list[str]:
        return self.fit(X, y).predict(X)

    def score(self, X, y=None) -> float:
        """Fraction of problems whose output meets its length constraint."""
        _, chains = self._run(X)
        return accuracy([c.final.deviation for c in chains])

    def length_report(self, X) -> dict:
        _, chains = self._run(X)
        devs = [c.final.deviation for c in chains]
        return {"acc": accuracy(devs), "l1": l1(devs), "l2": l2(devs)}
