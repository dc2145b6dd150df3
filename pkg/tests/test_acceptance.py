"""Acceptance criteria; the per-criterion verdicts are printed at the end of the run."""

import math
import os
import time

import numpy as np
import pytest

from conftest import instr_problem, mock_dataset, summ_problem
from judge_fixtures import FIXTURES
from mhlength.constraint import Exact, Interval, constraint_score, count_words, deviation, is_satisfied
from mhlength.harness import DatasetRecord, run_experiment
from mhlength.judge import UnparseableVerdict, parse_judge_output
from mhlength.llm import OpenAICompatProvider
from mhlength.metrics import accuracy, l1, l2, rouge_n, rouge_tokens, rouge_l
from mhlength.mockllm import Discrete, MockBehavior, MockProvider
from mhlength.prompts import TaskKind
from mhlength.sampler import SamplerConfig, acceptance_probability, run_chain

# observed once with seed 0 (200 problems, target 50, trials 5, beams 1)
ORACLE_ACC = {"inst": 0.04, "rand": 0.145, "mh": 0.175, "mh-is": 1.0}
PIN_TOLERANCE = 0.05


def _detail(record_property, text):
    record_property("detail", text)


@pytest.mark.criterion(1, "formula suite")
def test_formula_suite(record_property):
    t0 = time.perf_counter()
    tol = 1e-9
    assert count_words("") == 0
    assert count_words("Hello, world!") == 2
    assert count_words("don't stop — state-of-the-art systems.") == 4
    assert deviation(55, Exact(50)) == 5
    assert deviation(30, Interval(10, 40)) == 0
    assert deviation(47, Interval(10, 40)) == 7
    assert constraint_score(50, Exact(50)).value == math.inf
    assert abs(constraint_score(55, Exact(50)).value - 0.2) <= tol
    assert abs(constraint_score(47, Interval(10, 40)).value - 1 / 7) <= tol
    assert is_satisfied(50, Exact(50)) and not is_satisfied(49, Exact(50)) and is_satisfied(39, Interval(10, 40))
    assert acceptance_probability(1 / 5, math.inf, 0.5) == 1.0
    assert acceptance_probability(1 / 5, 1 / 2, 1.0) == 1.0
    assert abs(acceptance_probability(1 / 2, 1 / 8, 1.2) - 0.3) <= tol
    assert accuracy([0, 0, 5, 0]) == 0.75 and accuracy([0, 0, 0]) == 1.0 and accuracy([3]) == 0.0
    assert abs(l1([0, 3, 4]) - 7 / 3) <= tol and abs(l2([0, 3, 4]) - math.sqrt(25 / 3)) <= tol
    assert l1([9]) == l2([9]) == 9 and l1([0, 0]) == l2([0, 0]) == 0
    r = rouge_n(rouge_tokens("the cat sat"), rouge_tokens("the cat"), 1)
    assert abs(r.precision - 2 / 3) <= tol and abs(r.recall - 1) <= tol and abs(r.f1 - 0.8) <= tol
    same = rouge_tokens("A small test sentence.")
    assert rouge_n(same, same, 1).f1 == rouge_n(same, same, 2).f1 == rouge_l(same, same).f1 == 1.0
    assert rouge_n(rouge_tokens("red blue"), rouge_tokens("green"), 1).f1 == 0.0
    elapsed = time.perf_counter() - t0
    _detail(record_property, f"{elapsed * 1000:.1f} ms")
    assert elapsed < 1.0


@pytest.mark.criterion(2, "acceptance-ratio identity")
def test_acceptance_ratio_identity(record_property):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(1000):
        f_prev = 1.0 / rng.integers(1, 500)
        f_new = 1.0 / rng.integers(1, 500)
        phi = float(np.exp(rng.uniform(np.log(0.01), np.log(100))))
        r = f_new / f_prev * phi
        forward = acceptance_probability(f_prev, f_new, phi)
        backward = acceptance_probability(f_new, f_prev, 1 / phi)
        worst = max(worst, abs(forward / backward - r) / r)
    elapsed = time.perf_counter() - t0
    _detail(record_property, f"max rel err {worst:.2e}, {elapsed * 1000:.0f} ms")
    assert worst <= 1e-12 and elapsed < 1.0


def _accuracy(tmp_path, name, data, **cfg):
    return run_experiment(data, SamplerConfig(**cfg), MockProvider(), tmp_path / f"{name}.jsonl").acc


@pytest.mark.criterion(3, "mock ablation ordering")
def test_mock_ablation_ordering(tmp_path, record_property):
    t0 = time.perf_counter()
    data = mock_dataset(200, target=50)
    acc = {m: _accuracy(tmp_path, m, data, method=m, max_trials=5, beams=1, seed=0) for m in ORACLE_ACC}
    elapsed = time.perf_counter() - t0
    _detail(record_property, ", ".join(f"{m}={a:.3f}" for m, a in acc.items()) + f", {elapsed:.1f}s")
    assert acc["mh-is"] >= 0.90
    assert acc["mh-is"] - acc["mh"] >= 0.25
    assert acc["rand"] > acc["inst"]
    assert acc["inst"] <= 0.10
    for m, expected in ORACLE_ACC.items():
        assert abs(acc[m] - expected) <= PIN_TOLERANCE, m
    assert elapsed < 60


@pytest.mark.criterion(4, "beams/trials monotonicity")
@pytest.mark.parametrize("method", ["mh-is", "mh"])
def test_beams_trials_monotone(tmp_path, record_property, method):
    t0 = time.perf_counter()
    data = mock_dataset(200, target=50)
    by_trials = [_accuracy(tmp_path, f"t{n}", data, method=method, max_trials=n, beams=4, seed=0) for n in range(6)]
    by_beams = [_accuracy(tmp_path, f"b{b}", data, method=method, max_trials=5, beams=b, seed=0) for b in (1, 2, 4, 8)]
    elapsed = time.perf_counter() - t0
    fmt = lambda xs: "/".join(f"{x:.2f}" for x in xs)
    _detail(record_property, f"{method}: trials {fmt(by_trials)}, beams {fmt(by_beams)}, {elapsed:.1f}s")
    assert all(a <= b for a, b in zip(by_trials, by_trials[1:]))
    assert all(a <= b for a, b in zip(by_beams, by_beams[1:]))
    assert elapsed < 120


@pytest.mark.criterion(5, "perfect-compliance convergence")
def test_perfect_compliance(record_property):
    t0 = time.perf_counter()
    threshold = 3
    behavior = MockBehavior(compliance=1.0, judge_script="equal", initial_offset=Discrete.uniform(-30, 30))
    mock = MockProvider(behavior)
    problems = [summ_problem(target=50, pid=f"s{i}") for i in range(100)]
    problems += [instr_problem(upper=46, lower=10 if i % 2 else 0, pid=f"i{i}") for i in range(100)]
    worst_slack = None
    for i, p in enumerate(problems):
        chain = run_chain(p, SamplerConfig(method="mh-is", max_trials=20, seed=i, regime_threshold=threshold), mock)
        devs = chain.state_deviations
        bound = math.ceil(devs[0] / threshold) + 1
        assert chain.final.deviation == 0, p.id
        assert chain.converged_at <= bound, (p.id, chain.converged_at, bound)
        assert all(a >= b for a, b in zip(devs, devs[1:])), p.id
        slack = bound - chain.converged_at
        worst_slack = slack if worst_slack is None else min(worst_slack, slack)
    elapsed = time.perf_counter() - t0
    _detail(record_property, f"{len(problems)} problems, Acc 100%, min slack to bound {worst_slack}, {elapsed:.1f}s")
    assert elapsed < 10


class Interrupt(BaseException):
    pass


class InterruptingMock(MockProvider):
    def __init__(self, after_calls, **kw):
        super().__init__(**kw)
        self.after_calls = after_calls

    def complete(self, conversation, params):
        if self.calls >= self.after_calls:
            raise Interrupt()
        return super().complete(conversation, params)


@pytest.mark.criterion(6, "trace/resume determinism")
def test_resume_is_byte_identical(tmp_path, record_property):
    t0 = time.perf_counter()
    data = mock_dataset(50, target=50)
    cfg = SamplerConfig(method="mh-is", max_trials=5, beams=2, seed=7)
    full = tmp_path / "full.jsonl"
    run_experiment(data, cfg, MockProvider(), full, traces=True)

    cut = tmp_path / "cut.jsonl"
    with pytest.raises(Interrupt):
        run_experiment(data, cfg, InterruptingMock(after_calls=150), cut, traces=True)
    done = len(cut.read_text().splitlines())
    # simulate a write torn mid-line as well
    with open(cut, "ab") as fh:
        fh.write(b'{"id": "p')
    run_experiment(data, cfg, MockProvider(), cut, traces=True)
    elapsed = time.perf_counter() - t0
    _detail(record_property, f"interrupted after {done}/50 records, {elapsed:.1f}s")
    assert 0 < done < 50
    assert cut.read_bytes() == full.read_bytes()
    assert elapsed < 30


@pytest.mark.criterion(7, "judge parser fixtures")
def test_judge_fixtures(record_property):
    assert len(FIXTURES) >= 10
    kinds = set()
    for name, k, text, expected in FIXTURES:
        if expected is None:
            with pytest.raises(UnparseableVerdict):
                parse_judge_output(text, k)
            kinds.add("garbage")
            continue
        v = parse_judge_output(text, k)
        assert (v.total_1, v.total_2) == (expected["total_1"], expected["total_2"]), name
        assert abs(v.effective_ratio - expected["ratio"]) <= 1e-9, name
        assert v.better.value == expected["better"], name
        kinds.add(name.split("_")[0])
    ratio_bad = next(f for f in FIXTURES if f[0] == "ratio_inconsistent")
    v = parse_judge_output(ratio_bad[2], ratio_bad[1])
    assert v.stated_ratio == 1.5 and abs(v.effective_ratio - 42 / 38) <= 1e-9
    _detail(record_property, f"{len(FIXTURES)} fixtures")
    assert {"well", "markdown", "ratio", "garbage"} <= kinds


LIVE_QUESTIONS = [
    ("What causes the seasons on Earth?", 60),
    ("Give three tips for staying focused while studying.", 50),
    ("Explain what a hash table is.", 70),
    ("Why is the sky blue?", 40),
    ("Describe the water cycle.", 60),
    ("What is the difference between weather and climate?", 50),
    ("How do vaccines work?", 70),
    ("Suggest a name for a bakery and explain why.", 40),
    ("What is photosynthesis?", 50),
    ("How does compound interest work?", 60),
]


@pytest.mark.live
@pytest.mark.criterion(8, "live smoke (optional)")
def test_live_smoke(tmp_path, record_property):
    base = os.environ.get("MHLENGTH_LIVE_API_BASE")
    model = os.environ.get("MHLENGTH_LIVE_MODEL")
    if not base or not model:
        pytest.skip("set MHLENGTH_LIVE_API_BASE and MHLENGTH_LIVE_MODEL to run")
    data = [
        DatasetRecord(f"live{i}", TaskKind.INSTRUCTION, q, Interval(0, n)) for i, (q, n) in enumerate(LIVE_QUESTIONS)
    ]
    provider = OpenAICompatProvider(base, model)
    summary = run_experiment(data, SamplerConfig(method="mh-is", max_trials=5), provider, tmp_path / "live.jsonl")
    _detail(record_property, f"Acc {summary.acc}")
    assert summary.acc is not None and summary.acc >= 0.8
