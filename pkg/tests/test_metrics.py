import itertools
import math

import pytest
from hypothesis import given, strategies as st

from mhlength.metrics import (
    EmptyInput,
    accuracy,
    l1,
    l2,
    lcs_length,
    mean_convergence_steps,
    rouge_f1,
    rouge_l,
    rouge_n,
    rouge_tokens,
    summarize_rows,
)


def test_accuracy_examples():
    assert accuracy([0, 0, 5, 0]) == 0.75
    assert accuracy([0, 0]) == 1.0
    assert accuracy([3]) == 0.0


def test_l1_l2_examples():
    assert l1([0, 3, 4]) == pytest.approx(7 / 3, abs=1e-9)
    assert l2([0, 3, 4]) == pytest.approx(math.sqrt(25 / 3), abs=1e-9)
    assert l1([6]) == l2([6]) == 6
    assert (l1([0, 0]), l2([0, 0])) == (0, 0)


@pytest.mark.parametrize("fn", [accuracy, l1, l2])
def test_empty_input(fn):
    with pytest.raises(EmptyInput):
        fn([])


def test_mean_steps():
    assert mean_convergence_steps([0, 0, 0], cap=5) == 0.0
    assert mean_convergence_steps([2, 4], cap=100) == 3.0
    assert mean_convergence_steps([None], cap=15) == 15.0
    with pytest.raises(EmptyInput):
        mean_convergence_steps([], cap=5)


def test_rouge_unigram_example():
    s = rouge_n(rouge_tokens("the cat sat"), rouge_tokens("the cat"), 1)
    assert s.precision == pytest.approx(2 / 3, abs=1e-9)
    assert s.recall == pytest.approx(1.0, abs=1e-9)
    assert s.f1 == pytest.approx(0.8, abs=1e-9)


def test_rouge_identity_and_disjoint():
    t = rouge_tokens("A quick brown fox jumps.")
    assert rouge_n(t, t, 1).f1 == rouge_n(t, t, 2).f1 == rouge_l(t, t).f1 == 1.0
    u = rouge_tokens("lazy dog sleeps")
    assert rouge_f1("A quick brown fox", "lazy dog sleeps") == {"rouge1": 0.0, "rouge2": 0.0, "rougeL": 0.0}
    assert rouge_n(t, u, 1).f1 == 0.0


def test_rouge_empty_reference_flagged():
    assert rouge_n(["a"], [], 1).empty_reference
    assert rouge_n(["a", "b"], ["a"], 2).empty_reference
    assert rouge_l(["a"], []).empty_reference


def test_rouge_keeps_punctuation_and_lowercases():
    assert rouge_tokens("Hello, World!") == ["hello", ",", "world", "!"]


def test_rouge_clipping():
    s = rouge_n(["the", "the", "the"], ["the", "cat"], 1)
    assert s.precision == pytest.approx(1 / 3) and s.recall == pytest.approx(1 / 2)


def brute_lcs(a, b):
    for k in range(min(len(a), len(b)), 0, -1):
        subs = set(itertools.combinations(a, k))
        if any(c in subs for c in itertools.combinations(b, k)):
            return k
    return 0


def longest_common_run(a, b):
    best = 0
    for i in range(len(a)):
        for j in range(len(b)):
            k = 0
            while i + k < len(a) and j + k < len(b) and a[i + k] == b[j + k]:
                k += 1
            best = max(best, k)
    return best


small = st.lists(st.sampled_from("abcd"), max_size=7)
devs = st.lists(st.integers(-50, 50), min_size=1, max_size=30)


@given(small, small)
def test_lcs_matches_brute_force(a, b):
    assert lcs_length(a, b) == brute_lcs(a, b)


@given(small, small)
def test_lcs_at_least_longest_run(a, b):
    assert lcs_length(a, b) >= longest_common_run(a, b)


@given(devs)
def test_l2_dominates_l1(d):
    assert l2(d) >= l1(d) - 1e-12


@given(st.lists(st.sampled_from("abcde"), min_size=1, max_size=10), st.lists(st.sampled_from("abcde"), min_size=1, max_size=10))
def test_f1_symmetric(a, b):
    for n in (1, 2):
        x, y = rouge_n(a, b, n), rouge_n(b, a, n)
        if not (x.empty_reference or y.empty_reference):
            assert x.f1 == pytest.approx(y.f1, abs=1e-12)
            assert x.precision == pytest.approx(y.recall, abs=1e-12)
    assert rouge_l(a, b).f1 == pytest.approx(rouge_l(b, a).f1, abs=1e-12)


def test_summarize_rows_excludes_errors():
    rows = [
        {"status": "ok", "deviation": 0, "converged_at": 1, "cap": 5, "rouge": {"rouge1": 0.5, "rouge2": 0.2, "rougeL": 0.4}},
        {"status": "ok", "deviation": 4, "converged_at": None, "cap": 5},
        {"status": "error", "cap": 5},
    ]
    s = summarize_rows(rows)
    assert (s.n, s.n_effective, s.n_error) == (3, 2, 1)
    assert s.acc == 0.5 and s.l1 == 2.0 and s.mean_steps == 3.0 and s.rouge1 == 0.5
    empty = summarize_rows([{"status": "error", "cap": 5}])
    assert empty.n_effective == 0 and empty.acc is None
