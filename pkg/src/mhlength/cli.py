"""Command line entry point: ``mhlength {run,summarize,validate-dataset}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from typing import Optional, Sequence

from .harness import MalformedRecord, DuplicateId, MalformedTrace, load_dataset, manifest_path, run_experiment, summarize
from .llm import API_KEY_ENV, GenerationParams, OpenAICompatProvider
from .metrics import EmptyInput
from .mockllm import MockBehavior, MockProvider
from .prompts import TaskKind
from .sampler import SamplerConfig


def _add_dataset_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", required=True, help="newline-delimited JSON dataset")
    p.add_argument("--task", choices=["summ", "instr", "math"], help="task for records that do not name one")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mhlength", description="Length-controlled sampling for chat LLMs.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run a sampling method over a dataset")
    _add_dataset_args(run)
    run.add_argument("--out", required=True, help="results file (appended to; existing ids are skipped)")
    run.add_argument("--method", choices=["inst", "rand", "mh", "mh-is"], default="mh-is")
    run.add_argument("--trials", type=int, default=5, help="maximum proposal steps per chain")
    run.add_argument("--beams", type=int, default=1)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--provider", choices=["openai-compat", "mock"], default="mock")
    run.add_argument("--api-base", help="base URL of the chat-completions server")
    run.add_argument("--model", help="generator model name")
    run.add_argument("--judge-model", help="judge model name (default: the generator)")
    run.add_argument("--no-judge", action="store_true", help="skip the pairwise judge (length-only acceptance)")
    run.add_argument("--threshold", type=int, default=3, help="deviation at or below which add/delete-k prompts are used")
    run.add_argument("--workers", type=int, default=1, help="records processed concurrently")
    run.add_argument("--traces", action="store_true", help="store every beam trace in the results file")
    run.add_argument("--zero-shot", action="store_true", help="no one-shot demo for summarization")
    run.add_argument("--max-new-tokens", type=int)
    run.add_argument("--max-in-flight", type=int, default=4, help="concurrent requests per provider")
    run.add_argument("--config", help="JSON file with optional 'mock' and 'generation' sections")

    summ = sub.add_parser("summarize", help="recompute metrics from a results file")
    summ.add_argument("results")

    val = sub.add_parser("validate-dataset", help="check a dataset file")
    _add_dataset_args(val)
    return parser


def _load_config(path: Optional[str]) -> dict:
    if not path:
        return {}
    with open(path, encoding="utf-8") as fh:
        return json.load(fh)


def _make_provider(args, model: Optional[str], cfg: dict):
    if args.provider == "mock":
        behavior = MockBehavior.from_config(cfg.get("mock", {}))
        return MockProvider(behavior, seed=args.seed, max_in_flight=args.max_in_flight)
    if not args.api_base or not model:
        raise SystemExit("--provider openai-compat needs --api-base and --model")
    return OpenAICompatProvider(args.api_base, model, api_key_env=API_KEY_ENV, max_in_flight=args.max_in_flight)


def _cmd_run(args) -> int:
    cfg = _load_config(args.config)
    default_task = TaskKind.parse(args.task) if args.task else None
    dataset = load_dataset(args.dataset, default_task)
    provider = _make_provider(args, args.model, cfg)
    judge_provider = None
    if args.judge_model and args.judge_model != args.model:
        judge_provider = _make_provider(args, args.judge_model, cfg)

    params = None
    gen = dict(cfg.get("generation", {}))
    if args.model and args.provider == "openai-compat":
        params = GenerationParams.for_model(args.model, **gen)
    elif gen:
        params = GenerationParams(**gen)
    if args.max_new_tokens:
        params = replace(params or GenerationParams(), max_new_tokens=args.max_new_tokens)

    config = SamplerConfig(
        method=args.method,
        max_trials=args.trials,
        beams=args.beams,
        seed=args.seed,
        regime_threshold=args.threshold,
        judge_enabled=not args.no_judge,
        one_shot=not args.zero_shot,
        workers=args.max_in_flight,
    )
    summary = run_experiment(
        dataset, config, provider, args.out,
        judge_provider=judge_provider, params=params, traces=args.traces, workers=args.workers,
    )
    print(json.dumps(summary.to_dict(), indent=2))
    print(f"manifest: {manifest_path(args.out)}", file=sys.stderr)
    return 0 if summary.n_effective else 1


def _cmd_summarize(args) -> int:
    try:
        summary = summarize(args.results)
    except (MalformedTrace, EmptyInput) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(json.dumps(summary.to_dict(), indent=2))
    return 0


def _cmd_validate(args) -> int:
    default_task = TaskKind.parse(args.task) if args.task else None
    try:
        records = load_dataset(args.dataset, default_task)
    except (MalformedRecord, DuplicateId) as exc:
        print(f"invalid: {exc}", file=sys.stderr)
        return 1
    counts: dict[str, int] = {}
    for r in records:
        counts[r.task.value] = counts.get(r.task.value, 0) + 1
    print(json.dumps({"records": len(records), "by_task": counts}))
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    handlers = {"run": _cmd_run, "summarize": _cmd_summarize, "validate-dataset": _cmd_validate}
    return handlers[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
