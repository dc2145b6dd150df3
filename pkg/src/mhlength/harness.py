"""Dataset ingestion, resumable experiment runs and result summaries.

Datasets and results are newline-delimited JSON. A dataset line looks like::

    {"id": "a1", "task": "instr", "input": "Who made Berlin?", "target": [0, 128]}
    {"id": "c7", "task": "summ", "input": "<article>", "target": "from_reference", "reference": "<highlights>"}

``target`` is an integer (exact), ``[lower, upper]`` (interval, ``upper`` may be
null) or ``"from_reference"`` (exact reference length for summarization, the
interval ``[0, len(reference)]`` otherwise).
"""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import logging
import os
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .constraint import Exact, Interval, LengthConstraint, constraint_from_json, constraint_to_json, count_words
from .judge import Judge
from .llm import GenerationParams, Provider
from .metrics import EmptyInput, EvalSummary, rouge_f1, summarize_rows
from .prompts import Demo, Problem, TaskKind, template_hashes
from .sampler import Method, SamplerConfig, best_chain, run_beams

logger = logging.getLogger(__name__)

MAX_NEW_TOKENS = {TaskKind.SUMMARIZATION: 512, TaskKind.INSTRUCTION: 1024, TaskKind.MATH: 1024}


class MalformedRecord(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line
        self.reason = reason


class DuplicateId(ValueError):
    pass


class MalformedTrace(ValueError):
    def __init__(self, line: int, reason: str):
        super().__init__(f"line {line}: {reason}")
        self.line = line


@dataclass(frozen=True)
class DatasetRecord:
    id: str
    task: TaskKind
    input: str
    target: LengthConstraint
    reference: Optional[str] = None
    demo_id: Optional[str] = None

    def to_json(self) -> dict:
        out = {"id": self.id, "task": self.task.value, "input": self.input, "target": constraint_to_json(self.target)}
        if self.reference is not None:
            out["reference"] = self.reference
        if self.demo_id is not None:
            out["demo_id"] = self.demo_id
        return out


def parse_record(obj: dict, line: int = 0, default_task: Optional[TaskKind] = None) -> DatasetRecord:
    if not isinstance(obj, dict):
        raise MalformedRecord(line, "record is not a JSON object")
    rid = obj.get("id")
    if rid is None or (isinstance(rid, str) and not rid.strip()):
        raise MalformedRecord(line, "missing id")
    text = obj.get("input")
    if not isinstance(text, str) or not text.strip():
        raise MalformedRecord(line, "missing input")
    task = obj.get("task", default_task)
    if task is None:
        raise MalformedRecord(line, "missing task (and no default task given)")
    try:
        task = TaskKind.parse(task)
    except ValueError as exc:
        raise MalformedRecord(line, str(exc)) from None
    reference = obj.get("reference")
    if reference is not None and not isinstance(reference, str):
        raise MalformedRecord(line, "reference must be a string")
    if "target" not in obj:
        raise MalformedRecord(line, "missing target")
    raw = obj["target"]
    try:
        if raw == "from_reference":
            if not reference:
                raise MalformedRecord(line, "target from_reference needs a reference")
            n = count_words(reference)
            target = Exact(n) if task is TaskKind.SUMMARIZATION else Interval(0, n)
        else:
            target = constraint_from_json(raw)
    except (ValueError, TypeError) as exc:
        if isinstance(exc, MalformedRecord):
            raise
        raise MalformedRecord(line, f"bad target: {exc}") from None
    if task is TaskKind.SUMMARIZATION and not isinstance(target, Exact):
        raise MalformedRecord(line, "summarization records need an exact target")
    if task is not TaskKind.SUMMARIZATION and (not isinstance(target, Interval) or target.upper is None):
        raise MalformedRecord(line, "instruction records need a bounded [lower, upper] target")
    return DatasetRecord(str(rid), task, text, target, reference, obj.get("demo_id"))


def load_dataset(path: Union[str, os.PathLike], default_task: Optional[TaskKind] = None) -> list[DatasetRecord]:
    records = []
    seen: dict[str, int] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedRecord(lineno, f"invalid JSON: {exc.msg}") from None
            rec = parse_record(obj, lineno, default_task)
            if rec.id in seen:
                raise DuplicateId(f"id {rec.id!r} on lines {seen[rec.id]} and {lineno}")
            seen[rec.id] = lineno
            records.append(rec)
    return records


def write_dataset(records: Iterable[DatasetRecord], path: Union[str, os.PathLike]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json(), ensure_ascii=False) + "\n")


def dataset_hash(records: Sequence[DatasetRecord]) -> str:
    h = hashlib.sha256()
    for rec in records:
        h.update(json.dumps(rec.to_json(), sort_keys=True, ensure_ascii=False).encode("utf-8"))
        h.update(b"\n")
    return h.hexdigest()


def record_seed(root_seed: int, record_id: str) -> int:
    """Per-record seed; independent of execution order."""
    digest = hashlib.sha256(f"{root_seed}:{record_id}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def choose_demos(pool: Sequence[DatasetRecord], seed: int) -> list[DatasetRecord]:
    """Run-level one-shot demonstrations: a primary pick and a fallback.

    The fallback is used for the record that is itself the primary demo.
    """
    usable = sorted((r for r in pool if r.reference), key=lambda r: r.id)
    if not usable:
        return []
    rng = random.Random(seed)
    picks = rng.sample(usable, k=min(2, len(usable)))
    return picks


def to_problem(record: DatasetRecord, demos: Sequence[DatasetRecord] = ()) -> Problem:
    demo = None
    if record.task is TaskKind.SUMMARIZATION:
        if record.demo_id is not None:
            chosen = [d for d in demos if d.id == record.demo_id]
        else:
            chosen = [d for d in demos if d.id != record.id]
        if chosen:
            d = chosen[0]
            demo = Demo(d.input, d.reference, count_words(d.reference), d.id)
    return Problem(record.id, record.task, record.input, record.target, record.reference, demo)


def _default_params(task: TaskKind, base: Optional[GenerationParams]) -> GenerationParams:
    if base is not None:
        return base
    return GenerationParams(max_new_tokens=MAX_NEW_TOKENS[task])


def run_record(
    record: DatasetRecord,
    config: SamplerConfig,
    provider: Provider,
    *,
    judge: Optional[Judge] = None,
    params: Optional[GenerationParams] = None,
    demos: Sequence[DatasetRecord] = (),
    root_seed: Optional[int] = None,
    traces: bool = False,
) -> dict:
    """Process one record into a results row; failures become ``status: error`` rows."""
    seed = record_seed(config.seed if root_seed is None else root_seed, record.id)
    row: dict = {
        "id": record.id,
        "method": config.method.value,
        "target": constraint_to_json(record.target),
        # inst never proposes, so it has no steps to censor
        "cap": 0 if config.method is Method.INST else config.max_trials,
    }
    try:
        problem = to_problem(record, demos)
        cfg = replace(config, seed=seed)
        _, chains = run_beams(problem, cfg, provider, judge, _default_params(record.task, params))
    except Exception as exc:
        logger.warning("record %s failed: %s", record.id, exc)
        row.update(status="error", error=f"{type(exc).__name__}: {exc}")
        return row
    best = best_chain(chains)
    row.update(
        status="ok",
        final_text=best.final.text,
        word_count=best.final.word_count,
        deviation=best.final.deviation,
        converged_at=best.converged_at,
        steps=best.steps,
        beam=best.beam_index,
    )
    if problem.demo is not None:
        row["demo_id"] = problem.demo.id
    if record.reference:
        row["rouge"] = {k: round(v, 6) for k, v in rouge_f1(best.final.text, record.reference).items()}
    if traces:
        row["beam_traces"] = [c.to_dict() for c in chains]
    return row


def _completed_rows(out_path: Path) -> list[dict]:
    """Rows already on disk; a torn final line (interrupted write) is cut off."""
    if not out_path.exists():
        return []
    data = out_path.read_bytes()
    if data and not data.endswith(b"\n"):
        cut = data.rfind(b"\n") + 1
        logger.warning("dropping incomplete last line of %s", out_path)
        with open(out_path, "r+b") as fh:
            fh.truncate(cut)
        data = data[:cut]
    rows = []
    for lineno, line in enumerate(data.decode("utf-8").splitlines(), 1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise MalformedTrace(lineno, exc.msg) from None
    return rows


def manifest_path(out_path: Union[str, os.PathLike]) -> Path:
    out_path = Path(out_path)
    return out_path.with_name(out_path.name + ".manifest.json")


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def run_experiment(
    dataset: Sequence[DatasetRecord],
    config: SamplerConfig,
    provider: Provider,
    out_path: Union[str, os.PathLike],
    *,
    judge_provider: Optional[Provider] = None,
    params: Optional[GenerationParams] = None,
    demos: Optional[Sequence[DatasetRecord]] = None,
    traces: bool = False,
    workers: int = 1,
) -> EvalSummary:
    """Run ``config.method`` over ``dataset``, appending one JSON line per record.

    Records whose id is already in ``out_path`` are skipped, and lines are
    written in dataset order whatever ``workers`` is, so an interrupted and
    resumed run produces the same file as an uninterrupted one.
    """
    out_path = Path(out_path)
    started = _now()
    done_ids = {row.get("id") for row in _completed_rows(out_path)}
    pending = [r for r in dataset if r.id not in done_ids]
    logger.info("%d records, %d already done, %d to run", len(dataset), len(dataset) - len(pending), len(pending))

    demo_source = list(dataset if demos is None else demos)
    demo_pool = choose_demos(demo_source, record_seed(config.seed, "__demo__"))
    demo_by_id = {d.id: d for d in demo_source}
    judge = None
    if config.judge_enabled and config.method in (Method.MH, Method.MHIS):
        judge = Judge(judge_provider or provider)

    def work(rec: DatasetRecord) -> dict:
        pool = demo_pool
        if rec.demo_id is not None and rec.demo_id in demo_by_id:
            pool = [demo_by_id[rec.demo_id]]
        return run_record(
            rec, config, provider, judge=judge, params=params, demos=pool, root_seed=config.seed, traces=traces
        )

    out_path.parent.mkdir(parents=True, exist_ok=True)
    with open(out_path, "a", encoding="utf-8") as fh:
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                for row in pool.map(work, pending):
                    fh.write(json.dumps(row, ensure_ascii=False) + "\n")
                    fh.flush()
        else:
            for rec in pending:
                fh.write(json.dumps(work(rec), ensure_ascii=False) + "\n")
                fh.flush()

    wanted = {r.id for r in dataset}
    rows = [row for row in _completed_rows(out_path) if row.get("id") in wanted]
    summary = summarize_rows(rows)

    manifest = {
        "config": config.to_dict(),
        "generation": params.to_dict() if params else {t.value: MAX_NEW_TOKENS[t] for t in TaskKind},
        "provider": getattr(provider, "name", type(provider).__name__),
        "judge_provider": getattr(judge_provider or provider, "name", None) if judge else None,
        "templates": template_hashes(),
        "dataset_sha256": dataset_hash(dataset),
        "root_seed": config.seed,
        "demo_ids": [d.id for d in demo_pool],
        "started": started,
        "finished": _now(),
        "status": {
            "ok": sum(1 for r in rows if r.get("status") == "ok"),
            "error": sum(1 for r in rows if r.get("status") != "ok"),
            "executed_this_run": len(pending),
        },
        "summary": summary.to_dict(),
    }
    if hasattr(provider, "behavior"):
        manifest["mock_behavior"] = provider.behavior.to_config()
    manifest_path(out_path).write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n", encoding="utf-8")
    return summary


_REQUIRED_ROW_KEYS = ("id", "status", "cap")
_REQUIRED_OK_KEYS = ("deviation", "converged_at")


def read_results(results_path: Union[str, os.PathLike]) -> list[dict]:
    rows = []
    with open(results_path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            if not line.endswith("\n"):
                raise MalformedTrace(lineno, "truncated line")
            try:
                row = json.loads(line)
            except json.JSONDecodeError as exc:
                raise MalformedTrace(lineno, f"invalid JSON: {exc.msg}") from None
            missing = [k for k in _REQUIRED_ROW_KEYS if k not in row]
            if row.get("status") == "ok":
                missing += [k for k in _REQUIRED_OK_KEYS if k not in row]
            if missing:
                raise MalformedTrace(lineno, f"missing fields {missing}")
            rows.append(row)
    return rows


def summarize(results_path: Union[str, os.PathLike]) -> EvalSummary:
    """Recompute the run summary from a results file alone."""
    rows = read_results(results_path)
    if not rows:
        raise EmptyInput(f"{results_path} has no result rows")
    return summarize_rows(rows)
