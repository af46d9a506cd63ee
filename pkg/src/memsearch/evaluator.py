"""Split evaluation: knowledge ingestion over episodes, then retrieval-and-scoring.

Every evaluation rebuilds the knowledge base from scratch in a fresh runtime
session; no state leaks between candidates or between static and rotating
evaluations. Ingestion is strictly sequential (writes may be order-sensitive);
query scoring fans out over a bounded worker pool with results accumulated in
query order so the outcome is independent of scheduling.
"""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Union

from . import reflector
from .llm import LlmClient, LlmError
from .metrics import aggregate_fitness, parse_judge_response, rubric_score, token_f1
from .model import (
    CaseResult,
    Episode,
    EvaluationOutcome,
    EvolutionConfig,
    MemoryProgramSource,
    QueryItem,
    RubricCriterion,
)
from .runner import (
    RunnerLimits,
    RunnerSession,
    RuntimeFactory,
    Violation,
    close_session,
    compile_candidate,
    invoke_read,
    invoke_write,
)

METRICS = ("token_f1", "judge", "rubric", "binary")

BinaryGrader = Callable[[QueryItem, str], bool]


class DataFormatError(ValueError):
    pass


@dataclass
class TaskAdapter:
    """A task: episodes plus the three disjoint query splits and a metric."""

    metric: str
    episodes: list[Episode]
    static: list[QueryItem] = field(default_factory=list)
    rotating_pool: list[QueryItem] = field(default_factory=list)
    test: list[QueryItem] = field(default_factory=list)
    binary_grader: Optional[BinaryGrader] = None

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        seen: set[str] = set()
        for split in (self.static, self.rotating_pool, self.test):
            for query in split:
                if query.id in seen:
                    raise ValueError(f"query id {query.id!r} appears in more than one split")
                seen.add(query.id)
        if self.metric == "rubric":
            for query in self.static + self.rotating_pool + self.test:
                if query.rubric is None:
                    raise ValueError(f"rubric metric needs criteria on query {query.id!r}")


@dataclass
class WriteTrace:
    """One episode's ingestion: extraction transcript plus disposition."""

    episode_id: str
    turns: list[tuple[str, str]]
    item: Optional[dict]
    status: str  # written | skipped | violation
    note: str = ""


def ingest_episodes(
    session: RunnerSession,
    episodes: list[Episode],
    client: LlmClient,
) -> tuple[list[WriteTrace], Optional[Violation]]:
    """Phase 1: extract a knowledge item per episode and write it, in order.

    Unparseable extractions skip the episode after one reminder retry; a
    violation that kills the session stops ingestion and is returned.
    """
    constants = session.program.instruction_constants
    instruction = constants.get("INSTRUCTION_KNOWLEDGE_ITEM", "")
    traces: list[WriteTrace] = []
    fatal: Optional[Violation] = None

    for episode in episodes:
        if fatal is not None:
            traces.append(WriteTrace(episode.id, [], None, "skipped", "session unavailable"))
            continue
        try:
            record, turns = reflector.generate_knowledge_item(
                client, instruction, session.item_schema, episode.raw_text
            )
        except LlmError as error:
            traces.append(WriteTrace(episode.id, [], None, "skipped", f"agent failure: {error}"))
            continue
        if record is None:
            traces.append(WriteTrace(episode.id, turns, None, "skipped", "unparseable extraction"))
            continue
        violation = invoke_write(session, record, episode.raw_text)
        if violation is None:
            traces.append(WriteTrace(episode.id, turns, record, "written"))
        else:
            traces.append(WriteTrace(episode.id, turns, record, "violation", str(violation)))
            if session.state != "ready":
                fatal = violation
    return traces, fatal


def evaluate_queries(
    session: RunnerSession,
    queries: list[QueryItem],
    client: LlmClient,
    metric: str,
    threshold: float,
    judge_client: Optional[LlmClient] = None,
    binary_grader: Optional[BinaryGrader] = None,
    worker_limit: int = 1,
) -> EvaluationOutcome:
    """Phase 2: query formulation, retrieval, answer, score, partition by theta."""
    if not queries:
        raise ValueError("no queries to evaluate")
    if metric == "binary" and binary_grader is None:
        raise ValueError("binary metric requires a success grader")
    judge = judge_client or client

    def evaluate_one(query: QueryItem) -> CaseResult:
        constants = session.program.instruction_constants
        try:
            record, turns = reflector.generate_query(
                client, constants.get("INSTRUCTION_QUERY", ""), session.query_schema, query.question
            )
        except LlmError as error:
            return _failed_case(query, f"agent failure: {error}")
        if record is None:
            return _failed_case(query, "unparseable query formulation", turns)

        result = invoke_read(session, record)
        if isinstance(result, Violation):
            turns = turns + [("system", f"violation: {result}")]
            return CaseResult(query, "", "", 0.0, turns)
        retrieved = result

        try:
            answer, turns = reflector.generate_answer(
                client,
                constants.get("ALWAYS_ON_KNOWLEDGE", ""),
                retrieved,
                constants.get("INSTRUCTION_RESPONSE", ""),
                turns,
            )
        except LlmError as error:
            return _failed_case(query, f"agent failure: {error}", turns, retrieved)

        score = _score_case(query, answer, turns, metric, judge, binary_grader)
        return CaseResult(query, answer, retrieved, score, turns)

    workers = max(1, min(worker_limit, len(queries)))
    if workers == 1:
        cases = [evaluate_one(query) for query in queries]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cases = list(pool.map(evaluate_one, queries))

    failures = [case for case in cases if case.score < threshold]
    successes = [case for case in cases if case.score >= threshold]
    mean = aggregate_fitness([case.score for case in cases])
    return EvaluationOutcome(
        mean_score=mean,
        failures=failures,
        successes=successes,
        debug_log=list(session.debug_lines),
    )


def _failed_case(
    query: QueryItem,
    note: str,
    turns: Optional[list[tuple[str, str]]] = None,
    retrieved: str = "",
) -> CaseResult:
    transcript = list(turns or [])
    transcript.append(("system", note))
    return CaseResult(query, "", retrieved, 0.0, transcript)


def _score_case(
    query: QueryItem,
    answer: str,
    turns: list[tuple[str, str]],
    metric: str,
    judge: LlmClient,
    binary_grader: Optional[BinaryGrader],
) -> float:
    if metric == "token_f1":
        return token_f1(answer, query.expected_text)
    if metric == "judge":
        try:
            reply = reflector.judge_answer(judge, query.expected_text, answer)
        except LlmError:
            return 0.0
        return parse_judge_response(reply)
    if metric == "binary":
        return 1.0 if binary_grader(query, answer) else 0.0
    # rubric: one judge call per criterion over the answer conversation
    conversation = reflector.render_conversation(turns)
    grades = [
        reflector.grade_rubric_criterion(judge, conversation, criterion)
        for criterion in query.rubric
    ]
    return rubric_score(grades)


def split_eval(
    program: MemoryProgramSource,
    task: TaskAdapter,
    queries: list[QueryItem],
    config: EvolutionConfig,
    runtime_factory: RuntimeFactory,
    client: LlmClient,
    limits: Optional[RunnerLimits] = None,
    judge_client: Optional[LlmClient] = None,
) -> tuple[Optional[float], Union[EvaluationOutcome, Violation]]:
    """Compile, ingest, evaluate, close; one fresh session per call.

    A compile violation yields (None, violation) for the compile-fix path.
    """
    def toolkit_handler(messages: list) -> str:
        return client.complete(messages, role="toolkit")

    session = compile_candidate(program, runtime_factory, toolkit_handler, limits)
    if isinstance(session, Violation):
        return None, session
    try:
        traces, fatal = ingest_episodes(session, task.episodes, client)
        outcome = evaluate_queries(
            session,
            queries,
            client,
            task.metric,
            config.failure_threshold,
            judge_client=judge_client,
            binary_grader=task.binary_grader,
            worker_limit=config.worker_limit,
        )
        outcome.write_traces = traces
        if fatal is not None:
            outcome.debug_log.append(f"ingestion aborted: {fatal}")
    finally:
        close_session(session)
    return outcome.mean_score, outcome


def load_episodes(path: Union[str, Path]) -> list[Episode]:
    """Line-delimited episode records: id, text, optional source."""
    episodes = []
    for line_no, record in _read_jsonl(path):
        for key in ("id", "text"):
            if key not in record:
                raise DataFormatError(f"{path}:{line_no}: episode record missing {key!r}")
        if not record["text"]:
            raise DataFormatError(f"{path}:{line_no}: episode text is empty")
        episodes.append(
            Episode(id=str(record["id"]), raw_text=record["text"], source_tag=record.get("source", ""))
        )
    _reject_duplicate_ids(episodes, path)
    return episodes


def load_queries(path: Union[str, Path]) -> list[QueryItem]:
    """Line-delimited query records: id, question, split, expected or rubric."""
    queries = []
    for line_no, record in _read_jsonl(path):
        for key in ("id", "question", "split"):
            if key not in record:
                raise DataFormatError(f"{path}:{line_no}: query record missing {key!r}")
        split = record["split"]
        if split not in ("validation", "static", "rotating-pool", "test"):
            raise DataFormatError(f"{path}:{line_no}: unknown split {split!r}")
        if "rubric" in record:
            try:
                criteria = tuple(
                    RubricCriterion(text=entry["text"], points=float(entry["points"]))
                    for entry in record["rubric"]
                )
            except (KeyError, TypeError, ValueError) as error:
                raise DataFormatError(f"{path}:{line_no}: bad rubric: {error}") from error
            if not criteria:
                raise DataFormatError(f"{path}:{line_no}: rubric list is empty")
            expected: Union[str, tuple[RubricCriterion, ...]] = criteria
        elif "expected" in record:
            expected = str(record["expected"])
        else:
            raise DataFormatError(f"{path}:{line_no}: query needs 'expected' or 'rubric'")
        queries.append(
            QueryItem(id=str(record["id"]), question=record["question"], expected=expected, split=split)
        )
    _reject_duplicate_ids(queries, path)
    return queries


def _read_jsonl(path: Union[str, Path]):
    with open(path, encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as error:
                raise DataFormatError(f"{path}:{line_no}: invalid JSON: {error}") from error
            if not isinstance(record, dict):
                raise DataFormatError(f"{path}:{line_no}: record must be an object")
            yield line_no, record


def _reject_duplicate_ids(items, path) -> None:
    seen: set[str] = set()
    for item in items:
        if item.id in seen:
            raise DataFormatError(f"{path}: duplicate id {item.id!r}")
        seen.add(item.id)
