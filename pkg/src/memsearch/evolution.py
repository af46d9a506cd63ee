"""The evolution loop: seed evaluation, budgeted mutate/fix/eval iterations,
lineage logging, run-directory persistence, and cost accounting.

The loop is single-threaded; only split evaluation fans out internally.
Per-iteration randomness is derived from (rng_seed, label, iteration), so a
resumed run reproduces an uninterrupted one exactly and two runs with the
same seed and fixture script emit byte-identical lineage and score files.
"""

from __future__ import annotations

import csv
import json
import shutil
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Union

from .evaluator import TaskAdapter, split_eval
from .ledger import UsageLedger
from .llm import LlmClient
from .model import (
    ALIVE,
    DISCARDED,
    CandidateRecord,
    ChangeLogEntry,
    EvolutionConfig,
    MemoryProgramSource,
    Pool,
    QueryItem,
)
from .reflector import (
    REFLECTION_CASE_COUNT,
    Commit,
    MutationFailure,
    ReflectionContext,
    fix_program,
    mutate_program,
)
from .runner import RunnerLimits, RuntimeFactory, Violation, close_session, compile_candidate
from .selection import (
    EmbeddingProvider,
    RandomSource,
    facility_location_select,
    kmeans_representatives,
    rotating_subset,
    sample_failed_cases,
    softmax_select,
)


class EvolutionError(RuntimeError):
    pass


@dataclass(frozen=True)
class LineageEntry:
    """Append-only record: one entry per candidate ever created."""

    candidate_id: int
    parent_id: Optional[int]
    iteration: int
    title: str
    score: Optional[float]
    delta: Optional[float]
    regression: bool
    status: str

    def as_dict(self) -> dict:
        return {
            "id": self.candidate_id,
            "parent": self.parent_id,
            "iteration": self.iteration,
            "title": self.title,
            "score": self.score,
            "delta": self.delta,
            "regression": self.regression,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, record: dict) -> "LineageEntry":
        return cls(
            candidate_id=record["id"],
            parent_id=record["parent"],
            iteration=record["iteration"],
            title=record["title"],
            score=record["score"],
            delta=record["delta"],
            regression=record["regression"],
            status=record["status"],
        )


@dataclass
class EvolutionResult:
    best: CandidateRecord
    pool: Pool
    lineage: list[LineageEntry]
    ledger: UsageLedger


class RunDirectory:
    """Run-directory layout and atomic-enough persistence.

    programs/<id>.src, lineage.jsonl (append-only), scores.json,
    ledger.json, best_program, plot_data.csv, run_state.json, config.
    """

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self.programs = self.root / "programs"
        self.lineage_path = self.root / "lineage.jsonl"
        self.scores_path = self.root / "scores.json"
        self.ledger_path = self.root / "ledger.json"
        self.best_path = self.root / "best_program"
        self.plot_path = self.root / "plot_data.csv"
        self.state_path = self.root / "run_state.json"

    def create(self) -> None:
        self.programs.mkdir(parents=True, exist_ok=True)

    def echo_config(self, config_path: Union[str, Path]) -> None:
        shutil.copyfile(config_path, self.root / "config")

    def write_program(self, candidate_id: int, source_text: str) -> None:
        (self.programs / f"{candidate_id}.src").write_text(source_text, encoding="utf-8")

    def read_program(self, candidate_id: int) -> str:
        return (self.programs / f"{candidate_id}.src").read_text(encoding="utf-8")

    def append_lineage(self, entry: LineageEntry) -> None:
        with open(self.lineage_path, "a", encoding="utf-8") as handle:
            handle.write(json.dumps(entry.as_dict(), sort_keys=True) + "\n")

    def load_lineage(self) -> list[LineageEntry]:
        if not self.lineage_path.exists():
            return []
        entries = []
        with open(self.lineage_path, encoding="utf-8") as handle:
            for line in handle:
                if line.strip():
                    entries.append(LineageEntry.from_dict(json.loads(line)))
        return entries

    def write_scores(self, pool: Pool) -> None:
        scores = {str(record.id): record.static_score for record in pool}
        self.scores_path.write_text(json.dumps(scores, sort_keys=True), encoding="utf-8")

    def write_ledger(self, ledger: UsageLedger) -> None:
        self.ledger_path.write_text(
            json.dumps(ledger.as_dict(), sort_keys=True), encoding="utf-8"
        )

    def load_ledger(self) -> Optional[UsageLedger]:
        if not self.ledger_path.exists():
            return None
        return UsageLedger.from_dict(json.loads(self.ledger_path.read_text(encoding="utf-8")))

    def write_best(self, record: CandidateRecord) -> None:
        payload = {
            "id": record.id,
            "score": record.static_score,
            "program": f"programs/{record.id}.src",
        }
        self.best_path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    def write_state(self, completed_iteration: int, next_id: int) -> None:
        payload = {"completed_iteration": completed_iteration, "next_id": next_id}
        self.state_path.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")

    def load_state(self) -> Optional[dict]:
        if not self.state_path.exists():
            return None
        return json.loads(self.state_path.read_text(encoding="utf-8"))

    def write_plot_data(self, lineage: list[LineageEntry]) -> None:
        """Per-iteration child score, running best, and discard markers."""
        with open(self.plot_path, "w", newline="", encoding="utf-8") as handle:
            writer = csv.writer(handle)
            writer.writerow(["iteration", "child_score", "best_so_far", "discarded"])
            best = None
            for entry in lineage:
                if entry.score is not None:
                    best = entry.score if best is None else max(best, entry.score)
                if entry.iteration == 0:
                    continue
                writer.writerow([
                    entry.iteration,
                    "" if entry.score is None else repr(entry.score),
                    "" if best is None else repr(best),
                    int(entry.status == DISCARDED),
                ])


def prepare_task(
    episodes,
    queries: list[QueryItem],
    config: EvolutionConfig,
    provider: EmbeddingProvider,
    metric: str,
    binary_grader=None,
    episode_subset: Optional[int] = None,
) -> TaskAdapter:
    """Partition validation queries into the static subset and rotating pool.

    The static subset is fixed once per run by k-means with the run seed;
    the rotating pool is the remaining validation items. Queries already
    tagged static/rotating-pool pass through unchanged. An episode budget
    selects the most validation-relevant episodes by facility location.
    """
    static = [q for q in queries if q.split == "static"]
    rotating = [q for q in queries if q.split == "rotating-pool"]
    test = [q for q in queries if q.split == "test"]
    validation = [q for q in queries if q.split == "validation"]

    if validation:
        size = min(config.static_subset_size, len(validation))
        if size == len(validation):
            chosen = {q.id for q in validation}
        else:
            picked = kmeans_representatives(
                [(q.id, q.question) for q in validation], size, provider, config.rng_seed
            )
            chosen = set(picked)
        static += [replace(q, split="static") for q in validation if q.id in chosen]
        rotating += [replace(q, split="rotating-pool") for q in validation if q.id not in chosen]

    if episode_subset is not None and episode_subset < len(episodes):
        reference = [q.question for q in static + rotating] or [q.question for q in test]
        keep = set(
            facility_location_select(
                [(e.id, e.raw_text) for e in episodes], reference, episode_subset, provider
            )
        )
        episodes = [e for e in episodes if e.id in keep]

    return TaskAdapter(
        metric=metric,
        episodes=list(episodes),
        static=static,
        rotating_pool=rotating,
        test=test,
        binary_grader=binary_grader,
    )


def run_evolution(
    task: TaskAdapter,
    seeds: list[MemoryProgramSource],
    config: EvolutionConfig,
    client: LlmClient,
    run_dir: Union[str, Path],
    provider: EmbeddingProvider,
    runtime_factory: RuntimeFactory,
    ledger: UsageLedger,
    limits: Optional[RunnerLimits] = None,
    judge_client: Optional[LlmClient] = None,
) -> EvolutionResult:
    """Search the program space for ``budget`` iterations and return the best.

    Resumable: if the run directory already holds state, the loop continues
    at the first unfinished iteration (or no-ops on a completed run).
    """
    if not seeds:
        raise EvolutionError("at least one seed program is required")
    if len(seeds) != config.seed_count:
        raise EvolutionError(
            f"config expects {config.seed_count} seeds, got {len(seeds)}"
        )
    if not task.static:
        raise EvolutionError("task has no static validation subset")

    rd = RunDirectory(run_dir)
    rd.create()
    limits = limits or RunnerLimits()

    def compile_check(program: MemoryProgramSource) -> Optional[Violation]:
        session = compile_candidate(
            program,
            runtime_factory,
            lambda messages: client.complete(messages, role="toolkit"),
            limits,
        )
        if isinstance(session, Violation):
            return session
        close_session(session)
        return None

    def evaluate(program: MemoryProgramSource, queries: list[QueryItem]):
        return split_eval(
            program, task, queries, config, runtime_factory, client,
            limits=limits, judge_client=judge_client,
        )

    pool = Pool()
    lineage: list[LineageEntry] = []
    state = rd.load_state()

    if state is None:
        # No resume cursor: any partial artifacts are from an aborted
        # seeding phase and would duplicate ids if kept.
        rd.lineage_path.unlink(missing_ok=True)
        for seed in seeds:
            seed_id = pool.allocate_id()
            score, outcome = evaluate(seed, task.static)
            if score is None:
                raise EvolutionError(f"seed {seed_id} failed to compile: {outcome}")
            record = CandidateRecord(
                id=seed_id, program=seed, static_score=score, change_log=[], status=ALIVE
            )
            pool.insert(record)
            entry = LineageEntry(
                candidate_id=seed_id, parent_id=None, iteration=0, title="seed",
                score=score, delta=None, regression=False, status=ALIVE,
            )
            lineage.append(entry)
            rd.write_program(seed_id, seed.source_text)
            rd.append_lineage(entry)
        rd.write_scores(pool)
        rd.write_state(0, len(seeds))
        start_iteration = 1
    else:
        lineage = rd.load_lineage()
        _restore_pool(pool, lineage, rd)
        pool.reserve_ids(state["next_id"])
        start_iteration = state["completed_iteration"] + 1
        restored = rd.load_ledger()
        if restored is not None:
            for role, usage in restored.usage.items():
                ledger.record(role, usage.calls, usage.in_tokens, usage.out_tokens)

    rotating_items = [(q.id, q.question) for q in task.rotating_pool]
    rotating_by_id = {q.id: q for q in task.rotating_pool}

    for iteration in range(start_iteration, config.budget + 1):
        parent_id = softmax_select(
            [(record.id, record.static_score) for record in pool.alive()],
            config.temperature,
            RandomSource.derive(config.rng_seed, "select", iteration),
        )
        parent = pool.get(parent_id)

        subset_size = min(config.rotating_size, len(rotating_items))
        if subset_size:
            rotating_ids = rotating_subset(
                rotating_items, subset_size, iteration, provider, config.rng_seed
            )
            rotating_queries = [rotating_by_id[ident] for ident in rotating_ids]
        else:
            rotating_queries = []
        if not rotating_queries:
            rd.write_state(iteration, _peek_next_id(pool))
            continue

        rotating_score, rotating_outcome = evaluate(parent.program, rotating_queries)
        if rotating_score is None:
            # The parent compiled before; a compile failure here is transient.
            rd.write_state(iteration, _peek_next_id(pool))
            continue

        sampled = sample_failed_cases(
            rotating_outcome.failures,
            REFLECTION_CASE_COUNT,
            RandomSource.derive(config.rng_seed, "cases", iteration),
        )
        if not sampled:
            # Nothing underperformed: no reflection signal this iteration.
            rd.write_state(iteration, _peek_next_id(pool))
            continue

        ctx = ReflectionContext(
            program=parent.program,
            score=parent.static_score,
            iteration=iteration,
            underperforming=sampled,
            lineage=[(e.title, e.delta, e.delta < 0) for e in parent.change_log],
            write_traces=rotating_outcome.write_traces[:2],
            success_cases=sorted(
                rotating_outcome.successes, key=lambda case: -case.score
            )[:2],
            reference_programs=_reference_programs(pool, parent),
            debug_lines=rotating_outcome.debug_log[-40:],
        )

        child_id = pool.allocate_id()
        commit = Commit(title="unlabeled change")
        child: Optional[MemoryProgramSource] = None
        try:
            child, commit = mutate_program(client, parent, ctx)
        except MutationFailure as failure:
            if failure.commit_title:
                commit = Commit(title=failure.commit_title)
            broken = MemoryProgramSource(
                source_text=parent.program.source_text,
                parent_id=parent.id,
                iteration_born=iteration,
            )
            child = fix_program(
                client, broken, failure, config.compile_fix_attempts, compile_check
            )
        else:
            violation = compile_check(child)
            if violation is not None:
                child = fix_program(
                    client, child, violation, config.compile_fix_attempts, compile_check
                )

        if child is None:
            entry = LineageEntry(
                candidate_id=child_id, parent_id=parent.id, iteration=iteration,
                title=commit.title, score=None, delta=None, regression=False,
                status=DISCARDED,
            )
            lineage.append(entry)
            rd.append_lineage(entry)
            rd.write_state(iteration, _peek_next_id(pool))
            continue

        child_score, child_outcome = evaluate(child, task.static)
        if child_score is None:
            entry = LineageEntry(
                candidate_id=child_id, parent_id=parent.id, iteration=iteration,
                title=commit.title, score=None, delta=None, regression=False,
                status=DISCARDED,
            )
            lineage.append(entry)
            rd.write_program(child_id, child.source_text)
            rd.append_lineage(entry)
            rd.write_state(iteration, _peek_next_id(pool))
            continue

        delta = child_score - parent.static_score
        record = CandidateRecord(
            id=child_id,
            program=child,
            static_score=child_score,
            change_log=parent.change_log
            + [ChangeLogEntry(iteration=iteration, title=commit.title, delta=delta)],
            status=ALIVE,
        )
        pool.insert(record)
        entry = LineageEntry(
            candidate_id=child_id, parent_id=parent.id, iteration=iteration,
            title=commit.title, score=child_score, delta=delta,
            regression=delta < 0, status=ALIVE,
        )
        lineage.append(entry)
        rd.write_program(child_id, child.source_text)
        rd.append_lineage(entry)
        rd.write_scores(pool)
        rd.write_state(iteration, _peek_next_id(pool))

    best = pool.best()
    rd.write_scores(pool)
    rd.write_best(best)
    rd.write_plot_data(lineage)
    rd.write_ledger(ledger)
    return EvolutionResult(best=best, pool=pool, lineage=lineage, ledger=ledger)


def _peek_next_id(pool: Pool) -> int:
    return pool.next_id


def _reference_programs(pool: Pool, parent: CandidateRecord) -> list[tuple[str, float]]:
    """Up to two pool programs: nearest above and nearest below the parent."""
    others = [record for record in pool.alive() if record.id != parent.id]
    above = [r for r in others if r.static_score > parent.static_score]
    below = [r for r in others if r.static_score < parent.static_score]
    picks = []
    if above:
        picks.append(min(above, key=lambda r: (r.static_score, r.id)))
    if below:
        picks.append(max(below, key=lambda r: (r.static_score, -r.id)))
    return [(record.program.source_text, record.static_score) for record in picks]


def _restore_pool(pool: Pool, lineage: list[LineageEntry], rd: RunDirectory) -> None:
    """Rebuild the pool from lineage order; insertion order is preserved."""
    programs: dict[int, MemoryProgramSource] = {}
    change_logs: dict[int, list[ChangeLogEntry]] = {}
    for entry in lineage:
        if entry.status != ALIVE:
            continue
        source = rd.read_program(entry.candidate_id)
        program = MemoryProgramSource(
            source_text=source, parent_id=entry.parent_id, iteration_born=entry.iteration
        )
        parent_log = change_logs.get(entry.parent_id, []) if entry.parent_id is not None else []
        log = list(parent_log)
        if entry.iteration > 0:
            log.append(ChangeLogEntry(entry.iteration, entry.title, entry.delta))
        programs[entry.candidate_id] = program
        change_logs[entry.candidate_id] = log
        pool.insert(
            CandidateRecord(
                id=entry.candidate_id,
                program=program,
                static_score=entry.score,
                change_log=log,
                status=ALIVE,
            )
        )


def best_so_far_series(lineage: list[LineageEntry]) -> list[tuple[int, float]]:
    """Running maximum of static scores by iteration; discards contribute nothing."""
    if not lineage:
        raise ValueError("lineage is empty")
    series: list[tuple[int, float]] = []
    best: Optional[float] = None
    for iteration in sorted({entry.iteration for entry in lineage}):
        for entry in lineage:
            if entry.iteration == iteration and entry.score is not None:
                best = entry.score if best is None else max(best, entry.score)
        if best is not None:
            series.append((iteration, best))
    return series


def record_usage(
    ledger: UsageLedger, role: str, calls: int, in_tokens: int, out_tokens: int
) -> UsageLedger:
    """Bump a role's counters; the cost estimate derives from the price table."""
    ledger.record(role, calls=calls, in_tokens=in_tokens, out_tokens=out_tokens)
    return ledger
