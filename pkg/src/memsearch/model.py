"""Core domain types and the candidate population pool."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

# Interface every candidate memory program must expose.
REQUIRED_CLASSES = ("KnowledgeItem", "Query", "KnowledgeBase")
REQUIRED_CONSTANTS = (
    "INSTRUCTION_KNOWLEDGE_ITEM",
    "INSTRUCTION_QUERY",
    "INSTRUCTION_RESPONSE",
    "ALWAYS_ON_KNOWLEDGE",
)

SPLITS = ("static", "rotating-pool", "test")

ALIVE = "alive"
DISCARDED = "discarded"


class DuplicateCandidateError(ValueError):
    """A candidate with this id is already in the pool."""


class EmptyPoolError(LookupError):
    """The pool has no alive candidates to select from."""


@dataclass(frozen=True)
class Episode:
    """One past trajectory or document the agent can memorize."""

    id: str
    raw_text: str
    source_tag: str = ""

    def __post_init__(self):
        if not self.raw_text:
            raise ValueError(f"episode {self.id!r} has empty raw_text")


@dataclass(frozen=True)
class RubricCriterion:
    """One graded rubric line; negative points mark undesirable traits."""

    text: str
    points: float

    def __post_init__(self):
        if self.points == 0:
            raise ValueError(f"criterion {self.text!r} has zero points")


@dataclass(frozen=True)
class QueryItem:
    """An evaluation question with its expected answer or rubric.

    ``expected`` is either a plain-text answer or a tuple of rubric
    criteria; the evaluator dispatches the metric accordingly.
    """

    id: str
    question: str
    expected: Union[str, tuple[RubricCriterion, ...]]
    split: str = "rotating-pool"

    def __post_init__(self):
        if self.split not in SPLITS and self.split != "validation":
            raise ValueError(f"query {self.id!r} has unknown split {self.split!r}")

    @property
    def rubric(self) -> Optional[tuple[RubricCriterion, ...]]:
        return self.expected if isinstance(self.expected, tuple) else None

    @property
    def expected_text(self) -> str:
        return self.expected if isinstance(self.expected, str) else ""


@dataclass
class MemoryProgramSource:
    """Candidate program text plus the interface metadata extracted at load."""

    source_text: str
    instruction_constants: dict[str, str] = field(default_factory=dict)
    parent_id: Optional[int] = None
    iteration_born: int = 0

    def constant(self, name: str) -> str:
        return self.instruction_constants.get(name, "")


@dataclass(frozen=True)
class ChangeLogEntry:
    iteration: int
    title: str
    delta: float


@dataclass
class CandidateRecord:
    """A pool entry: program, static validation score, and lineage notes."""

    id: int
    program: MemoryProgramSource
    static_score: Optional[float] = None
    change_log: list[ChangeLogEntry] = field(default_factory=list)
    status: str = ALIVE

    def __post_init__(self):
        if self.status == ALIVE and self.static_score is None:
            raise ValueError(f"alive candidate {self.id} has no static score")
        if self.status == DISCARDED and self.static_score is not None:
            raise ValueError(f"discarded candidate {self.id} carries a score")


@dataclass
class CaseResult:
    """One evaluated query: prediction, retrieved context, score, transcript."""

    query: QueryItem
    prediction: str
    retrieved_context: str
    score: float
    transcript: list[tuple[str, str]]

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"case score {self.score} outside [0, 1]")
        if not self.transcript:
            raise ValueError("evaluated case has empty transcript")


@dataclass
class EvaluationOutcome:
    """Result of one split evaluation: mean score plus partitioned cases."""

    mean_score: float
    failures: list[CaseResult]
    successes: list[CaseResult]
    write_traces: list = field(default_factory=list)
    debug_log: list[str] = field(default_factory=list)

    @property
    def cases(self) -> list[CaseResult]:
        return self.failures + self.successes


@dataclass
class EvolutionConfig:
    """Search hyperparameters; every run setting the loop consumes."""

    budget: int = 20
    seed_count: int = 3
    temperature: float = 0.15
    rotating_size: int = 5
    static_subset_size: int = 60
    failure_threshold: float = 0.5
    compile_fix_attempts: int = 3
    worker_limit: int = 64
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("seed_count", "rotating_size", "static_subset_size", "worker_limit"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.budget < 0:
            raise ValueError("budget must be >= 0")
        if self.compile_fix_attempts < 0:
            raise ValueError("compile_fix_attempts must be >= 0")
        if not (self.temperature > 0 and math.isfinite(self.temperature)):
            raise ValueError("temperature must be a positive finite number")
        if not 0.0 <= self.failure_threshold <= 1.0:
            raise ValueError("failure_threshold must lie in [0, 1]")


class Pool:
    """Population of candidates; insertion order is the total tie-break order.

    Mutation is owned by the evolution loop (single-threaded); records are
    immutable after insertion and safe to share read-only.
    """

    def __init__(self):
        self._records: list[CandidateRecord] = []
        self._by_id: dict[int, CandidateRecord] = {}
        self._next_id = 0

    def allocate_id(self) -> int:
        """Hand out monotonically increasing candidate ids (seeds get 0..K-1)."""
        allocated = self._next_id
        self._next_id += 1
        return allocated

    @property
    def next_id(self) -> int:
        return self._next_id

    def reserve_ids(self, up_to: int) -> None:
        """Advance the id counter past ids restored from a run directory."""
        self._next_id = max(self._next_id, up_to)

    def insert(self, record: CandidateRecord) -> None:
        if record.status != ALIVE or record.static_score is None:
            raise ValueError(f"only alive, scored candidates enter the pool (id={record.id})")
        if record.id in self._by_id:
            raise DuplicateCandidateError(f"candidate id {record.id} already in pool")
        self._records.append(record)
        self._by_id[record.id] = record
        self._next_id = max(self._next_id, record.id + 1)

    def best(self) -> CandidateRecord:
        """Record with maximal static score; earliest insertion wins ties."""
        if not self._records:
            raise EmptyPoolError("pool is empty")
        top = self._records[0]
        for record in self._records[1:]:
            if record.static_score > top.static_score:
                top = record
        return top

    def get(self, candidate_id: int) -> CandidateRecord:
        return self._by_id[candidate_id]

    def alive(self) -> list[CandidateRecord]:
        return list(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __contains__(self, candidate_id: int) -> bool:
        return candidate_id in self._by_id
