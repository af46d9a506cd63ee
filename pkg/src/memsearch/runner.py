"""Candidate runtime supervision: sessions, wire protocol, constraint enforcement.

The supervisor owns every constraint: the LLM proxy budget, the per-invocation
wall-clock timeout (with forced termination), and the read-size cap all live
harness-side, so a buggy or malicious runtime cannot bypass them.

Wire protocol (newline-delimited JSON frames over the runtime's stdio):
  harness -> runtime: init {program_source} / write {item, raw_text} /
                      read {query} / shutdown {}
  runtime -> harness: init_ok {constants, item_schema, query_schema} /
                      init_err {error_type, detail} / write_ok {} /
                      read_ok {text} / err {error_type, detail} /
                      llm_request {messages} / debug {line}
  harness -> runtime: llm_response {text} / llm_denied {reason}
"""

from __future__ import annotations

import itertools
import json
import queue
import subprocess
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

from .model import MemoryProgramSource

PROTOCOL_VERSION = 1

VIOLATION_KINDS = (
    "compile_error",
    "missing_interface",
    "timeout",
    "read_too_long",
    "llm_budget_exceeded",
    "protocol_error",
    "runtime_exception",
)

# States: initializing -> ready <-> busy, any -> failed -> closed.
INITIALIZING = "initializing"
READY = "ready"
BUSY = "busy"
FAILED = "failed"
CLOSED = "closed"

_FATAL_KINDS = frozenset({"timeout", "protocol_error"})

LlmHandler = Callable[[list], str]


class InfrastructureError(RuntimeError):
    """Harness-side failure (process spawn etc.), never the candidate's fault."""


@dataclass(frozen=True)
class Violation:
    kind: str
    detail: str
    phase: str  # compile | write | read

    def __post_init__(self):
        if self.kind not in VIOLATION_KINDS:
            raise ValueError(f"unknown violation kind {self.kind!r}")
        if not self.detail:
            raise ValueError("violation detail must be non-empty")


@dataclass
class RunnerLimits:
    """Runtime constraints; defaults are the published interface constants."""

    read_cap: int = 3000
    invoke_timeout: float = 60.0
    llm_budget: int = 1
    hard_fail_long_read: bool = False
    spawn_retries: int = 1


class TransportTimeout(Exception):
    pass


class TransportClosed(Exception):
    pass


class FrameDecodeError(Exception):
    def __init__(self, raw: str):
        self.raw = raw
        super().__init__(f"undecodable frame: {raw[:200]!r}")


class Transport:
    def send(self, frame: dict) -> None:
        raise NotImplementedError

    def recv(self, timeout: float) -> dict:
        raise NotImplementedError

    def terminate(self) -> None:
        raise NotImplementedError


_POISON = object()


class InProcessTransport(Transport):
    """Runs a runtime's serve loop on a daemon thread, queues in between.

    ``serve`` receives (recv, send) callables mirroring the subprocess stdio
    loop; forced termination abandons the thread (daemon) and closes the
    queues, which is the in-process analogue of killing the process.
    """

    def __init__(self, serve: Callable[[Callable[[], Optional[dict]], Callable[[dict], None]], None]):
        self._inbox: queue.Queue = queue.Queue()
        self._outbox: queue.Queue = queue.Queue()
        self._dead = False
        self._thread = threading.Thread(target=self._run, args=(serve,), daemon=True)
        self._thread.start()

    def _run(self, serve) -> None:
        def recv() -> Optional[dict]:
            frame = self._inbox.get()
            return None if frame is _POISON else frame

        def send(frame: dict) -> None:
            if not self._dead:
                self._outbox.put(frame)

        try:
            serve(recv, send)
        except Exception as error:  # noqa: BLE001 - runtime crash maps to closure
            if not self._dead:
                self._outbox.put({"type": "err", "error_type": "protocol_error",
                                  "detail": f"runtime crashed: {error}"})
        finally:
            self._outbox.put(_POISON)

    def send(self, frame: dict) -> None:
        if self._dead:
            raise TransportClosed("transport terminated")
        self._inbox.put(frame)

    def recv(self, timeout: float) -> dict:
        if self._dead:
            raise TransportClosed("transport terminated")
        try:
            frame = self._outbox.get(timeout=max(timeout, 0.0))
        except queue.Empty as error:
            raise TransportTimeout() from error
        if frame is _POISON:
            raise TransportClosed("runtime loop exited")
        return frame

    def terminate(self) -> None:
        self._dead = True
        self._inbox.put(_POISON)


class SubprocessTransport(Transport):
    """JSON-lines over a child process's stdin/stdout; stderr is captured."""

    def __init__(self, argv: Sequence[str]):
        try:
            self._proc = subprocess.Popen(
                list(argv),
                stdin=subprocess.PIPE,
                stdout=subprocess.PIPE,
                stderr=subprocess.PIPE,
                text=True,
                bufsize=1,
            )
        except OSError as error:
            raise InfrastructureError(f"failed to spawn runtime {argv!r}: {error}") from error
        self._lines: queue.Queue = queue.Queue()
        self._stderr_tail: list[str] = []
        threading.Thread(target=self._pump_stdout, daemon=True).start()
        threading.Thread(target=self._pump_stderr, daemon=True).start()

    def _pump_stdout(self) -> None:
        for line in self._proc.stdout:
            self._lines.put(line)
        self._lines.put(_POISON)

    def _pump_stderr(self) -> None:
        for line in self._proc.stderr:
            self._stderr_tail.append(line.rstrip("\n"))
            del self._stderr_tail[:-50]

    def send(self, frame: dict) -> None:
        try:
            self._proc.stdin.write(json.dumps(frame) + "\n")
            self._proc.stdin.flush()
        except (BrokenPipeError, ValueError, OSError) as error:
            raise TransportClosed(str(error)) from error

    def recv(self, timeout: float) -> dict:
        try:
            line = self._lines.get(timeout=max(timeout, 0.0))
        except queue.Empty as error:
            raise TransportTimeout() from error
        if line is _POISON:
            detail = "; ".join(self._stderr_tail[-5:])
            raise TransportClosed(f"runtime exited ({detail})" if detail else "runtime exited")
        try:
            return json.loads(line)
        except json.JSONDecodeError as error:
            raise FrameDecodeError(line) from error

    def terminate(self) -> None:
        if self._proc.poll() is None:
            self._proc.kill()
        try:
            self._proc.wait(timeout=5)
        except subprocess.TimeoutExpired:
            pass


RuntimeFactory = Callable[[str], Transport]


_session_counter = itertools.count(1)


@dataclass
class RunnerSession:
    """Single-owner supervised runtime session for one candidate."""

    session_id: str
    program: MemoryProgramSource
    transport: Transport
    limits: RunnerLimits
    llm_handler: LlmHandler
    state: str = INITIALIZING
    violations: list[Violation] = field(default_factory=list)
    debug_lines: list[str] = field(default_factory=list)
    item_schema: list[dict] = field(default_factory=list)
    query_schema: list[dict] = field(default_factory=list)
    _closed_log: Optional[list[Violation]] = None
    _lock: threading.Lock = field(default_factory=threading.Lock)


def compile_candidate(
    program: MemoryProgramSource,
    runtime_factory: RuntimeFactory,
    llm_handler: LlmHandler,
    limits: Optional[RunnerLimits] = None,
) -> Union[RunnerSession, Violation]:
    """Launch the runtime, load the program, verify the declared interface.

    Returns a ready session with the four instruction constants extracted
    into the program, or the Violation whose text feeds the compile-fix loop.
    Spawn failures are infrastructure errors, retried once.
    """
    limits = limits or RunnerLimits()
    session_id = f"s{next(_session_counter)}"

    transport = None
    for attempt in range(limits.spawn_retries + 1):
        try:
            transport = runtime_factory(session_id)
            break
        except InfrastructureError:
            if attempt >= limits.spawn_retries:
                raise
    session = RunnerSession(
        session_id=session_id,
        program=program,
        transport=transport,
        limits=limits,
        llm_handler=llm_handler,
    )

    try:
        transport.send({"type": "init", "program_source": program.source_text})
    except TransportClosed as error:
        _mark_failed(session)
        return _record(session, Violation("protocol_error", f"runtime unavailable: {error}", "compile"))

    result = _supervise(session, phase="compile", terminal={"init_ok", "init_err"})
    if isinstance(result, Violation):
        _mark_failed(session)
        return result
    if result["type"] == "init_err":
        error_type = result.get("error_type", "compile_error")
        kind = "missing_interface" if error_type == "missing_interface" else "compile_error"
        detail = result.get("detail", "") or error_type
        _mark_failed(session)
        return _record(session, Violation(kind, detail, "compile"))

    program.instruction_constants = dict(result.get("constants", {}))
    session.item_schema = list(result.get("item_schema", []))
    session.query_schema = list(result.get("query_schema", []))
    session.state = READY
    return session


def invoke_write(session: RunnerSession, item: dict, raw_text: str) -> Optional[Violation]:
    """One supervised write invocation; None means acknowledged."""
    with session._lock:
        not_ready = _check_ready(session, "write")
        if not_ready:
            return not_ready
        session.state = BUSY
        try:
            session.transport.send({"type": "write", "item": item, "raw_text": raw_text})
        except TransportClosed as error:
            _mark_failed(session)
            return _record(session, Violation("protocol_error", f"send failed: {error}", "write"))
        result = _supervise(session, phase="write", terminal={"write_ok"})
        if session.state == BUSY:
            session.state = READY
        if isinstance(result, Violation):
            return result
        return None


def invoke_read(session: RunnerSession, query: dict) -> Union[str, Violation]:
    """One supervised read invocation; over-length results are truncated.

    A result beyond the cap records a read_too_long warning without aborting
    (the hard-fail switch turns it into a failure instead).
    """
    with session._lock:
        not_ready = _check_ready(session, "read")
        if not_ready:
            return not_ready
        session.state = BUSY
        try:
            session.transport.send({"type": "read", "query": query})
        except TransportClosed as error:
            _mark_failed(session)
            return _record(session, Violation("protocol_error", f"send failed: {error}", "read"))
        result = _supervise(session, phase="read", terminal={"read_ok"})
        if session.state == BUSY:
            session.state = READY
        if isinstance(result, Violation):
            return result
        text = str(result.get("text", ""))
        if len(text) > session.limits.read_cap:
            warning = Violation(
                "read_too_long",
                f"read returned {len(text)} chars (cap {session.limits.read_cap})",
                "read",
            )
            _record(session, warning)
            if session.limits.hard_fail_long_read:
                return warning
            text = text[: session.limits.read_cap]
        return text


def close_session(session: RunnerSession) -> list[Violation]:
    """Terminate the runtime and return the accumulated violation log.

    Idempotent: a second close returns the same log.
    """
    if session._closed_log is not None:
        return session._closed_log
    try:
        session.transport.send({"type": "shutdown"})
    except TransportClosed:
        pass
    session.transport.terminate()
    session.state = CLOSED
    session._closed_log = list(session.violations)
    return session._closed_log


def _check_ready(session: RunnerSession, phase: str) -> Optional[Violation]:
    if session.state != READY:
        return _record(
            session,
            Violation("protocol_error", f"session is {session.state}, not ready", phase),
        )
    return None


def _mark_failed(session: RunnerSession) -> None:
    session.transport.terminate()
    if session.state != CLOSED:
        session.state = FAILED


def _record(session: RunnerSession, violation: Violation) -> Violation:
    session.violations.append(violation)
    return violation


def _supervise(session: RunnerSession, phase: str, terminal: set[str]) -> Union[dict, Violation]:
    """Drive one invocation: proxy LLM calls, capture debug, enforce limits.

    The LLM budget resets here, at invocation start. A request beyond the
    budget is denied and reported as the invocation's violation even though
    the runtime stays alive and in protocol sync.
    """
    deadline = time.monotonic() + session.limits.invoke_timeout
    budget = session.limits.llm_budget
    pending_budget_violation: Optional[Violation] = None

    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0:
            _mark_failed(session)
            return _record(
                session,
                Violation("timeout", f"invocation exceeded {session.limits.invoke_timeout}s", phase),
            )
        try:
            frame = session.transport.recv(remaining)
        except TransportTimeout:
            _mark_failed(session)
            return _record(
                session,
                Violation("timeout", f"invocation exceeded {session.limits.invoke_timeout}s", phase),
            )
        except TransportClosed as error:
            _mark_failed(session)
            return _record(session, Violation("protocol_error", f"runtime closed: {error}", phase))
        except FrameDecodeError as error:
            _mark_failed(session)
            return _record(session, Violation("protocol_error", str(error), phase))

        frame_type = frame.get("type")
        if frame_type == "debug":
            session.debug_lines.append(str(frame.get("line", "")))
            continue
        if frame_type == "llm_request":
            if budget > 0:
                budget -= 1
                try:
                    text = session.llm_handler(frame.get("messages", []))
                except Exception as error:  # noqa: BLE001 - surfaces to the candidate
                    session.transport.send({"type": "llm_denied", "reason": f"llm error: {error}"})
                else:
                    session.transport.send({"type": "llm_response", "text": text})
            else:
                session.transport.send(
                    {"type": "llm_denied", "reason": "llm call budget exceeded"}
                )
                if pending_budget_violation is None:
                    pending_budget_violation = Violation(
                        "llm_budget_exceeded",
                        f"second llm request within one {phase} invocation",
                        phase,
                    )
            continue
        if frame_type in terminal or frame_type == "err":
            break
        _mark_failed(session)
        return _record(
            session,
            Violation("protocol_error", f"unexpected frame type {frame_type!r}", phase),
        )

    if pending_budget_violation is not None:
        return _record(session, pending_budget_violation)
    if frame_type == "err":
        kind = frame.get("error_type", "runtime_exception")
        if kind not in VIOLATION_KINDS:
            kind = "runtime_exception"
        detail = frame.get("detail", "") or "runtime error"
        return _record(session, Violation(kind, detail, phase))
    return frame
