"""Shared fixtures: minimal candidate programs and in-process runtime plumbing."""

from __future__ import annotations

import pytest

from memsearch.ledger import UsageLedger
from memsearch.model import MemoryProgramSource
from memsearch.runner import InProcessTransport, RunnerLimits, compile_candidate
from memsearch.selection import HashedEmbeddingProvider
from memsearch.stubruntime import StubRuntime

MINIMAL_PROGRAM = '''\
# knowledge program
from dataclasses import dataclass, field

INSTRUCTION_KNOWLEDGE_ITEM = "Extract the key fact from the text."
INSTRUCTION_QUERY = "Write a short retrieval query for the question."
INSTRUCTION_RESPONSE = "Answer concisely from the retrieved memory."
ALWAYS_ON_KNOWLEDGE = ""


@dataclass
class KnowledgeItem:
    content: str = field(metadata={"description": "Key information from the text"})


@dataclass
class Query:
    query_text: str = field(metadata={"description": "Search terms"})


class KnowledgeBase:
    def __init__(self, toolkit):
        self.toolkit = toolkit
        self.texts = []

    def write(self, item, raw_text):
        self.texts.append(raw_text)

    def read(self, query):
        return "\\n".join(self.texts) if self.texts else "No information stored."
'''


@pytest.fixture
def minimal_program() -> MemoryProgramSource:
    return MemoryProgramSource(source_text=MINIMAL_PROGRAM)


@pytest.fixture
def stub_factory():
    return lambda session_id: InProcessTransport(StubRuntime().serve)


@pytest.fixture
def fast_limits() -> RunnerLimits:
    return RunnerLimits(invoke_timeout=5.0)


@pytest.fixture
def ready_session(minimal_program, stub_factory, fast_limits):
    from memsearch.runner import Violation, close_session

    session = compile_candidate(
        minimal_program, stub_factory, lambda messages: "toolkit reply", fast_limits
    )
    assert not isinstance(session, Violation)
    yield session
    close_session(session)


@pytest.fixture
def ledger() -> UsageLedger:
    return UsageLedger()


@pytest.fixture
def provider() -> HashedEmbeddingProvider:
    return HashedEmbeddingProvider(dimension=64)


def scripted_serve(handler):
    """Build a serve loop from a per-frame handler for violation fixtures.

    ``handler(frame, send)`` returns the reply frame (or None when it already
    sent everything itself).
    """

    def serve(recv, send):
        while True:
            frame = recv()
            if frame is None or frame.get("type") == "shutdown":
                return
            reply = handler(frame, send)
            if reply is not None:
                send(reply)

    return serve


def init_ok_frame(constants=None, item_schema=None, query_schema=None):
    return {
        "type": "init_ok",
        "constants": constants or {
            "INSTRUCTION_KNOWLEDGE_ITEM": "extract",
            "INSTRUCTION_QUERY": "query",
            "INSTRUCTION_RESPONSE": "respond",
            "ALWAYS_ON_KNOWLEDGE": "",
        },
        "item_schema": item_schema or [{"name": "content", "type": "str", "description": ""}],
        "query_schema": query_schema or [{"name": "query_text", "type": "str", "description": ""}],
    }
