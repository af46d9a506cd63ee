"""In-process protocol driving helpers for runtime tests."""

from __future__ import annotations

import queue

import pytest

from memory_runtime.server import Server


class ProtocolDriver:
    """Feed frames to a Server and collect replies, single-threaded."""

    def __init__(self):
        self.inbox: queue.Queue = queue.Queue()
        self.outbox: list[dict] = []

    def recv(self):
        try:
            return self.inbox.get_nowait()
        except queue.Empty:
            return None

    def run(self, frames: list[dict]) -> list[dict]:
        for frame in frames:
            self.inbox.put(frame)
        Server(self.recv, self.outbox.append).serve()
        return self.outbox


def drive(frames: list[dict]) -> list[dict]:
    return ProtocolDriver().run(frames)


@pytest.fixture
def driver():
    return ProtocolDriver()


MINIMAL_PROGRAM = '''\
from dataclasses import dataclass, field

INSTRUCTION_KNOWLEDGE_ITEM = "extract"
INSTRUCTION_QUERY = "query"
INSTRUCTION_RESPONSE = "respond"
ALWAYS_ON_KNOWLEDGE = ""


@dataclass
class KnowledgeItem:
    content: str = field(metadata={"description": "key info"})
    count: int = 0
    tags: list[str] = field(default_factory=list)


@dataclass
class Query:
    query_text: str = field(metadata={"description": "terms"})


class KnowledgeBase:
    def __init__(self, toolkit):
        self.toolkit = toolkit
        self.items = []

    def write(self, item, raw_text):
        self.items.append((item, raw_text))

    def read(self, query):
        return " | ".join(raw for _, raw in self.items) or "No information stored."
'''
