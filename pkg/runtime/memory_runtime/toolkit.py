"""The Toolkit handed to every candidate knowledge base.

State is fresh per session: an in-memory SQLite connection, an ephemeral
vector client, an LLM completion proxied over the wire protocol, and a
debug logger that emits fire-and-forget frames. The runtime reports but
never enforces the call budget; the harness replies ``llm_denied`` when
the budget is spent and ``llm_completion`` raises.
"""

from __future__ import annotations

import sqlite3
from typing import Callable, Optional

from .vectorstore import EphemeralClient


class ToolkitError(RuntimeError):
    pass


class LlmBudgetExceeded(ToolkitError):
    """The harness denied the completion request (budget spent)."""


class ToolkitLogger:
    def __init__(self, emit: Callable[[dict], None]):
        self._emit = emit

    def debug(self, message) -> None:
        self._emit({"type": "debug", "line": str(message)})


class Toolkit:
    def __init__(self, send: Callable[[dict], None], recv: Callable[[], Optional[dict]]):
        self.db = sqlite3.connect(":memory:")
        self.chroma = EphemeralClient()
        self.logger = ToolkitLogger(send)
        self._send = send
        self._recv = recv

    def llm_completion(self, messages, **kwargs) -> str:
        self._send({"type": "llm_request", "messages": list(messages)})
        reply = self._recv()
        if reply is None:
            raise ToolkitError("harness closed the stream during an llm request")
        reply_type = reply.get("type")
        if reply_type == "llm_response":
            return str(reply.get("text", ""))
        if reply_type == "llm_denied":
            raise LlmBudgetExceeded(str(reply.get("reason", "llm request denied")))
        raise ToolkitError(f"unexpected reply to llm request: {reply_type!r}")

    def close(self) -> None:
        self.db.close()
