"""The request loop: one frame at a time, in arrival order.

Candidate exceptions are caught and returned as ``err`` frames with full
tracebacks; the runtime itself never crashes on candidate failures. The
read cap and LLM budget are the harness's to enforce: raw output is
forwarded as-is.
"""

from __future__ import annotations

import traceback
from typing import Callable, Optional

from .loader import LoadedProgram, LoadError, load_program, materialize
from .toolkit import Toolkit


def err_frame(error_type: str, detail: str) -> dict:
    return {"type": "err", "error_type": error_type, "detail": detail}


class Server:
    def __init__(self, recv: Callable[[], Optional[dict]], send: Callable[[dict], None]):
        self._recv = recv
        self._send = send
        self._program: Optional[LoadedProgram] = None

    def serve(self) -> None:
        while True:
            frame = self._recv()
            if frame is None:
                return
            frame_type = frame.get("type")
            if frame_type == "shutdown":
                return
            handler = {
                "init": self._handle_init,
                "write": self._handle_write,
                "read": self._handle_read,
            }.get(frame_type)
            if handler is None:
                self._send(err_frame("protocol_error", f"unexpected frame {frame_type!r}"))
                continue
            self._send(handler(frame))

    def _handle_init(self, frame: dict) -> dict:
        if self._program is not None:
            return err_frame("protocol_error", "program already initialized")
        toolkit = Toolkit(self._send, self._recv)
        try:
            program = load_program(str(frame.get("program_source", "")), toolkit)
        except LoadError as error:
            return {"type": "init_err", "error_type": error.error_type, "detail": error.detail}
        self._program = program
        return {
            "type": "init_ok",
            "constants": program.constants,
            "item_schema": program.item_schema,
            "query_schema": program.query_schema,
        }

    def _handle_write(self, frame: dict) -> dict:
        if self._program is None:
            return err_frame("protocol_error", "write before init")
        try:
            item = materialize(self._program.item_class, _record(frame.get("item")))
            self._program.knowledge_base.write(item, str(frame.get("raw_text", "")))
        except Exception:
            return err_frame("runtime_exception", traceback.format_exc())
        return {"type": "write_ok"}

    def _handle_read(self, frame: dict) -> dict:
        if self._program is None:
            return err_frame("protocol_error", "read before init")
        try:
            query = materialize(self._program.query_class, _record(frame.get("query")))
            text = self._program.knowledge_base.read(query)
        except Exception:
            return err_frame("runtime_exception", traceback.format_exc())
        return {"type": "read_ok", "text": text if isinstance(text, str) else str(text)}


def _record(value) -> dict:
    return value if isinstance(value, dict) else {}
