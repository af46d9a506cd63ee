"""In-process stand-in for the external candidate runtime.

Programs are statically checked with ``ast`` and never executed: the loader
verifies the three required classes, extracts the four instruction constants
and dataclass field schemas, and the knowledge base degenerates to an ordered
raw-text store whose reads return everything. That is enough to drive the
full evolution loop offline; behavioral fidelity lives in the real runtime.
"""

from __future__ import annotations

import ast
from typing import Callable, Optional

from .model import REQUIRED_CLASSES, REQUIRED_CONSTANTS


class StubRuntime:
    """Serves the wire protocol in-process; one instance per session."""

    def __init__(self):
        self.constants: dict[str, str] = {}
        self.item_schema: list[dict] = []
        self.query_schema: list[dict] = []
        self.texts: list[str] = []
        self.loaded = False

    def serve(self, recv: Callable[[], Optional[dict]], send: Callable[[dict], None]) -> None:
        while True:
            frame = recv()
            if frame is None:
                return
            frame_type = frame.get("type")
            if frame_type == "shutdown":
                return
            if frame_type == "init":
                send(self._handle_init(frame.get("program_source", "")))
            elif frame_type == "write":
                send(self._handle_write(frame))
            elif frame_type == "read":
                send(self._handle_read())
            else:
                send({"type": "err", "error_type": "protocol_error",
                      "detail": f"unexpected frame {frame_type!r}"})

    def _handle_init(self, source: str) -> dict:
        try:
            tree = ast.parse(source)
        except SyntaxError as error:
            return {"type": "init_err", "error_type": "compile_error",
                    "detail": f"SyntaxError: {error}"}

        classes = {node.name: node for node in tree.body if isinstance(node, ast.ClassDef)}
        constants = _string_constants(tree)

        missing = [name for name in REQUIRED_CLASSES if name not in classes]
        missing += [name for name in REQUIRED_CONSTANTS if name not in constants]
        if missing:
            return {"type": "init_err", "error_type": "missing_interface",
                    "detail": f"missing required definitions: {', '.join(missing)}"}

        self.constants = {name: constants[name] for name in REQUIRED_CONSTANTS}
        self.item_schema = _dataclass_schema(classes["KnowledgeItem"])
        self.query_schema = _dataclass_schema(classes["Query"])
        self.loaded = True
        return {"type": "init_ok", "constants": self.constants,
                "item_schema": self.item_schema, "query_schema": self.query_schema}

    def _handle_write(self, frame: dict) -> dict:
        if not self.loaded:
            return {"type": "err", "error_type": "protocol_error",
                    "detail": "write before init"}
        self.texts.append(str(frame.get("raw_text", "")))
        return {"type": "write_ok"}

    def _handle_read(self) -> dict:
        if not self.loaded:
            return {"type": "err", "error_type": "protocol_error",
                    "detail": "read before init"}
        text = "\n\n".join(self.texts) if self.texts else "No information stored."
        return {"type": "read_ok", "text": text}


def _string_constants(tree: ast.Module) -> dict[str, str]:
    constants: dict[str, str] = {}
    for node in tree.body:
        if isinstance(node, ast.Assign) and len(node.targets) == 1:
            target = node.targets[0]
            if isinstance(target, ast.Name):
                value = _literal_str(node.value)
                if value is not None:
                    constants[target.id] = value
    return constants


def _literal_str(node: ast.expr) -> Optional[str]:
    # Plain string literals and parenthesized implicit concatenations.
    try:
        value = ast.literal_eval(node)
    except (ValueError, SyntaxError):
        return None
    return value if isinstance(value, str) else None


def _dataclass_schema(cls: ast.ClassDef) -> list[dict]:
    fields = []
    for node in cls.body:
        if not isinstance(node, ast.AnnAssign) or not isinstance(node.target, ast.Name):
            continue
        fields.append({
            "name": node.target.id,
            "type": ast.unparse(node.annotation),
            "description": _field_description(node.value),
        })
    return fields


def _field_description(value: Optional[ast.expr]) -> str:
    if not isinstance(value, ast.Call):
        return ""
    for keyword in value.keywords:
        if keyword.arg == "metadata" and isinstance(keyword.value, ast.Dict):
            for key, item in zip(keyword.value.keys, keyword.value.values):
                if isinstance(key, ast.Constant) and key.value == "description":
                    if isinstance(item, ast.Constant) and isinstance(item.value, str):
                        return item.value
    return ""
