"""Loading and validating candidate memory programs.

Programs execute in an isolated namespace whose ``__import__`` rejects
anything outside the published whitelist; ``chromadb`` resolves to the
embedded vector-store shim so the whitelist names stay importable offline.
The interface check demands exactly the three required classes and the
four instruction constants, and extracts dataclass field schemas for the
task agent's prompts.
"""

from __future__ import annotations

import builtins
import dataclasses
import sys
import traceback
import types
import typing
from dataclasses import dataclass
from typing import Optional

from . import vectorstore
from .toolkit import Toolkit

MODULE_NAME = "memory_program"

IMPORT_WHITELIST = frozenset({
    "json", "re", "math", "hashlib", "collections", "dataclasses",
    "typing", "datetime", "textwrap", "sqlite3", "chromadb",
})

REQUIRED_CLASSES = ("KnowledgeItem", "Query", "KnowledgeBase")
REQUIRED_CONSTANTS = (
    "INSTRUCTION_KNOWLEDGE_ITEM",
    "INSTRUCTION_QUERY",
    "INSTRUCTION_RESPONSE",
    "ALWAYS_ON_KNOWLEDGE",
)


class LoadError(Exception):
    def __init__(self, error_type: str, detail: str):
        self.error_type = error_type
        self.detail = detail
        super().__init__(f"{error_type}: {detail}")


class ForbiddenImportError(ImportError):
    pass


def _guarded_import(name, globals=None, locals=None, fromlist=(), level=0):
    if level != 0:
        raise ForbiddenImportError("relative imports are not allowed")
    root = name.split(".")[0]
    if root not in IMPORT_WHITELIST:
        raise ForbiddenImportError(
            f"import of {root!r} is not allowed "
            f"(whitelist: {', '.join(sorted(IMPORT_WHITELIST))})"
        )
    if root == "chromadb":
        return vectorstore
    return builtins.__import__(name, globals, locals, fromlist, level)


@dataclass
class LoadedProgram:
    constants: dict[str, str]
    item_schema: list[dict]
    query_schema: list[dict]
    item_class: type
    query_class: type
    knowledge_base: object
    toolkit: Toolkit


def load_program(source_text: str, toolkit: Toolkit) -> LoadedProgram:
    """Compile, execute under the whitelist, and validate the interface."""
    try:
        code = compile(source_text, f"<{MODULE_NAME}>", "exec")
    except SyntaxError:
        raise LoadError("compile_error", traceback.format_exc(limit=0)) from None

    guarded_builtins = dict(vars(builtins))
    guarded_builtins["__import__"] = _guarded_import

    # The dataclass machinery resolves cls.__module__ through sys.modules,
    # so the program must execute inside a registered module object.
    module = types.ModuleType(MODULE_NAME)
    module.__dict__["__builtins__"] = guarded_builtins
    sys.modules[MODULE_NAME] = module
    namespace = module.__dict__

    # The whitelist name must resolve even through indirect import machinery.
    sys.modules.setdefault("chromadb", vectorstore)
    try:
        exec(code, namespace)  # noqa: S102 - this process exists to host the program
    except ForbiddenImportError as error:
        raise LoadError("forbidden_import", str(error)) from None
    except Exception:
        raise LoadError("compile_error", traceback.format_exc()) from None

    defined_classes = {
        name: value
        for name, value in namespace.items()
        if isinstance(value, type) and getattr(value, "__module__", "") == MODULE_NAME
    }
    missing = [name for name in REQUIRED_CLASSES if name not in defined_classes]
    if missing:
        raise LoadError("missing_interface", f"missing required classes: {', '.join(missing)}")
    extra = sorted(set(defined_classes) - set(REQUIRED_CLASSES))
    if extra:
        raise LoadError(
            "missing_interface",
            f"the program must define exactly three classes; extra: {', '.join(extra)}",
        )

    missing_constants = [
        name for name in REQUIRED_CONSTANTS if not isinstance(namespace.get(name), str)
    ]
    if missing_constants:
        raise LoadError(
            "missing_interface",
            f"missing required string constants: {', '.join(missing_constants)}",
        )

    item_class = defined_classes["KnowledgeItem"]
    query_class = defined_classes["Query"]
    for name, cls in (("KnowledgeItem", item_class), ("Query", query_class)):
        if not dataclasses.is_dataclass(cls):
            raise LoadError("missing_interface", f"{name} must be a dataclass")

    try:
        knowledge_base = defined_classes["KnowledgeBase"](toolkit)
    except Exception:
        raise LoadError("compile_error", traceback.format_exc()) from None

    return LoadedProgram(
        constants={name: namespace[name] for name in REQUIRED_CONSTANTS},
        item_schema=_schema_of(item_class),
        query_schema=_schema_of(query_class),
        item_class=item_class,
        query_class=query_class,
        knowledge_base=knowledge_base,
        toolkit=toolkit,
    )


def _schema_of(cls: type) -> list[dict]:
    schema = []
    for entry in dataclasses.fields(cls):
        schema.append({
            "name": entry.name,
            "type": _type_name(entry.type),
            "description": str(entry.metadata.get("description", "")),
        })
    return schema


def _type_name(annotation) -> str:
    if isinstance(annotation, str):
        return annotation
    name = getattr(annotation, "__name__", None)
    if name and not typing.get_args(annotation):
        return name
    return str(annotation)


def materialize(cls: type, record: dict) -> object:
    """Build a dataclass instance from an LLM-generated record, leniently.

    Unknown keys are dropped; missing fields take the declared default or a
    type-appropriate empty value; scalars are coerced (numbers from numeric
    strings, lists from singletons) because the values are model-generated.
    """
    values = {}
    for entry in dataclasses.fields(cls):
        if entry.name in record:
            values[entry.name] = _coerce(record[entry.name], entry.type)
        elif entry.default is not dataclasses.MISSING:
            values[entry.name] = entry.default
        elif entry.default_factory is not dataclasses.MISSING:  # type: ignore[misc]
            values[entry.name] = entry.default_factory()  # type: ignore[misc]
        else:
            values[entry.name] = _empty(entry.type)
    return cls(**values)


def _normalize_annotation(annotation):
    if isinstance(annotation, str):
        text = annotation.strip()
        mapping = {"str": str, "int": int, "float": float, "bool": bool}
        if text in mapping:
            return mapping[text]
        if text.startswith("list"):
            return list
        if text.startswith(("Optional", "typing.Optional")):
            return Optional[str]
        return str
    return annotation


def _coerce(value, annotation):
    annotation = _normalize_annotation(annotation)
    origin = typing.get_origin(annotation)

    if origin is typing.Union:
        if value is None:
            return None
        args = [arg for arg in typing.get_args(annotation) if arg is not type(None)]
        return _coerce(value, args[0]) if args else value

    if annotation is list or origin is list:
        args = typing.get_args(annotation)
        inner = args[0] if args else str
        if value is None:
            return []
        if isinstance(value, (list, tuple)):
            return [_coerce(item, inner) for item in value]
        return [_coerce(value, inner)]

    if annotation is bool:
        if isinstance(value, str):
            return value.strip().lower() in ("true", "yes", "1")
        return bool(value)
    if annotation is int:
        try:
            return int(float(value)) if isinstance(value, str) else int(value)
        except (TypeError, ValueError):
            return 0
    if annotation is float:
        try:
            return float(value)
        except (TypeError, ValueError):
            return 0.0
    if annotation is str:
        if value is None:
            return ""
        if isinstance(value, (list, tuple)):
            return " ".join(str(item) for item in value)
        return str(value)
    return value


def _empty(annotation):
    annotation = _normalize_annotation(annotation)
    origin = typing.get_origin(annotation)
    if origin is typing.Union:
        return None
    if annotation is list or origin is list:
        return []
    if annotation is bool:
        return False
    if annotation is int:
        return 0
    if annotation is float:
        return 0.0
    return ""
