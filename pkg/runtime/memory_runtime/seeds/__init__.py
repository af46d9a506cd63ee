"""The three shipped seed programs, loadable as source text."""

from __future__ import annotations

from pathlib import Path

SEED_NAMES = ("vector_search", "llm_summarizer", "experience_learner")

_HERE = Path(__file__).parent


def seed_path(name: str) -> Path:
    if name not in SEED_NAMES:
        raise KeyError(f"unknown seed {name!r} (have: {', '.join(SEED_NAMES)})")
    return _HERE / f"{name}.py"


def seed_source(name: str) -> str:
    return seed_path(name).read_text(encoding="utf-8")
