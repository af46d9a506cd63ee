#!/usr/bin/env python3
"""Generate a fully offline demo workspace: data, seed, fixture, config.

The scripted reflector applies two staged instruction upgrades; eight of the
sixteen questions only become answerable after them, so the run shows a
climbing best-so-far trajectory without any network access.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

SEED = '''\
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

PATCH_ONE = """*** Commit Message
Title: add baseline answering hints
- the agent hedges without guidance

*** Begin Patch
*** Update File: program.py
-ALWAYS_ON_KNOWLEDGE = ""
+ALWAYS_ON_KNOWLEDGE = "STAGE ONE hints"
*** End Patch
"""

PATCH_TWO = """*** Commit Message
Title: extend hints for the harder questions
- stage-one hints do not cover temporal questions

*** Begin Patch
*** Update File: program.py
-ALWAYS_ON_KNOWLEDGE = "STAGE ONE hints"
+ALWAYS_ON_KNOWLEDGE = "STAGE ONE hints and STAGE TWO hints"
*** End Patch
"""

TOPICS = [
    "harbor", "oriole", "quartz", "meadow", "ember", "lantern", "cedar", "prism",
    "violet", "summit", "ripple", "falcon", "mosaic", "tundra", "breeze", "anchor",
]


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="demo_workspace", help="target directory")
    args = parser.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    with open(out / "episodes.jsonl", "w", encoding="utf-8") as handle:
        for index, topic in enumerate(TOPICS[:6]):
            handle.write(json.dumps({
                "id": f"e{index}",
                "text": f"Field notes about the {topic} site, entry {index}.",
            }) + "\n")

    with open(out / "queries.jsonl", "w", encoding="utf-8") as handle:
        for index, topic in enumerate(TOPICS):
            handle.write(json.dumps({
                "id": f"q{index:02d}",
                "question": f"What is recorded about the {topic} site?",
                "expected": f"survey-{topic}",
                "split": "validation",
            }) + "\n")

    (out / "seed.py").write_text(SEED, encoding="utf-8")

    rules = [
        {"role": "reflector", "contains": "## Failing Code", "response": "cannot repair"},
        {"role": "reflector", "contains": 'ALWAYS_ON_KNOWLEDGE = "STAGE ONE hints"\n',
         "response": PATCH_TWO},
        {"role": "reflector", "contains": 'ALWAYS_ON_KNOWLEDGE = ""\n', "response": PATCH_ONE},
    ]
    for index, topic in enumerate(TOPICS):
        needles = ["<retrieved_memory>", f"What is recorded about the {topic} site?"]
        # Every question is gated: half unlock at stage one, half at stage two,
        # so the trajectory always climbs in at least two visible steps.
        needles.append("STAGE ONE" if index < 8 else "STAGE TWO")
        rules.append({"role": "task", "contains": needles, "response": f"survey-{topic}"})
    rules.append({"role": "task", "contains": "Output ONLY a valid JSON object",
                  "response": json.dumps({"content": "site note"})})
    rules.append({"role": "task", "contains": "Respond with the JSON only.",
                  "response": json.dumps({"query_text": "site"})})
    (out / "fixture.json").write_text(json.dumps({"rules": rules, "default": "unknown"}, indent=2))

    (out / "config.json").write_text(json.dumps({
        "episodes": "episodes.jsonl",
        "queries": "queries.jsonl",
        "metric": "token_f1",
        "run_dir": "run",
        "seeds": ["seed.py"],
        "budget": 8,
        "static_subset_size": 8,
        "rotating_size": 4,
        "compile_fix_attempts": 2,
        "worker_limit": 8,
        "rng_seed": 1,
        "llm": "fixture",
        "fixture_script": "fixture.json",
        "runtime": "stub",
        "invoke_timeout": 10.0,
        "retry_attempts": 1,
    }, indent=2))

    print(f"demo workspace ready: {out}")
    print(f"run it with: memsearch evolve --config {out / 'config.json'}")


if __name__ == "__main__":
    main()
