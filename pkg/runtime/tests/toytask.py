"""Synthetic QA task + scripted fixture for the end-to-end evolution run.

Twelve single-fact episodes, twenty validation queries. The scripted task
agent emits a junk retrieval query, so the vector-search seed surfaces only
its top-5 chunks and misses most facts; the scripted reflector's first patch
makes read() return the whole store (every fact lands in the answer prompt),
and its second patch sets ALWAYS_ON_KNOWLEDGE to a marker that four gated
queries additionally require. Static fitness therefore climbs seed ->
child A -> child B, and child B is the expected final best.

The search harness is exercised only through its public surfaces: the CLI
and the documented data-file formats.
"""

from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

from memory_runtime.seeds import seed_path
from memory_runtime.vectorstore import EphemeralClient

NAMES = [
    "amber", "birch", "cobalt", "dune", "ember", "fjord",
    "garnet", "harbor", "iris", "juniper", "krill", "lagoon",
]

GATED_MARKER = "PRECISE:"

PATCH_A = """Diagnosis: top-5 retrieval misses most stored facts on this task.

*** Commit Message
Title: retrieve every stored chunk
- top-5 retrieval misses most stored facts
- the whole store fits comfortably under the read cap

*** Begin Patch
*** Update File: program.py
@@
     def read(self, query: Query) -> str:
         if self._doc_id == 0:
             return "No information stored."
-        results = self.collection.query(
-            query_texts=[query.query_text], n_results=min(5, self._doc_id))
+        # RETRIEVE_ALL: the store is small, return every chunk
+        results = self.collection.query(
+            query_texts=[query.query_text], n_results=self._doc_id)
         docs = results["documents"][0] if results["documents"] else []
         return "\\n\\n".join(docs)[:3000] if docs else "No relevant information found."
*** End Patch
"""

PATCH_B = """Diagnosis: answers hedge instead of naming the code word.

*** Commit Message
Title: pin the answer style
- answers drift into hedging; demand the exact code word

*** Begin Patch
*** Update File: program.py
@@
-ALWAYS_ON_KNOWLEDGE = ""
+ALWAYS_ON_KNOWLEDGE = "PRECISE: answer with the exact code word only."
*** End Patch
"""


def fact_text(index: int) -> str:
    return f"The {NAMES[index]} code is secret-{NAMES[index]}-{index}."


def expected_answer(index: int) -> str:
    return f"secret-{NAMES[index]}-{index}"


def build_queries() -> list[dict]:
    queries = []
    for position in range(20):
        fact = position % 12
        if position < 12:
            question = f"What is the {NAMES[fact]} code?"
        else:
            question = f"Tell me the code for {NAMES[fact]}."
        queries.append({
            "id": f"q{position:02d}",
            "question": question,
            "expected": expected_answer(fact),
            "split": "validation",
            "fact": fact,
        })
    return queries


def seed_top5_facts() -> set[int]:
    """Which facts the vector-search seed retrieves for the scripted query."""
    collection = EphemeralClient().get_or_create_collection("probe")
    collection.add(
        documents=[fact_text(index) for index in range(12)],
        ids=[f"doc_{index}" for index in range(12)],
    )
    results = collection.query(query_texts=["lookup"], n_results=5)
    return {int(doc_id.split("_")[1]) for doc_id in results["ids"][0]}


def static_query_ids(config_path: Path) -> list[str]:
    proc = subprocess.run(
        [sys.executable, "-m", "memsearch", "subset",
         "--config", str(config_path), "--kind", "static"],
        capture_output=True, text=True, check=True,
    )
    return proc.stdout.split()


def write_task(root: Path, run_dir_name: str, rng_seed: int) -> Path:
    """Write data, fixture, and config under ``root``; returns the config path."""
    root.mkdir(parents=True, exist_ok=True)
    queries = build_queries()

    with open(root / "episodes.jsonl", "w", encoding="utf-8") as handle:
        for index in range(12):
            handle.write(json.dumps({
                "id": f"e{index:02d}", "text": fact_text(index), "source": "toy",
            }) + "\n")
    with open(root / "queries.jsonl", "w", encoding="utf-8") as handle:
        for query in queries:
            record = {key: query[key] for key in ("id", "question", "expected", "split")}
            handle.write(json.dumps(record) + "\n")

    config = {
        "episodes": "episodes.jsonl",
        "queries": "queries.jsonl",
        "metric": "token_f1",
        "run_dir": run_dir_name,
        "seeds": [
            str(seed_path("vector_search")),
            str(seed_path("llm_summarizer")),
            str(seed_path("experience_learner")),
        ],
        "budget": 5,
        "static_subset_size": 8,
        "rotating_size": 5,
        "compile_fix_attempts": 2,
        "worker_limit": 8,
        "rng_seed": rng_seed,
        "llm": "fixture",
        "fixture_script": "fixture.json",
        "runtime": [sys.executable, "-m", "memory_runtime"],
        "invoke_timeout": 30.0,
        "retry_attempts": 1,
    }
    config_path = root / "config.json"

    # The fixture must exist before the config loads; write a placeholder,
    # derive the static subset through the CLI, then write the real rules.
    (root / "fixture.json").write_text(json.dumps({"rules": [], "default": "unknown"}))
    config_path.write_text(json.dumps(config, indent=2))

    static_ids = static_query_ids(config_path)
    gated = pick_gated_queries(queries, static_ids)
    (root / "fixture.json").write_text(
        json.dumps(build_fixture(queries, gated), indent=2)
    )
    return config_path


def pick_gated_queries(queries: list[dict], static_ids: list[str]) -> set[str]:
    """Gate two static and two rotating queries behind the answer marker.

    Gating prefers static queries whose facts the seed already retrieves, so
    the seed -> child A improvement has room; a sanity check guarantees both
    improvement steps are strict.
    """
    top5 = seed_top5_facts()
    static = [q for q in queries if q["id"] in set(static_ids)]
    rotating = [q for q in queries if q["id"] not in set(static_ids)]

    static_in_top5 = [q for q in static if q["fact"] in top5]
    static_out_top5 = [q for q in static if q["fact"] not in top5]
    gated = [q["id"] for q in (static_in_top5 + static_out_top5)[:2]]
    gated += [q["id"] for q in rotating[:2]]

    ungated_static = [q for q in static if q["id"] not in gated]
    if not any(q["fact"] not in top5 for q in ungated_static):
        raise RuntimeError("toy task degenerate: child A would not beat the seed")
    if not any(q["id"] in gated for q in static):
        raise RuntimeError("toy task degenerate: child B would not beat child A")
    return set(gated)


def build_fixture(queries: list[dict], gated: set[str]) -> dict:
    rules = [
        # Repair prompts always fail: discards exercise the fix budget.
        {"role": "reflector", "contains": "## Failing Code",
         "response": "cannot repair this"},
        # Second improvement: requires the marker the first patch introduced.
        {"role": "reflector", "contains": "RETRIEVE_ALL", "response": PATCH_B},
        # First improvement: matches the vector-search seed's read().
        {"role": "reflector", "contains": "n_results=min(5, self._doc_id)",
         "response": PATCH_A},
    ]
    for query in queries:
        needles = ["<retrieved_memory>", query["question"], fact_text(query["fact"])]
        if query["id"] in gated:
            needles.append(GATED_MARKER)
        rules.append({
            "role": "task",
            "contains": needles,
            "response": query["expected"],
        })
    rules.append({
        "role": "task",
        "contains": "Output ONLY a valid JSON object",
        "response": json.dumps({"content": "a code fact"}),
    })
    rules.append({
        "role": "task",
        "contains": "Respond with the JSON only.",
        "response": json.dumps({"query_text": "lookup"}),
    })
    return {"rules": rules, "default": "unknown"}


def run_evolution_cli(config_path: Path) -> subprocess.CompletedProcess:
    return subprocess.run(
        [sys.executable, "-m", "memsearch", "evolve", "--config", str(config_path)],
        capture_output=True, text=True,
    )
