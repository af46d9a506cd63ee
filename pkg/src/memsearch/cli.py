"""Command-line surface: evolve, eval, patch, subset, cost.

Exit codes: 0 success, 1 user/config error, 2 candidate violation,
3 infrastructure error. Inputs are never modified; only the run directory
is written.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

from . import patchkit
from .evaluator import DataFormatError, TaskAdapter, load_episodes, load_queries, split_eval
from .evolution import EvolutionError, RunDirectory, prepare_task, run_evolution
from .ledger import ROLES, UsageLedger
from .llm import DEFAULT_RETRY_ATTEMPTS, DEFAULT_RETRY_BACKOFF, HttpLlmClient, MockLlmClient
from .metrics import normalize_answer
from .model import EvolutionConfig, MemoryProgramSource, QueryItem
from .runner import InfrastructureError, InProcessTransport, RunnerLimits, SubprocessTransport
from .selection import (
    HashedEmbeddingProvider,
    facility_location_select,
    kmeans_representatives,
    rotating_subset,
)
from .stubruntime import StubRuntime

EXIT_OK = 0
EXIT_USER = 1
EXIT_CANDIDATE = 2
EXIT_INFRA = 3


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    """Flat-key run configuration; see docs/data_formats.md for every key."""

    episodes: Path
    queries: Path
    metric: str
    run_dir: Path
    seeds: list[Path]
    evolution: EvolutionConfig
    limits: RunnerLimits
    llm_mode: str = "fixture"  # fixture | http
    fixture_script: Optional[Path] = None
    llm_url: str = ""
    llm_models: dict[str, str] = field(default_factory=dict)
    credential_env: str = "LLM_API_KEY"
    retry_attempts: int = DEFAULT_RETRY_ATTEMPTS
    retry_backoff: float = DEFAULT_RETRY_BACKOFF
    embedding_provider: str = "hashed"
    embedding_dimension: int = 64
    episode_subset: Optional[int] = None
    runtime: object = "stub"  # "stub" or argv list
    price_table: dict[str, tuple[float, float]] = field(default_factory=dict)
    source_path: Optional[Path] = None


def load_config(path: str) -> RunConfig:
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as error:
        raise ConfigError(f"config is not valid JSON: {error}") from error
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object with flat keys")

    def require(key: str):
        if key not in raw:
            raise ConfigError(f"config missing required key {key!r}")
        return raw[key]

    base = config_path.parent

    def resolve(value: str) -> Path:
        candidate = Path(value)
        return candidate if candidate.is_absolute() else base / candidate

    episodes = resolve(require("episodes"))
    queries = resolve(require("queries"))
    seeds = [resolve(entry) for entry in require("seeds")]
    for label, file_path in [("episodes", episodes), ("queries", queries)] + [
        (f"seed {entry}", entry) for entry in seeds
    ]:
        if not Path(file_path).exists():
            raise ConfigError(f"{label} file does not exist: {file_path}")

    try:
        evolution = EvolutionConfig(
            budget=int(raw.get("budget", 20)),
            seed_count=len(seeds),
            temperature=float(raw.get("temperature", 0.15)),
            rotating_size=int(raw.get("rotating_size", 5)),
            static_subset_size=int(raw.get("static_subset_size", 60)),
            failure_threshold=float(raw.get("failure_threshold", 0.5)),
            compile_fix_attempts=int(raw.get("compile_fix_attempts", 3)),
            worker_limit=int(raw.get("worker_limit", 64)),
            rng_seed=int(raw.get("rng_seed", 0)),
        )
    except ValueError as error:
        raise ConfigError(f"bad evolution settings: {error}") from error

    limits = RunnerLimits(
        read_cap=int(raw.get("read_cap", 3000)),
        invoke_timeout=float(raw.get("invoke_timeout", 60.0)),
        llm_budget=int(raw.get("llm_budget", 1)),
        hard_fail_long_read=bool(raw.get("hard_fail_long_read", False)),
    )

    metric = require("metric")
    if metric not in ("token_f1", "judge", "rubric", "binary"):
        raise ConfigError(f"unknown metric {metric!r}")

    llm_mode = raw.get("llm", "fixture")
    fixture_script = None
    if llm_mode == "fixture":
        fixture_script = resolve(require("fixture_script"))
        if not fixture_script.exists():
            raise ConfigError(f"fixture script does not exist: {fixture_script}")
    elif llm_mode == "http":
        if not raw.get("llm_url"):
            raise ConfigError("llm=http requires llm_url")
    else:
        raise ConfigError(f"unknown llm mode {llm_mode!r}")

    models = {role: raw[f"llm_model_{role}"] for role in ROLES if f"llm_model_{role}" in raw}
    if "llm_model" in raw:
        models.setdefault("task", raw["llm_model"])

    provider_name = raw.get("embedding_provider", "hashed")
    if provider_name != "hashed":
        raise ConfigError(f"unknown embedding provider {provider_name!r}")

    runtime = raw.get("runtime", "stub")
    if not (runtime == "stub" or (isinstance(runtime, list) and runtime)):
        raise ConfigError("runtime must be \"stub\" or a non-empty argv list")

    price_table = {}
    for role in ROLES:
        in_key, out_key = f"price_{role}_input", f"price_{role}_output"
        if in_key in raw or out_key in raw:
            if in_key not in raw or out_key not in raw:
                raise ConfigError(f"price override for {role} needs both {in_key} and {out_key}")
            price_table[role] = (float(raw[in_key]), float(raw[out_key]))

    return RunConfig(
        episodes=episodes,
        queries=queries,
        metric=metric,
        run_dir=resolve(require("run_dir")),
        seeds=seeds,
        evolution=evolution,
        limits=limits,
        llm_mode=llm_mode,
        fixture_script=fixture_script,
        llm_url=raw.get("llm_url", ""),
        llm_models=models,
        credential_env=raw.get("credential_env", "LLM_API_KEY"),
        retry_attempts=int(raw.get("retry_attempts", DEFAULT_RETRY_ATTEMPTS)),
        retry_backoff=float(raw.get("retry_backoff", DEFAULT_RETRY_BACKOFF)),
        embedding_provider=provider_name,
        embedding_dimension=int(raw.get("embedding_dimension", 64)),
        episode_subset=int(raw["episode_subset"]) if "episode_subset" in raw else None,
        runtime=runtime,
        price_table=price_table,
        source_path=config_path,
    )


def build_client(config: RunConfig, ledger: UsageLedger):
    if config.llm_mode == "fixture":
        return MockLlmClient.from_file(
            str(config.fixture_script), ledger, attempts=config.retry_attempts
        )
    return HttpLlmClient(
        config.llm_url,
        config.llm_models or {"task": ""},
        ledger,
        credential_env=config.credential_env,
        attempts=config.retry_attempts,
        backoff=config.retry_backoff,
    )


def build_runtime_factory(config: RunConfig):
    if config.runtime == "stub":
        return lambda session_id: InProcessTransport(StubRuntime().serve)
    argv = [str(part) for part in config.runtime]
    return lambda session_id: SubprocessTransport(
        argv + ["--protocol", "1", "--session", session_id]
    )


def _exact_match_grader(query: QueryItem, answer: str) -> bool:
    # Desk-scale stand-in: no environment drives the success flag offline.
    return normalize_answer(answer) == normalize_answer(query.expected_text)


def build_task(config: RunConfig, provider) -> TaskAdapter:
    episodes = load_episodes(config.episodes)
    queries = load_queries(config.queries)
    grader = _exact_match_grader if config.metric == "binary" else None
    return prepare_task(
        episodes,
        queries,
        config.evolution,
        provider,
        config.metric,
        binary_grader=grader,
        episode_subset=config.episode_subset,
    )


def cmd_evolve(args) -> int:
    config = load_config(args.config)
    provider = HashedEmbeddingProvider(config.embedding_dimension)
    ledger = UsageLedger(price_table=config.price_table or None)
    client = build_client(config, ledger)
    task = build_task(config, provider)
    seeds = [
        MemoryProgramSource(source_text=path.read_text(encoding="utf-8"))
        for path in config.seeds
    ]

    rd = RunDirectory(config.run_dir)
    rd.create()
    rd.echo_config(config.source_path)

    result = run_evolution(
        task,
        seeds,
        config.evolution,
        client,
        config.run_dir,
        provider,
        build_runtime_factory(config),
        ledger,
        limits=config.limits,
    )
    print(f"best candidate: id={result.best.id} score={result.best.static_score:.6f}")
    for name in ("lineage.jsonl", "scores.json", "ledger.json", "best_program", "plot_data.csv"):
        print(f"artifact: {Path(config.run_dir) / name}")
    return EXIT_OK


def cmd_eval(args) -> int:
    config = load_config(args.config)
    provider = HashedEmbeddingProvider(config.embedding_dimension)
    ledger = UsageLedger(price_table=config.price_table or None)
    client = build_client(config, ledger)
    task = build_task(config, provider)

    program_path = Path(args.program)
    if not program_path.exists():
        raise ConfigError(f"program file not found: {program_path}")
    program = MemoryProgramSource(source_text=program_path.read_text(encoding="utf-8"))

    queries = task.static if args.split == "static" else task.test
    if not queries:
        raise ConfigError(f"no queries in split {args.split!r}")

    score, outcome = split_eval(
        program, task, queries, config.evolution,
        build_runtime_factory(config), client, limits=config.limits,
    )
    if score is None:
        print(f"candidate violation: {outcome.kind}: {outcome.detail}", file=sys.stderr)
        return EXIT_CANDIDATE

    out_dir = Path(args.out) if args.out else Path(config.run_dir) / f"eval_{args.split}"
    out_dir.mkdir(parents=True, exist_ok=True)
    table = out_dir / "cases.jsonl"
    with open(table, "w", encoding="utf-8") as handle:
        for case in outcome.cases:
            handle.write(json.dumps({
                "id": case.query.id,
                "question": case.query.question,
                "prediction": case.prediction,
                "score": case.score,
            }, sort_keys=True) + "\n")
    print(f"mean score: {score:.6f}")
    print(f"case table: {table}")
    return EXIT_OK


def cmd_patch(args) -> int:
    source_path = Path(args.source)
    patch_path = Path(args.patch)
    for label, path in (("source", source_path), ("patch", patch_path)):
        if not path.exists():
            raise ConfigError(f"{label} file not found: {path}")
    patch_text = patch_path.read_text(encoding="utf-8")
    try:
        block = patchkit.extract_patch_block(patch_text)
    except patchkit.NoPatchFound:
        block = patch_text  # bare inner block without markers
    try:
        document = patchkit.parse_patch(block)
        if args.check:
            print(f"patch ok: {len(document.hunks)} hunk(s) for {document.target_file}")
            return EXIT_OK
        patched = patchkit.apply_patch(source_path.read_text(encoding="utf-8"), document)
    except patchkit.PatchError as error:
        print(f"patch failed: {error}", file=sys.stderr)
        return EXIT_USER
    if args.output:
        Path(args.output).write_text(patched, encoding="utf-8")
        print(f"wrote {args.output}")
    else:
        sys.stdout.write(patched)
    return EXIT_OK


def cmd_subset(args) -> int:
    config = load_config(args.config)
    provider = HashedEmbeddingProvider(config.embedding_dimension)
    if args.kind == "episodes":
        episodes = load_episodes(config.episodes)
        queries = load_queries(config.queries)
        size = args.n or min(len(episodes), config.episode_subset or len(episodes))
        picked = facility_location_select(
            [(e.id, e.raw_text) for e in episodes],
            [q.question for q in queries if q.split != "test"],
            size,
            provider,
        )
    else:
        queries = [q for q in load_queries(config.queries) if q.split in ("validation", "rotating-pool")]
        items = [(q.id, q.question) for q in queries]
        size = args.n or (
            config.evolution.static_subset_size if args.kind == "static"
            else config.evolution.rotating_size
        )
        size = min(size, len(items))
        if args.kind == "static":
            picked = kmeans_representatives(items, size, provider, config.evolution.rng_seed)
        else:
            picked = rotating_subset(items, size, args.iteration, provider, config.evolution.rng_seed)
    for ident in picked:
        print(ident)
    return EXIT_OK


def cmd_cost(args) -> int:
    rd = RunDirectory(args.run_dir)
    ledger = rd.load_ledger()
    if ledger is None:
        raise ConfigError(f"no ledger.json under {args.run_dir}")
    for role, usage in ledger.usage.items():
        print(f"{role:9s} calls={usage.calls:6d} in={usage.in_tokens:10d} out={usage.out_tokens:10d}")
    print(f"total calls: {ledger.total_calls()}")
    print(f"estimated cost: ${ledger.cost:.6f}")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with the user-error code, not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USER)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="memsearch",
        description="Evolutionary search over executable memory programs",
    )
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    evolve = sub.add_parser("evolve", help="run the evolution loop")
    evolve.add_argument("--config", required=True, help="run configuration file (JSON)")
    evolve.set_defaults(fn=cmd_evolve)

    evaluate = sub.add_parser("eval", help="evaluate one program on a split")
    evaluate.add_argument("--config", required=True)
    evaluate.add_argument("--program", required=True, help="program source file")
    evaluate.add_argument("--split", choices=["static", "test"], default="test")
    evaluate.add_argument("--out", help="directory for the per-case table")
    evaluate.set_defaults(fn=cmd_eval)

    patch = sub.add_parser("patch", help="apply a patch file to a source file")
    patch.add_argument("--source", required=True)
    patch.add_argument("--patch", required=True)
    patch.add_argument("--output", help="write result here instead of stdout")
    patch.add_argument("--check", action="store_true", help="parse-only validation")
    patch.set_defaults(fn=cmd_patch)

    subset = sub.add_parser("subset", help="inspect subset selection")
    subset.add_argument("--config", required=True)
    subset.add_argument("--kind", choices=["static", "rotating", "episodes"], required=True)
    subset.add_argument("--n", type=int, help="override subset size")
    subset.add_argument("--iteration", type=int, default=1, help="rotating iteration index")
    subset.set_defaults(fn=cmd_subset)

    cost = sub.add_parser("cost", help="print a run's usage ledger")
    cost.add_argument("--run-dir", required=True)
    cost.set_defaults(fn=cmd_cost)

    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, DataFormatError, EvolutionError) as error:
        print(f"error: {error}", file=sys.stderr)
        return EXIT_USER
    except InfrastructureError as error:
        print(f"infrastructure error: {error}", file=sys.stderr)
        return EXIT_INFRA


if __name__ == "__main__":
    sys.exit(main())
