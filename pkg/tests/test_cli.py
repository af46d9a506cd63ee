import json

import pytest

from memsearch.cli import EXIT_CANDIDATE, EXIT_OK, EXIT_USER, main

SEED_PROGRAM = '''\
from dataclasses import dataclass, field

INSTRUCTION_KNOWLEDGE_ITEM = "Extract the key fact."
INSTRUCTION_QUERY = "Write a short query."
INSTRUCTION_RESPONSE = "Answer concisely."
ALWAYS_ON_KNOWLEDGE = ""


@dataclass
class KnowledgeItem:
    content: str = field(metadata={"description": "Key fact"})


@dataclass
class Query:
    query_text: str = field(metadata={"description": "Search terms"})


class KnowledgeBase:
    def __init__(self, toolkit):
        self.texts = []

    def write(self, item, raw_text):
        self.texts.append(raw_text)

    def read(self, query):
        return "\\n".join(self.texts)
'''


@pytest.fixture
def workspace(tmp_path):
    """A complete offline run setup: data, seed, fixture script, config."""
    episodes = tmp_path / "episodes.jsonl"
    episodes.write_text(
        '{"id": "e1", "text": "The vault code is 4711."}\n'
        '{"id": "e2", "text": "The vault is in the basement."}\n'
    )
    queries = tmp_path / "queries.jsonl"
    lines = []
    for index in range(8):
        lines.append(json.dumps({
            "id": f"v{index}",
            "question": f"What is stored fact number {index:02d}?",
            "expected": f"fact-{index:02d}",
            "split": "validation",
        }))
    lines.append(json.dumps({
        "id": "t0", "question": "Where is the vault?",
        "expected": "basement", "split": "test",
    }))
    queries.write_text("\n".join(lines) + "\n")

    seed = tmp_path / "seed.py"
    seed.write_text(SEED_PROGRAM)

    fixture = tmp_path / "fixture.json"
    fixture.write_text(json.dumps({
        "rules": [
            {"role": "task", "contains": "Output ONLY a valid JSON object",
             "response": "{\"content\": \"note\"}"},
            {"role": "task", "contains": "Respond with the JSON only.",
             "response": "{\"query_text\": \"vault\"}"},
        ],
        "default": "unknown",
    }))

    config = tmp_path / "config.json"
    config.write_text(json.dumps({
        "episodes": "episodes.jsonl",
        "queries": "queries.jsonl",
        "metric": "token_f1",
        "run_dir": "run",
        "seeds": ["seed.py"],
        "budget": 2,
        "static_subset_size": 4,
        "rotating_size": 2,
        "compile_fix_attempts": 1,
        "worker_limit": 4,
        "rng_seed": 0,
        "llm": "fixture",
        "fixture_script": "fixture.json",
        "runtime": "stub",
        "invoke_timeout": 10.0,
        "retry_attempts": 1,
    }))
    return tmp_path


class TestEvolve:
    def test_fixture_run_exits_zero_and_populates(self, workspace, capsys):
        assert main(["evolve", "--config", str(workspace / "config.json")]) == EXIT_OK
        run_dir = workspace / "run"
        for name in ("lineage.jsonl", "scores.json", "best_program", "ledger.json", "config"):
            assert (run_dir / name).exists(), name
        out = capsys.readouterr().out
        assert "best candidate" in out

    def test_missing_episodes_no_run_dir(self, workspace, capsys):
        (workspace / "episodes.jsonl").unlink()
        assert main(["evolve", "--config", str(workspace / "config.json")]) == EXIT_USER
        assert not (workspace / "run").exists()

    def test_rerun_reports_existing_best(self, workspace, capsys):
        main(["evolve", "--config", str(workspace / "config.json")])
        first = (workspace / "run" / "lineage.jsonl").read_bytes()
        assert main(["evolve", "--config", str(workspace / "config.json")]) == EXIT_OK
        assert (workspace / "run" / "lineage.jsonl").read_bytes() == first


class TestEval:
    def test_static_split_deterministic_score(self, workspace, capsys):
        code = main([
            "eval", "--config", str(workspace / "config.json"),
            "--program", str(workspace / "seed.py"), "--split", "static",
        ])
        assert code == EXIT_OK
        first = capsys.readouterr().out
        main([
            "eval", "--config", str(workspace / "config.json"),
            "--program", str(workspace / "seed.py"), "--split", "static",
        ])
        second = capsys.readouterr().out
        assert first.splitlines()[0] == second.splitlines()[0]
        assert "mean score" in first

    def test_test_split_uses_test_queries(self, workspace, capsys):
        code = main([
            "eval", "--config", str(workspace / "config.json"),
            "--program", str(workspace / "seed.py"), "--split", "test",
        ])
        assert code == EXIT_OK
        table = workspace / "run" / "eval_test" / "cases.jsonl"
        rows = [json.loads(line) for line in table.read_text().splitlines()]
        assert [row["id"] for row in rows] == ["t0"]

    def test_broken_program_exits_candidate_code(self, workspace, capsys):
        broken = workspace / "broken.py"
        broken.write_text("def nope(:\n")
        code = main([
            "eval", "--config", str(workspace / "config.json"),
            "--program", str(broken), "--split", "static",
        ])
        assert code == EXIT_CANDIDATE
        assert "violation" in capsys.readouterr().err


class TestPatch:
    def write_pair(self, tmp_path):
        source = tmp_path / "source.txt"
        source.write_text("alpha\nbeta\ngamma")
        patch = tmp_path / "change.patch"
        patch.write_text(
            "*** Begin Patch\n*** Update File: source.txt\n alpha\n-beta\n+BETA\n gamma\n*** End Patch\n"
        )
        return source, patch

    def test_valid_pair_to_stdout(self, tmp_path, capsys):
        source, patch = self.write_pair(tmp_path)
        assert main(["patch", "--source", str(source), "--patch", str(patch)]) == EXIT_OK
        assert capsys.readouterr().out == "alpha\nBETA\ngamma"

    def test_output_flag_writes_file(self, tmp_path, capsys):
        source, patch = self.write_pair(tmp_path)
        target = tmp_path / "patched.txt"
        code = main([
            "patch", "--source", str(source), "--patch", str(patch),
            "--output", str(target),
        ])
        assert code == EXIT_OK
        assert target.read_text() == "alpha\nBETA\ngamma"

    def test_check_only_validates(self, tmp_path, capsys):
        source, patch = self.write_pair(tmp_path)
        assert main(["patch", "--source", str(source), "--patch", str(patch), "--check"]) == EXIT_OK
        assert "patch ok" in capsys.readouterr().out

    def test_anchor_failure_names_hunk(self, tmp_path, capsys):
        source, patch = self.write_pair(tmp_path)
        source.write_text("entirely\ndifferent")
        code = main(["patch", "--source", str(source), "--patch", str(patch)])
        assert code == EXIT_USER
        assert "hunk 1" in capsys.readouterr().err


class TestSubset:
    def test_static_subset_listing(self, workspace, capsys):
        code = main(["subset", "--config", str(workspace / "config.json"), "--kind", "static"])
        assert code == EXIT_OK
        ids = capsys.readouterr().out.split()
        assert len(ids) == 4

    def test_rotating_subset_iteration_flag(self, workspace, capsys):
        main([
            "subset", "--config", str(workspace / "config.json"),
            "--kind", "rotating", "--n", "2", "--iteration", "3",
        ])
        first = capsys.readouterr().out
        main([
            "subset", "--config", str(workspace / "config.json"),
            "--kind", "rotating", "--n", "2", "--iteration", "3",
        ])
        assert capsys.readouterr().out == first

    def test_episode_subset(self, workspace, capsys):
        code = main([
            "subset", "--config", str(workspace / "config.json"),
            "--kind", "episodes", "--n", "1",
        ])
        assert code == EXIT_OK
        assert len(capsys.readouterr().out.split()) == 1


class TestInfrastructureExit:
    def test_unspawnable_runtime_exits_infra_code(self, workspace, capsys):
        config = json.loads((workspace / "config.json").read_text())
        config["runtime"] = ["/nonexistent/runtime-binary"]
        (workspace / "config.json").write_text(json.dumps(config))
        code = main(["evolve", "--config", str(workspace / "config.json")])
        assert code == 3
        assert "infrastructure" in capsys.readouterr().err


class TestCost:
    def test_cost_after_run(self, workspace, capsys):
        main(["evolve", "--config", str(workspace / "config.json")])
        code = main(["cost", "--run-dir", str(workspace / "run")])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "estimated cost" in out
        assert "total calls" in out

    def test_cost_without_ledger_errors(self, tmp_path, capsys):
        assert main(["cost", "--run-dir", str(tmp_path)]) == EXIT_USER


class TestParsing:
    @pytest.mark.parametrize("command", ["evolve", "eval", "patch", "subset", "cost"])
    def test_help_lists_flags(self, command, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main([command, "--help"])
        assert excinfo.value.code == 0
        assert "--" in capsys.readouterr().out

    def test_unknown_flag_is_error(self, workspace, capsys):
        with pytest.raises(SystemExit) as excinfo:
            main(["evolve", "--config", str(workspace / "config.json"), "--bogus"])
        assert excinfo.value.code == EXIT_USER

    def test_inputs_never_modified(self, workspace):
        config_bytes = (workspace / "config.json").read_bytes()
        seed_bytes = (workspace / "seed.py").read_bytes()
        main(["evolve", "--config", str(workspace / "config.json")])
        assert (workspace / "config.json").read_bytes() == config_bytes
        assert (workspace / "seed.py").read_bytes() == seed_bytes
