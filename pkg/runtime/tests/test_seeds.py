import pytest

from memory_runtime.loader import load_program
from memory_runtime.seeds import SEED_NAMES, seed_source
from memory_runtime.toolkit import Toolkit

from conftest import drive


def load_seed(name):
    return load_program(seed_source(name), Toolkit(lambda frame: None, lambda: None))


class TestSeedConformance:
    @pytest.mark.parametrize("name", SEED_NAMES)
    def test_seed_loads_with_full_interface(self, name):
        program = load_seed(name)
        assert set(program.constants) == {
            "INSTRUCTION_KNOWLEDGE_ITEM",
            "INSTRUCTION_QUERY",
            "INSTRUCTION_RESPONSE",
            "ALWAYS_ON_KNOWLEDGE",
        }
        assert all(program.constants[key] is not None for key in program.constants)

    def test_seeds_share_instruction_constants(self):
        loaded = [load_seed(name) for name in SEED_NAMES]
        assert loaded[0].constants == loaded[1].constants == loaded[2].constants

    @pytest.mark.parametrize("name", SEED_NAMES)
    def test_empty_store_read(self, name):
        out = drive([
            {"type": "init", "program_source": seed_source(name)},
            {"type": "read", "query": {"query_text": "anything"}},
            {"type": "shutdown"},
        ])
        assert out[0]["type"] == "init_ok"
        assert out[1] == {"type": "read_ok", "text": "No information stored."}


class TestVectorSearchSeed:
    def test_long_write_chunks_at_500(self):
        program = load_seed("vector_search")
        text = "The vault access code rotates monthly and is stored offsite. " * 20
        program.knowledge_base.write(
            program.item_class(content="vault note"), text
        )
        assert program.knowledge_base._doc_id >= 2
        collection = program.knowledge_base.collection
        results = collection.query(query_texts=["vault code"], n_results=collection.count())
        assert all(len(doc) <= 500 for doc in results["documents"][0])

    def test_read_returns_related_chunk(self):
        out = drive([
            {"type": "init", "program_source": seed_source("vector_search")},
            {"type": "write", "item": {"content": "c"},
             "raw_text": "The northern bridge opens at dawn."},
            {"type": "write", "item": {"content": "c"},
             "raw_text": "Quarterly earnings beat forecasts."},
            {"type": "read", "query": {"query_text": "bridge dawn"}},
            {"type": "shutdown"},
        ])
        assert "bridge" in out[-1]["text"]

    def test_no_match_path_returns_exact_string(self):
        program = load_seed("vector_search")
        program.knowledge_base.write(program.item_class(content="c"), "stored text")
        # Drive the empty-result branch directly: the stand-in store always
        # returns nearest neighbours, so stub the query reply.
        program.knowledge_base.collection.query = lambda **kwargs: {"documents": [[]]}
        result = program.knowledge_base.read(program.query_class(query_text="zzz"))
        assert result == "No relevant information found."

    def test_read_capped_at_3000(self):
        program = load_seed("vector_search")
        for index in range(10):
            program.knowledge_base.write(
                program.item_class(content="c"), f"fact {index} " + "filler words " * 60
            )
        result = program.knowledge_base.read(program.query_class(query_text="filler"))
        assert len(result) <= 3000


class TestLlmSummarizerSeed:
    def test_exactly_one_llm_request_per_read(self):
        out = drive([
            {"type": "init", "program_source": seed_source("llm_summarizer")},
            {"type": "write", "item": {"content": "c"}, "raw_text": "alpha beta"},
            {"type": "read", "query": {"query_text": "alpha"}},
            {"type": "llm_response", "text": "tight summary"},
            {"type": "shutdown"},
        ])
        assert [frame["type"] for frame in out] == ["init_ok", "write_ok", "llm_request", "read_ok"]
        assert out[-1]["text"] == "tight summary"

    def test_denied_llm_falls_back_to_raw_text(self):
        # The seed catches the budget exception and returns the combined text.
        out = drive([
            {"type": "init", "program_source": seed_source("llm_summarizer")},
            {"type": "write", "item": {"content": "c"}, "raw_text": "alpha beta"},
            {"type": "read", "query": {"query_text": "alpha"}},
            {"type": "llm_denied", "reason": "budget"},
            {"type": "shutdown"},
        ])
        assert out[-1] == {"type": "read_ok", "text": "alpha beta"}

    def test_concatenation_capped_at_30000(self):
        program = load_seed("llm_summarizer")
        seen = {}

        def capture(messages, **kwargs):
            seen["prompt"] = messages[0]["content"]
            return "ok"

        program.knowledge_base.toolkit.llm_completion = capture
        for index in range(40):
            program.knowledge_base.write(program.item_class(content="c"), "x" * 1000)
        program.knowledge_base.read(program.query_class(query_text="q"))
        texts_block = seen["prompt"].split("Texts:\n", 1)[1]
        assert len(texts_block) == 30000


class TestExperienceLearnerSeed:
    def test_lessons_and_facts_returned(self):
        out = drive([
            {"type": "init", "program_source": seed_source("experience_learner")},
            {"type": "write",
             "item": {"lesson_learned": "check twice", "fact_to_remember": "code is 4711"},
             "raw_text": "raw"},
            {"type": "read", "query": {"query_text": "anything"}},
            {"type": "shutdown"},
        ])
        text = out[-1]["text"]
        assert "Lessons:" in text and "check twice" in text
        assert "Facts:" in text and "code is 4711" in text

    def test_tracks_capped_at_500_each(self):
        program = load_seed("experience_learner")
        for index in range(50):
            program.knowledge_base.write(
                program.item_class(
                    lesson_learned=f"lesson {index} " + "l" * 40,
                    fact_to_remember=f"fact {index} " + "f" * 40,
                ),
                "raw",
            )
        result = program.knowledge_base.read(program.query_class(query_text="q"))
        lessons_block = result.split("Lessons:\n", 1)[1].split("\n\nFacts:", 1)[0]
        assert len(lessons_block) == 500
