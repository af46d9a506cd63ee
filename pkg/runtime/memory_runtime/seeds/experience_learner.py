from dataclasses import dataclass, field

INSTRUCTION_KNOWLEDGE_ITEM = (
    "Extract the most important information from the text as a single "
    "knowledge item. Capture concrete facts, names, and outcomes."
)
INSTRUCTION_QUERY = (
    "Write a short retrieval query using the key terms most likely to "
    "match stored knowledge relevant to the question."
)
INSTRUCTION_RESPONSE = (
    "Answer the question directly and concisely using the retrieved "
    "memory. If the memory is insufficient, give your best answer."
)
ALWAYS_ON_KNOWLEDGE = ""


@dataclass
class KnowledgeItem:
    lesson_learned: str = field(
        metadata={"description": "A general lesson or pattern learned from the text"})
    fact_to_remember: str = field(
        metadata={"description": "A specific fact worth remembering from the text"})


@dataclass
class Query:
    query_text: str = field(
        metadata={"description": "Search terms for retrieving relevant knowledge"})


class KnowledgeBase:
    """Experience-driven learner that stores lessons and facts, returns all on read."""
    def __init__(self, toolkit):
        self.toolkit = toolkit
        self.lessons: list[str] = []
        self.facts: list[str] = []

    def write(self, item: KnowledgeItem, raw_text: str) -> None:
        self.lessons.append(item.lesson_learned)
        self.facts.append(item.fact_to_remember)

    def read(self, query: Query) -> str:
        if not self.lessons and not self.facts:
            return "No information stored."
        lessons_text = "\n".join(self.lessons)[:500]
        facts_text = "\n".join(self.facts)[:500]
        return f"Lessons:\n{lessons_text}\n\nFacts:\n{facts_text}"[:3000]
