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
    content: str = field(
        metadata={"description": "A concise summary of the key information in the text"})


@dataclass
class Query:
    query_text: str = field(
        metadata={"description": "Search terms for retrieving relevant knowledge"})


class KnowledgeBase:
    """LLM-powered query-focused summarization over stored raw texts."""
    def __init__(self, toolkit):
        self.toolkit = toolkit
        self.raw_texts: list[str] = []

    def write(self, item: KnowledgeItem, raw_text: str) -> None:
        self.raw_texts.append(raw_text)

    def read(self, query: Query) -> str:
        if not self.raw_texts:
            return "No information stored."
        combined = "\n\n".join(self.raw_texts)[:30000]
        messages = [{"role": "user", "content":
            f"Given the following query, summarize ONLY the relevant information "
            f"from the provided texts. Be concise and factual.\n\n"
            f"Query: {query.query_text}\n\nTexts:\n{combined}"}]
        try:
            result = self.toolkit.llm_completion(messages)
        except Exception:
            result = combined
        return result[:3000]
