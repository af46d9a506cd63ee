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
    """Vanilla RAG: store text chunks in ChromaDB, retrieve by semantic similarity."""
    def __init__(self, toolkit):
        self.toolkit = toolkit
        self.collection = toolkit.chroma.get_or_create_collection("knowledge")
        self._doc_id = 0

    def _chunk(self, text, max_chars=500):
        # Paragraph-aligned packing; oversized paragraphs are hard-split.
        paragraphs = [p.strip() for p in text.split("\n\n") if p.strip()]
        chunks = []
        current = ""
        for para in paragraphs:
            if current and len(current) + len(para) + 2 > max_chars:
                chunks.append(current)
                current = para
            else:
                current = f"{current}\n\n{para}" if current else para
            while len(current) > max_chars:
                chunks.append(current[:max_chars])
                current = current[max_chars:]
        if current:
            chunks.append(current)
        return chunks

    def write(self, item: KnowledgeItem, raw_text: str) -> None:
        chunks = self._chunk(raw_text, max_chars=500)
        for chunk in chunks:
            self.collection.add(documents=[chunk], ids=[f"doc_{self._doc_id}"])
            self._doc_id += 1

    def read(self, query: Query) -> str:
        if self._doc_id == 0:
            return "No information stored."
        results = self.collection.query(
            query_texts=[query.query_text], n_results=min(5, self._doc_id))
        docs = results["documents"][0] if results["documents"] else []
        return "\n\n".join(docs)[:3000] if docs else "No relevant information found."
