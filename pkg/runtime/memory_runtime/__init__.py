"""Host process for candidate memory programs.

Loads a program conforming to the fixed KnowledgeItem/Query/KnowledgeBase
interface, provides the Toolkit (in-memory SQLite, ephemeral vector
collection, proxied LLM completion, debug logger), enforces the import
whitelist, and speaks the harness wire protocol over stdio.
"""

__version__ = "0.1.0"

PROTOCOL_VERSION = 1
