"""LLM client interface: retrying transport, scripted fixture client, HTTP client.

Every call attempt (success or failure) increments the ledger's call counter
for its role; token counts are added when the attempt yields usage data.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import requests

from .ledger import UsageLedger

Message = dict[str, str]

DEFAULT_RETRY_ATTEMPTS = 3
DEFAULT_RETRY_BACKOFF = 1.0


class LlmError(RuntimeError):
    """The client failed to produce a response after all retry attempts."""


class LlmClient:
    """Base client: retry with exponential backoff, ledger accounting."""

    def __init__(
        self,
        ledger: UsageLedger,
        attempts: int = DEFAULT_RETRY_ATTEMPTS,
        backoff: float = DEFAULT_RETRY_BACKOFF,
    ):
        self.ledger = ledger
        self.attempts = max(1, attempts)
        self.backoff = backoff

    def complete(self, messages: Sequence[Message], role: str) -> str:
        delay = self.backoff
        last_error: Optional[Exception] = None
        for attempt in range(self.attempts):
            self.ledger.record(role, calls=1)
            try:
                text, in_tokens, out_tokens = self._complete_once(messages, role)
            except Exception as error:  # noqa: BLE001 - transport errors retried
                last_error = error
                if attempt + 1 < self.attempts and delay > 0:
                    time.sleep(delay)
                    delay *= 2
                continue
            self.ledger.record(role, in_tokens=in_tokens, out_tokens=out_tokens)
            return text
        raise LlmError(f"{role} call failed after {self.attempts} attempts: {last_error}")

    def _complete_once(self, messages: Sequence[Message], role: str) -> tuple[str, int, int]:
        raise NotImplementedError


def _approx_tokens(text: str) -> int:
    return len(text.split())


@dataclass
class MockRule:
    """One scripted response, matched by role and prompt content.

    ``contains`` may be a substring, a list of substrings that must all
    appear, or None (matches any prompt for the role). ``response`` may be a
    callable taking the rendered prompt for fixtures that must adapt to the
    sampled parent.
    """

    role: str
    response: Union[str, Callable[[str], str]]
    contains: Union[None, str, Sequence[str]] = None
    max_uses: Optional[int] = None
    uses: int = field(default=0, compare=False)

    def matches(self, role: str, prompt: str) -> bool:
        if role != self.role:
            return False
        if self.max_uses is not None and self.uses >= self.max_uses:
            return False
        if self.contains is None:
            return True
        needles = [self.contains] if isinstance(self.contains, str) else list(self.contains)
        return all(needle in prompt for needle in needles)


class MockLlmClient(LlmClient):
    """Replays fixture rules deterministically; fully offline.

    Rules are checked in order; the first match wins. Content-keyed rules
    without a use limit are safe under concurrent callers.
    """

    def __init__(
        self,
        rules: Sequence[MockRule],
        ledger: UsageLedger,
        default_response: str = "",
        attempts: int = DEFAULT_RETRY_ATTEMPTS,
    ):
        super().__init__(ledger, attempts=attempts, backoff=0.0)
        self.rules = list(rules)
        self.default_response = default_response
        self._lock = threading.Lock()

    def _complete_once(self, messages: Sequence[Message], role: str) -> tuple[str, int, int]:
        prompt = "\n\n".join(message.get("content", "") for message in messages)
        with self._lock:
            response = self.default_response
            for rule in self.rules:
                if rule.matches(role, prompt):
                    rule.uses += 1
                    raw = rule.response
                    response = raw(prompt) if callable(raw) else raw
                    break
        return response, _approx_tokens(prompt), _approx_tokens(response)

    @classmethod
    def from_file(cls, path: str, ledger: UsageLedger, attempts: int = DEFAULT_RETRY_ATTEMPTS):
        """Load declarative rules from a JSON fixture script."""
        with open(path, encoding="utf-8") as handle:
            payload = json.load(handle)
        rules = [
            MockRule(
                role=entry["role"],
                response=entry["response"],
                contains=entry.get("contains"),
                max_uses=entry.get("max_uses"),
            )
            for entry in payload.get("rules", [])
        ]
        return cls(rules, ledger, default_response=payload.get("default", ""), attempts=attempts)


class HttpLlmClient(LlmClient):
    """Chat-completions style HTTP endpoint; credentials come from the env."""

    def __init__(
        self,
        url: str,
        model_by_role: dict[str, str],
        ledger: UsageLedger,
        credential_env: str = "LLM_API_KEY",
        attempts: int = DEFAULT_RETRY_ATTEMPTS,
        backoff: float = DEFAULT_RETRY_BACKOFF,
        timeout: float = 120.0,
    ):
        super().__init__(ledger, attempts=attempts, backoff=backoff)
        self.url = url
        self.model_by_role = dict(model_by_role)
        self.credential_env = credential_env
        self.timeout = timeout

    def _complete_once(self, messages: Sequence[Message], role: str) -> tuple[str, int, int]:
        headers = {"Content-Type": "application/json"}
        key = os.environ.get(self.credential_env, "")
        if key:
            headers["Authorization"] = f"Bearer {key}"
        payload = {"model": self.model_by_role.get(role, self.model_by_role.get("task", "")),
                   "messages": list(messages)}
        reply = requests.post(self.url, json=payload, headers=headers, timeout=self.timeout)
        reply.raise_for_status()
        body = reply.json()
        text = body["choices"][0]["message"]["content"]
        usage = body.get("usage", {})
        return text, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0))
