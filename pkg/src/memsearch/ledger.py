"""Per-role usage accounting and dollar-cost estimation."""

from __future__ import annotations

import threading
from dataclasses import dataclass

ROLES = ("task", "reflector", "judge", "toolkit")

# (input, output) dollars per million tokens; reflector uses the pricier
# code model, the other roles share the small task model.
DEFAULT_PRICE_TABLE: dict[str, tuple[float, float]] = {
    "task": (0.75, 4.50),
    "reflector": (1.75, 14.00),
    "judge": (0.75, 4.50),
    "toolkit": (0.75, 4.50),
}


@dataclass
class RoleUsage:
    calls: int = 0
    in_tokens: int = 0
    out_tokens: int = 0


class UsageLedger:
    """Monotone per-role counters; cost derives from the price table.

    Safe for concurrent recording (evaluator workers call in parallel).
    """

    def __init__(self, price_table: dict[str, tuple[float, float]] | None = None):
        self.usage = {role: RoleUsage() for role in ROLES}
        self.price_table = dict(DEFAULT_PRICE_TABLE)
        if price_table:
            self.price_table.update(price_table)
        self._lock = threading.Lock()

    def record(self, role: str, calls: int = 0, in_tokens: int = 0, out_tokens: int = 0) -> None:
        if role not in self.usage:
            raise ValueError(f"unknown role {role!r}")
        if calls < 0 or in_tokens < 0 or out_tokens < 0:
            raise ValueError("usage increments must be non-negative")
        with self._lock:
            entry = self.usage[role]
            entry.calls += calls
            entry.in_tokens += in_tokens
            entry.out_tokens += out_tokens

    @property
    def cost(self) -> float:
        total = 0.0
        for role, entry in self.usage.items():
            in_rate, out_rate = self.price_table[role]
            total += (entry.in_tokens * in_rate + entry.out_tokens * out_rate) / 1e6
        return total

    def total_calls(self) -> int:
        return sum(entry.calls for entry in self.usage.values())

    def as_dict(self) -> dict:
        return {
            "roles": {
                role: {
                    "calls": entry.calls,
                    "in_tokens": entry.in_tokens,
                    "out_tokens": entry.out_tokens,
                }
                for role, entry in self.usage.items()
            },
            "price_table": {role: list(rates) for role, rates in self.price_table.items()},
            "cost": self.cost,
        }

    @classmethod
    def from_dict(cls, payload: dict) -> "UsageLedger":
        prices = {role: tuple(rates) for role, rates in payload.get("price_table", {}).items()}
        ledger = cls(price_table=prices or None)
        for role, entry in payload.get("roles", {}).items():
            if role in ledger.usage:
                ledger.record(
                    role,
                    calls=entry.get("calls", 0),
                    in_tokens=entry.get("in_tokens", 0),
                    out_tokens=entry.get("out_tokens", 0),
                )
        return ledger
