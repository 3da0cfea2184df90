"""Binary labels. Fake is the positive class everywhere in this toolkit."""

from __future__ import annotations

from enum import Enum


class Label(Enum):
    REAL = 0
    FAKE = 1

    def __str__(self) -> str:
        return self.name.lower()


def parse_label(text: str) -> Label:
    """Parse the manifest vocabulary: exactly "real" or "fake"."""
    if text == "real":
        return Label.REAL
    if text == "fake":
        return Label.FAKE
    raise ValueError(f"unknown label {text!r}: expected 'real' or 'fake'")
