"""Ulam-Harris labels for particle genealogies."""
from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Iterable


class AncestorComparison(ValueError):
    """Raised when ordering two labels where one is an ancestor of the other."""


@functools.total_ordering
@dataclass(frozen=True)
class Label:
    path: tuple[int, ...] = ()

    def __post_init__(self):
        if any(int(i) != i or i < 0 for i in self.path):
            raise ValueError(f"label entries must be non-negative integers: {self.path}")
        object.__setattr__(self, "path", tuple(int(i) for i in self.path))

    @classmethod
    def parse(cls, text: str) -> "Label":
        text = text.strip()
        if text in ("∅", ""):
            return cls(())
        return cls(tuple(int(part) for part in text.split("·")))

    def __str__(self) -> str:
        return "·".join(str(i) for i in self.path) if self.path else "∅"

    def __len__(self) -> int:
        return len(self.path)

    def concat(self, other: "Label") -> "Label":
        return Label(self.path + other.path)

    def __lt__(self, other: "Label") -> bool:
        return compare(self, other) < 0


ROOT = Label(())


def child_label(parent: Label, index: int) -> Label:
    if index < 0:
        raise ValueError("offspring index must be non-negative")
    return Label(parent.path + (int(index),))


def is_strict_ancestor(j: Label, i: Label) -> bool:
    """True when ``i = j l`` for some non-empty label ``l``."""
    return len(j.path) < len(i.path) and i.path[: len(j.path)] == j.path


def compare(i: Label, j: Label) -> int:
    """Lexicographic order at the first index where the two paths diverge.

    Returns -1, 0 or 1. Only labels that could coexist in a population are
    comparable; a label and its strict ancestor raise ``AncestorComparison``.
    """
    if i.path == j.path:
        return 0
    for a, b in zip(i.path, j.path):
        if a != b:
            return -1 if a < b else 1
    raise AncestorComparison(f"{i} and {j} lie on the same ancestral line")


def is_antichain(labels: Iterable[Label]) -> bool:
    ordered = sorted({lab.path for lab in labels})
    # a strict ancestor sorts immediately before some descendant in tuple order
    return all(
        not (len(a) < len(b) and b[: len(a)] == a) for a, b in zip(ordered, ordered[1:])
    )


def enumerate_population(labels: Iterable[Label]) -> dict[Label, int]:
    """The bijection from a population's labels onto 1..|V| induced by :func:`compare`."""
    labels = list(labels)
    if len(set(labels)) != len(labels):
        raise ValueError("duplicate labels in population")
    ordered = sorted(labels, key=functools.cmp_to_key(compare))
    return {lab: k + 1 for k, lab in enumerate(ordered)}
