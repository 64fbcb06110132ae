from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, Iterator


@dataclass(frozen=True, order=True)
class LineSpan:
    """1-based inclusive line range.

    ``end == start - 1`` is allowed and denotes an empty span, i.e. an
    insertion point just before line ``start``.
    """

    start: int
    end: int

    def __post_init__(self):
        if self.start < 1:
            raise ValueError(f"span start must be >= 1, got {self.start}")
        if self.end < self.start - 1:
            raise ValueError(f"span end {self.end} precedes start {self.start}")

    @property
    def empty(self) -> bool:
        return self.end == self.start - 1

    def __len__(self) -> int:
        return self.end - self.start + 1

    def contains(self, line: int) -> bool:
        return self.start <= line <= self.end

    def covers(self, other: "LineSpan") -> bool:
        return self.start <= other.start and other.end <= self.end

    def overlaps(self, other: "LineSpan") -> bool:
        # An empty span overlaps anything that contains its insertion point.
        a0, a1 = self.start, max(self.end, self.start)
        b0, b1 = other.start, max(other.end, other.start)
        return a0 <= b1 and b0 <= a1

    def hull(self, other: "LineSpan") -> "LineSpan":
        return LineSpan(min(self.start, other.start), max(self.end, other.end))

    def to_list(self) -> list[int]:
        return [self.start, self.end]

    def __str__(self):
        return f"{self.start}-{self.end}"


class NodeKind(str, enum.Enum):
    MODULE = "MODULE"
    PORT = "PORT"
    ALWAYS_BLOCK = "ALWAYS_BLOCK"
    IF_STMT = "IF_STMT"
    CASE_STMT = "CASE_STMT"
    CASE_ITEM = "CASE_ITEM"
    ASSIGNMENT = "ASSIGNMENT"
    INSTANTIATION = "INSTANTIATION"
    SENS_LIST = "SENS_LIST"
    EXPR = "EXPR"


@dataclass
class AstNode:
    kind: NodeKind
    span: LineSpan
    children: list["AstNode"] = field(default_factory=list)
    attrs: dict[str, Any] = field(default_factory=dict)

    def walk(self) -> Iterator["AstNode"]:
        yield self
        for child in self.children:
            yield from child.walk()

    def find_all(self, kind: NodeKind) -> list["AstNode"]:
        return [n for n in self.walk() if n.kind is kind]

    # IF_STMT layout: children = [cond, *then_branch, *else_branch]
    @property
    def cond(self) -> "AstNode":
        return self.children[0]

    @property
    def then_branch(self) -> list["AstNode"]:
        return self.children[1:1 + self.attrs["n_then"]]

    @property
    def else_branch(self) -> list["AstNode"]:
        return self.children[1 + self.attrs["n_then"]:]

    def __repr__(self):
        label = self.attrs.get("name") or self.attrs.get("op") or ""
        return f"<{self.kind.value} {label} {self.span} ({len(self.children)} children)>"


def identifiers(expr: AstNode) -> list[str]:
    """Base identifier names referenced by an expression tree, in order."""
    out = []
    for node in expr.walk():
        if node.kind is NodeKind.EXPR and node.attrs.get("op") == "id":
            out.append(node.attrs["name"])
    return out
