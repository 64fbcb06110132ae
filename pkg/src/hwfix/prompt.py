"""Prompt construction: context lines, instructions and the commented bug."""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import BugRecord, Variation, instructions_for
from .hdl import LineSpan, enclosing_block_start


@dataclass(frozen=True)
class ContextPolicy:
    min_lines: int = 25
    max_lines: int = 50

    def __post_init__(self):
        if not 0 < self.min_lines <= self.max_lines:
            raise ValueError(f"need 0 < min_lines <= max_lines, got {self.min_lines}, {self.max_lines}")


@dataclass(frozen=True)
class Prompt:
    text: str
    context_span: LineSpan
    bug_id: int
    variation: Variation


def context_span(bug_start: int, block_start: int, policy: ContextPolicy) -> LineSpan:
    """Lines kept above a bug starting at ``bug_start``.

    Everything above the bug is kept when it fits in ``min_lines``.  Otherwise
    the span reaches back to ``block_start``, is widened to at least
    ``min_lines`` and capped at the ``max_lines`` nearest the bug.
    """
    last = bug_start - 1
    if last <= policy.min_lines:
        return LineSpan(1, last)
    start = min(block_start, last - policy.min_lines + 1)
    start = max(start, last - policy.max_lines + 1, 1)
    return LineSpan(start, last)


def select_context(bug: BugRecord, source: str, policy: ContextPolicy = ContextPolicy()) -> LineSpan:
    start = bug.bug_span.start
    if start - 1 <= policy.min_lines:
        return context_span(start, 1, policy)
    return context_span(start, enclosing_block_start(source, start), policy)


def comment_lines(lines: list[str]) -> list[str]:
    """Comment out bug lines: indentation dropped, blank lines skipped."""
    return ["// " + line.lstrip() for line in lines if line.strip()]


def build_prompt(bug: BugRecord, source: str, v: Variation | str,
                 policy: ContextPolicy = ContextPolicy()) -> Prompt:
    v = Variation(v)
    pair = instructions_for(bug, v)
    lines = source.splitlines()
    ctx = select_context(bug, source, policy)
    span = bug.bug_span
    out = lines[ctx.start - 1:ctx.end]
    out += pair.bug_instruction
    out += comment_lines(lines[span.start - 1:span.end])
    out += pair.fix_instruction
    return Prompt("".join(line + "\n" for line in out), ctx, bug.id, v)
