"""Static checks for three hardware CWE patterns over the parsed AST.

* R1234: a debug/scan signal OR-ed into a condition that guards a write.
* R1271: a clocked register with no value assigned under reset.
* R1245: a case statement with missing states and no default item.

All name matching is case-insensitive substring matching against the
configurable :class:`NameHeuristics`.
"""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .corpus import CweClass
from .errors import EvalError, ParseError
from .hdl import AstNode, LineSpan, NodeKind, identifiers, parse_design, verilog_int

ALL_RULES = ("1234", "1271", "1245")


@dataclass(frozen=True)
class NameHeuristics:
    reset_patterns: tuple[str, ...] = ("rst", "reset", "resetn", "rst_n", "rst_ni")
    lock_patterns: tuple[str, ...] = ("lock",)
    debug_patterns: tuple[str, ...] = ("debug", "scan")
    state_patterns: tuple[str, ...] = ("state", "fsm")

    def __post_init__(self):
        for name in ("reset_patterns", "lock_patterns", "debug_patterns", "state_patterns"):
            value = tuple(p.lower() for p in getattr(self, name))
            if not value:
                raise ValueError(f"{name} must not be empty")
            object.__setattr__(self, name, value)

    @classmethod
    def from_file(cls, path: str | Path) -> "NameHeuristics":
        data = json.loads(Path(path).read_text())
        known = {k: tuple(v) for k, v in data.items() if k in cls.__dataclass_fields__}
        unknown = set(data) - set(known)
        if unknown:
            raise ValueError(f"unknown heuristic keys: {', '.join(sorted(unknown))}")
        return cls(**known)

    @staticmethod
    def _match(name: str, patterns) -> bool:
        low = name.lower()
        return any(p in low for p in patterns)

    def is_reset(self, name):
        return self._match(name, self.reset_patterns)

    def is_lock(self, name):
        return self._match(name, self.lock_patterns)

    def is_debug(self, name):
        return self._match(name, self.debug_patterns)

    def is_state(self, name):
        return self._match(name, self.state_patterns)


DEFAULT_HEURISTICS = NameHeuristics()


@dataclass(frozen=True, order=True)
class Finding:
    file: Path
    span: LineSpan
    cwe: CweClass = field(compare=True)
    rule_id: str = ""
    note: str = ""

    def to_json(self) -> dict:
        return {"file": str(self.file), "span": self.span.to_list(), "cwe": self.cwe.value,
                "rule_id": self.rule_id, "note": self.note}


class RescanVerdict(str, enum.Enum):
    SECURE = "SECURE"
    STILL_VULNERABLE = "STILL_VULNERABLE"


# -- rule helpers -------------------------------------------------------------

def _strip_parens(node: AstNode) -> AstNode:
    while node.attrs.get("op") == "paren":
        node = node.children[0]
    return node


def _or_operands(node: AstNode) -> list[AstNode]:
    node = _strip_parens(node)
    if node.attrs.get("binary") and node.attrs["op"] in ("|", "||"):
        return _or_operands(node.children[0]) + _or_operands(node.children[1])
    return [node]


def _or_chains(expr: AstNode) -> list[list[AstNode]]:
    """Every maximal OR chain inside ``expr``."""
    chains = []

    def visit(node, parent_is_or):
        is_or = node.attrs.get("binary") and node.attrs.get("op") in ("|", "||")
        if is_or and not parent_is_or:
            chains.append(_or_operands(node))
        for child in node.children:
            inner = _strip_parens(child) if is_or else child
            visit(inner, is_or and inner.attrs.get("binary") and inner.attrs.get("op") in ("|", "||"))

    visit(expr, False)
    return chains


def _signal_name(node: AstNode) -> str | None:
    """Name of a plain (non-negated) signal reference, including selects."""
    node = _strip_parens(node)
    op = node.attrs.get("op")
    if op == "id":
        return node.attrs["name"]
    if op in ("index", "member"):
        return _signal_name(node.children[0])
    return None


def _assigns(nodes: Iterable[AstNode]) -> bool:
    return any(n.kind is NodeKind.ASSIGNMENT for top in nodes for n in top.walk())


def _rule_1234(module: AstNode, h: NameHeuristics, path: Path) -> list[Finding]:
    out = []
    for node in module.walk():
        if node.kind is not NodeKind.IF_STMT:
            continue
        if not _assigns(node.then_branch):
            continue
        for chain in _or_chains(node.cond):
            if len(chain) < 2:
                continue
            debug = [n for n in (_signal_name(op) for op in chain) if n and h.is_debug(n)]
            if not debug:
                continue
            lock = [n for op in chain for n in identifiers(op) if h.is_lock(n)]
            note = f"'{debug[0]}' OR-ed into write condition"
            if lock:
                note += f" overrides lock '{lock[0]}'"
            out.append(Finding(path, LineSpan(node.span.start, node.cond.span.end),
                               CweClass.CWE1234, "R1234", note))
            break
    return out


def _reset_branch(block: AstNode, h: NameHeuristics):
    """(reset if, reset statements, other statements) of a clocked block, or None."""
    for node in block.walk():
        if node.kind is not NodeKind.IF_STMT:
            continue
        cond = _strip_parens(node.cond)
        negated = False
        while cond.attrs.get("op") in ("u!", "u~"):
            negated = not negated
            cond = _strip_parens(cond.children[0])
        if cond.attrs.get("binary") and cond.attrs["op"] in ("==", "==="):
            lhs, rhs = cond.children
            if rhs.attrs.get("op") == "lit" and verilog_int(rhs.attrs["text"]) == 0:
                negated = not negated
            cond = lhs
        name = _signal_name(cond)
        if not name or not h.is_reset(name):
            continue
        low = name.lower()
        active_low = low.endswith(("n", "_n", "_ni", "_b", "_l"))
        then_is_reset = negated == active_low
        reset = node.then_branch if then_is_reset else node.else_branch
        other = node.else_branch if then_is_reset else node.then_branch
        return node, reset, other
    return None


def _targets(nodes: Iterable[AstNode]) -> list[str]:
    seen = []
    for top in nodes:
        for n in top.walk():
            if n.kind is NodeKind.ASSIGNMENT:
                for t in n.attrs.get("targets", []):
                    if t not in seen:
                        seen.append(t)
    return seen


def _rule_1271(module: AstNode, h: NameHeuristics, path: Path) -> list[Finding]:
    out = []
    for block in module.find_all(NodeKind.ALWAYS_BLOCK):
        if not block.attrs.get("sequential"):
            continue
        body = block.children[1:]
        regs = _targets(body)
        if not regs:
            continue
        found = _reset_branch(block, h)
        if found is None:
            for reg in regs:
                out.append(Finding(path, block.span, CweClass.CWE1271, "R1271",
                                   f"register '{reg}' has no reset branch"))
            continue
        if_node, reset, other = found
        in_reset = set(_targets(reset))
        outside = _targets(other) + _targets(n for n in body if n is not if_node)
        for reg in dict.fromkeys(outside):
            if reg not in in_reset:
                out.append(Finding(path, block.span, CweClass.CWE1271, "R1271",
                                   f"register '{reg}' not assigned under reset"))
    return out


def _selector_width(module: AstNode, sel: AstNode) -> int | None:
    sel = _strip_parens(sel)
    if sel.attrs.get("op") != "id":
        return None
    info = module.attrs["signals"].get(sel.attrs["name"])
    return info.get("width") if info else None


def _rule_1245(module: AstNode, h: NameHeuristics, path: Path) -> list[Finding]:
    out = []
    for case in module.find_all(NodeKind.CASE_STMT):
        if case.attrs["has_default"]:
            continue
        sel = case.children[0]
        name = _signal_name(sel) or ""
        width = _selector_width(module, sel)
        labels = {lab for item in case.children[1:] for lab in item.attrs["labels"]}
        if width is not None and width <= 32:
            if len(labels) >= 2 ** width:
                continue
            note = f"{len(labels)} of {2 ** width} values of {width}-bit '{name or sel.attrs.get('text')}' handled, no default"
        elif name and h.is_state(name):
            note = f"case on '{name}' has no default"
        else:
            continue
        out.append(Finding(path, case.span, CweClass.CWE1245, "R1245", note))
    return out


_RULES: dict[str, Callable] = {"1234": _rule_1234, "1271": _rule_1271, "1245": _rule_1245}


# -- public API ---------------------------------------------------------------

def scan_source(source: str, path: str | Path = "<memory>", heuristics: NameHeuristics = DEFAULT_HEURISTICS,
                rules: Iterable[str] = ALL_RULES) -> list[Finding]:
    path = Path(path)
    try:
        modules = parse_design(source)
    except ParseError as exc:
        raise ParseError(str(exc).split(": ", 1)[-1] if exc.line else str(exc), exc.line, path) from exc
    findings = []
    for module in modules:
        for rule in rules:
            findings.extend(_RULES[rule](module, heuristics, path))
    return sorted(set(findings))


def scan(files: Iterable[str | Path], heuristics: NameHeuristics = DEFAULT_HEURISTICS,
         rules: Iterable[str] = ALL_RULES, on_error: Callable | None = None) -> list[Finding]:
    """Scan ``files`` and return findings sorted by (file, span start).

    A file that fails to parse raises :class:`ParseError`, unless ``on_error``
    is given, in which case it is called with ``(path, error)`` and the
    remaining files are still scanned.
    """
    rules = tuple(_normalize_rules(rules))
    findings = []
    for f in files:
        path = Path(f)
        try:
            findings.extend(scan_source(path.read_text(), path, heuristics, rules))
        except ParseError as exc:
            if on_error is None:
                raise
            on_error(path, exc)
    return sorted(findings)


def _normalize_rules(rules):
    for r in rules:
        r = str(r).upper().removeprefix("CWE").removeprefix("R").strip()
        if r not in _RULES:
            raise ValueError(f"unknown rule {r!r}; choose from {', '.join(ALL_RULES)}")
        yield r


def shift_span(span: LineSpan, region: LineSpan, line_delta: int) -> LineSpan:
    """Map an original-file span across a splice of ``region`` (original lines)
    that changed the line count by ``line_delta``.  Lines inside the replaced
    region collapse onto the new region."""
    new_end = max(region.start, region.end + line_delta)

    def move(line):
        if line < region.start:
            return line
        if line > region.end:
            return line + line_delta
        return min(line, new_end)

    start = move(span.start)
    return LineSpan(start, max(start, move(span.end)))


def rescan_verdict(original: Finding, repaired_files: Iterable[str | Path],
                   heuristics: NameHeuristics = DEFAULT_HEURISTICS, line_delta: int = 0,
                   repaired_span: LineSpan | None = None) -> RescanVerdict:
    """Re-scan repaired files and decide whether ``original`` is still present.

    ``repaired_span`` is the replaced region in original-file lines (the
    finding's own span when omitted).  The bug counts as still present when a
    finding of the same CWE overlaps the original finding or the repaired
    region after both are shifted by ``line_delta``.
    """
    files = [Path(f) for f in repaired_files]
    same_name = [f for f in files if f.name == Path(original.file).name]
    region = repaired_span or original.span
    new_region = LineSpan(region.start, max(region.start, region.end + line_delta))
    target = shift_span(original.span, region, line_delta).hull(new_region)
    try:
        findings = scan(same_name or files, heuristics, rules=[original.cwe.value])
    except ParseError as exc:
        raise EvalError(f"repaired design does not parse: {exc}") from exc
    for f in findings:
        if f.cwe is original.cwe and f.span.overlaps(target):
            return RescanVerdict.STILL_VULNERABLE
    return RescanVerdict.SECURE
