"""Turn raw model completions into repaired design files.

``postprocess`` trims at stop keywords and balances begin/end scopes;
``splice`` replaces the bug lines with the repair; ``assemble`` writes the
repaired tree for one candidate into its own work directory.
"""

from __future__ import annotations

import json
import re
import shutil
from dataclasses import asdict, dataclass
from pathlib import Path

from .corpus import BugRecord, Variation
from .errors import SpanOutOfRange
from .hdl import LineSpan, TokenKind, scope_balance, tokenize

# Stop keywords that terminate code the repair itself needs.
STRUCTURAL_STOPS = ("end", "endcase")


@dataclass
class RepairCandidate:
    bug_id: int
    variation: Variation
    temperature: float
    model_name: str
    raw_completion: str
    repair_text: str
    repaired_file: Path
    line_delta: int
    index: int

    def to_json(self) -> dict:
        d = asdict(self)
        d["variation"] = self.variation.value
        d["repaired_file"] = str(self.repaired_file)
        return d


def _trim_at_stop(text: str, stops) -> tuple[str, str | None]:
    hits = [(text.find(s), s) for s in stops if s and s in text]
    if not hits:
        return text, None
    idx, stop = min(hits, key=lambda h: (h[0], len(h[1])))
    return text[:idx], stop


def _remove_first_ends(text: str, k: int) -> str:
    """Delete the first ``k`` whole-word ``end`` keywords outside comments and
    strings; a line left blank by the deletion is dropped."""
    offsets = []
    pos = 0
    for tok in tokenize(text, strict=False):
        pos += len(tok.pre)
        if tok.kind is TokenKind.KEYWORD and tok.text == "end" and len(offsets) < k:
            offsets.append(pos)
        pos += len(tok.text)
    for off in reversed(offsets):
        line_start = text.rfind("\n", 0, off) + 1
        line_end = text.find("\n", off)
        line_end = len(text) if line_end < 0 else line_end
        rest = text[line_start:off] + text[off + 3:line_end]
        if rest.strip():
            text = text[:off] + text[off + 3:]
        else:
            text = text[:line_start] + text[line_end + 1:]
    return text


def _strip_trailing_blank(text: str) -> str:
    lines = text.split("\n")
    while lines and not lines[-1].strip():
        lines.pop()
    return "\n".join(lines)


def span_surplus(bug: BugRecord) -> int:
    """begin minus end count of the bug's own lines (e.g. 1 for ``if (c) begin``)."""
    b, e = scope_balance(span_lines(bug.source_text(), bug.bug_span))
    return b - e


def postprocess(raw: str, bug: BugRecord | None = None, stop_keywords=None,
                finished_on_stop: bool = False, surplus: int | None = None) -> str:
    """Clean one raw completion into repair text (no trailing newline).

    ``finished_on_stop`` tells that the provider already cut the text at a
    stop keyword; the per-bug structural terminator is then restored even
    though it no longer appears in ``raw``.

    The repair replaces the bug lines only, so it is balanced to the same
    begin/end surplus those lines carry (``surplus``, taken from ``bug`` when
    not given; 0 for a free-standing fragment).
    """
    stops = tuple(stop_keywords if stop_keywords is not None else (bug.stop_keywords if bug else ("endmodule",)))
    if surplus is None:
        surplus = span_surplus(bug) if bug is not None else 0
    text, stop = _trim_at_stop(raw, stops)
    if stop in STRUCTURAL_STOPS:
        text += stop
    elif stop is None and finished_on_stop:
        structural = [s for s in stops if s in STRUCTURAL_STOPS]
        if structural:
            text += structural[0]
    begins, ends = scope_balance(text)
    extra = begins - ends - surplus
    if extra > 0:
        text = _strip_trailing_blank(text)
        text += "".join("\nend" for _ in range(extra)) if text else "\n".join(["end"] * extra)
    elif extra < 0:
        text = _remove_first_ends(text, -extra)
    return _strip_trailing_blank(text)


def splice(original: str, bug_span: LineSpan, repair_text: str) -> tuple[str, int]:
    """Replace ``bug_span`` of ``original`` with ``repair_text``.

    An empty span (``end == start - 1``) inserts before line ``start``.
    Returns the new text and the change in line count.
    """
    lines = original.splitlines(keepends=True)
    n = len(lines)
    if bug_span.start > n + 1 or bug_span.end > n:
        raise SpanOutOfRange(f"span {bug_span} outside 1..{n}")
    repair_lines = repair_text.splitlines(keepends=True) if repair_text else []
    if repair_lines and not repair_lines[-1].endswith("\n"):
        # keep the file's line structure: the line after the span still needs its own line
        if bug_span.end < n or original.endswith("\n"):
            repair_lines[-1] += "\n"
    out = lines[:bug_span.start - 1] + repair_lines + lines[bug_span.end:]
    return "".join(out), len(repair_lines) - len(bug_span)


def span_lines(original: str, span: LineSpan) -> str:
    """The text of ``span`` in ``original``, as splice would accept it."""
    lines = original.splitlines(keepends=True)
    return "".join(lines[span.start - 1:span.end])


def candidate_dir(run_dir: Path, model: str, bug_id: int, variation, temperature: float, index: int) -> Path:
    v = Variation(variation).value
    return Path(run_dir) / _safe(model) / f"bug{bug_id}" / v / f"{temperature:g}" / f"cand{index}"


def _safe(name: str) -> str:
    return re.sub(r"[^A-Za-z0-9._-]+", "_", name) or "model"


def assemble(bug: BugRecord, raw: str, workdir: Path, *, variation, temperature: float,
             model_name: str, index: int, finished_on_stop: bool = False) -> RepairCandidate:
    """Post-process and splice one completion into ``workdir``.

    Only the buggy file is rewritten; the other DUT files are referenced in
    place.  A ``candidate.json`` metadata record is written alongside.
    """
    repair = postprocess(raw, bug, finished_on_stop=finished_on_stop)
    return materialize(bug, repair, workdir, raw=raw, variation=variation, temperature=temperature,
                       model_name=model_name, index=index)


def materialize(bug: BugRecord, repair: str, workdir: Path, *, raw: str | None = None,
                variation="a", temperature: float = 0.0, model_name: str = "manual",
                index: int = 0) -> RepairCandidate:
    """Splice an already final ``repair`` text (e.g. a gold fix) into ``workdir``."""
    original = bug.buggy_file.read_text()
    repaired, delta = splice(original, bug.bug_span, repair)
    workdir = Path(workdir)
    if workdir.exists():
        shutil.rmtree(workdir)
    workdir.mkdir(parents=True)
    target = workdir / bug.buggy_file.name
    target.write_text(repaired)
    cand = RepairCandidate(bug.id, Variation(variation), float(temperature), model_name,
                           repair if raw is None else raw, repair, target, delta, index)
    (workdir / "candidate.json").write_text(json.dumps(cand.to_json(), indent=2) + "\n")
    return cand
