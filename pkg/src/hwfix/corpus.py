"""Machine-readable bug corpus: loading, validation and serialization."""

from __future__ import annotations

import enum
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import CorpusError, IncompleteVariations, MissingFile, SpanOutOfRange
from .hdl.nodes import LineSpan

FIX_MARKER = "// FIX:"
BUG_MARKER = "// BUG:"


class Variation(str, enum.Enum):
    """Instruction variation, ordered by increasing amount of guidance."""

    A = "a"
    B = "b"
    C = "c"
    D = "d"
    E = "e"

    def __lt__(self, other):
        if not isinstance(other, Variation):
            return NotImplemented
        return self.value < other.value

    @classmethod
    def parse(cls, text: str) -> "Variation":
        try:
            return cls(text.strip().lower())
        except ValueError:
            raise ValueError(f"unknown instruction variation {text!r} (expected a..e)") from None


VARIATIONS = tuple(Variation)


class CweClass(str, enum.Enum):
    CWE1234 = "CWE1234"
    CWE1271 = "CWE1271"
    CWE1280 = "CWE1280"
    CWE1276 = "CWE1276"
    CWE1245 = "CWE1245"

    @classmethod
    def parse(cls, text) -> "CweClass":
        norm = str(text).upper().replace("-", "").replace("_", "")
        if not norm.startswith("CWE"):
            norm = "CWE" + norm
        try:
            return cls(norm)
        except ValueError:
            raise CorpusError(f"unsupported CWE class {text!r}") from None


class SourceTag(str, enum.Enum):
    MITRE = "MITRE"
    OPENTITAN = "OPENTITAN"
    HACKDAC = "HACKDAC"
    USER = "USER"


@dataclass(frozen=True)
class SecurityOracle:
    """A security testbench (``path`` set), a detector re-scan, or none."""

    kind: str  # "testbench" | "detector_rescan" | "skipped"
    path: Path | None = None

    @property
    def is_testbench(self) -> bool:
        return self.kind == "testbench"


@dataclass(frozen=True)
class InstructionPair:
    bug_instruction: tuple[str, ...]
    fix_instruction: tuple[str, ...]


VARIATION_A = InstructionPair((BUG_MARKER,), (FIX_MARKER,))


@dataclass(frozen=True)
class BugRecord:
    id: int
    design_name: str
    cwe: CweClass
    source_tag: SourceTag
    buggy_file: Path
    bug_span: LineSpan
    dut_files: tuple[Path, ...]
    functional_tb: Path | None
    security_oracle: SecurityOracle
    instructions: dict = field(hash=False)
    stop_keywords: tuple[str, ...]
    gold_repair: Path | None = None
    description: str = ""
    root: Path | None = field(default=None, compare=False)

    def source_text(self) -> str:
        return self.buggy_file.read_text()

    def gold_text(self) -> str | None:
        return self.gold_repair.read_text() if self.gold_repair else None


def instructions_for(bug: BugRecord, v: Variation) -> InstructionPair:
    """Instruction pair for ``v``; variation a is the same for every bug."""
    v = Variation(v)
    if v is Variation.A:
        return VARIATION_A
    try:
        return bug.instructions[v]
    except KeyError:
        raise IncompleteVariations(f"bug {bug.id} has no variation {v.value} instructions") from None


def default_manifest() -> Path:
    """Path of the manifest shipped with the package."""
    return Path(str(resources.files("hwfix") / "data" / "corpus" / "manifest.json"))


def load_corpus(manifest_path: str | Path | None = None, variations=VARIATIONS) -> list[BugRecord]:
    """Load and validate every bug listed in ``manifest_path``.

    ``variations`` lists the instruction variations each bug must provide.
    """
    path = Path(manifest_path) if manifest_path else default_manifest()
    if not path.exists():
        raise MissingFile(f"manifest not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise CorpusError(f"{path}: not valid JSON ({exc})") from exc
    root = path.parent.resolve()
    required = tuple(Variation(v) for v in variations)
    records = [_record_from_json(entry, root, required) for entry in data.get("bugs", [])]
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        raise CorpusError(f"{path}: duplicate bug ids")
    return records


def get_bug(records: list[BugRecord], bug_id: int) -> BugRecord:
    for rec in records:
        if rec.id == bug_id:
            return rec
    raise CorpusError(f"no bug with id {bug_id}")


def _record_from_json(entry: dict, root: Path, required=VARIATIONS) -> BugRecord:
    try:
        bug_id = int(entry["id"])
    except (KeyError, TypeError, ValueError):
        raise CorpusError("every bug needs an integer 'id'") from None
    if bug_id < 1:
        raise CorpusError(f"bug id must be positive, got {bug_id}")
    where = f"bug {bug_id}"

    def need(key):
        if key not in entry:
            raise CorpusError(f"{where}: missing field '{key}'")
        return entry[key]

    def existing(rel) -> Path:
        p = (root / rel)
        if not p.exists():
            raise MissingFile(f"{where}: file not found: {rel}")
        return p

    buggy = existing(need("buggy_file"))
    dut = tuple(existing(f) for f in need("dut_files"))
    if sum(1 for f in dut if f == buggy) != 1:
        raise CorpusError(f"{where}: dut_files must list the buggy file exactly once")

    start, end = need("bug_span")
    nlines = len(buggy.read_text().splitlines())
    if not (1 <= start <= end <= nlines):
        raise SpanOutOfRange(f"{where}: bug_span [{start}, {end}] outside 1..{nlines}")

    oracle_json = need("security_oracle")
    kind = oracle_json.get("kind")
    if kind == "testbench":
        oracle = SecurityOracle("testbench", existing(oracle_json["path"]))
    elif kind in ("detector_rescan", "skipped"):
        oracle = SecurityOracle(kind)
    else:
        raise CorpusError(f"{where}: unknown security oracle kind {kind!r}")

    tb = entry.get("functional_tb")
    instructions = _parse_instructions(need("instructions"), where, required)

    stops = list(need("stop_keywords"))
    if "endmodule" not in stops:
        stops.insert(0, "endmodule")

    gold = entry.get("gold_repair")
    return BugRecord(
        id=bug_id,
        design_name=need("design"),
        cwe=CweClass.parse(need("cwe")),
        source_tag=SourceTag(str(need("source")).upper()),
        buggy_file=buggy,
        bug_span=LineSpan(start, end),
        dut_files=dut,
        functional_tb=existing(tb) if tb else None,
        security_oracle=oracle,
        instructions=instructions,
        stop_keywords=tuple(stops),
        gold_repair=existing(gold) if gold else None,
        description=entry.get("description", ""),
        root=root,
    )


def _parse_instructions(raw: dict, where: str, required=VARIATIONS) -> dict:
    missing = [v.value for v in required if v.value not in raw and v is not Variation.A]
    if missing:
        raise IncompleteVariations(f"{where}: missing instruction variation(s) {', '.join(missing)}")
    out = {}
    for v in VARIATIONS:
        if v.value not in raw:
            continue
        pair = raw[v.value]
        bug_lines = tuple(pair.get("bug", []))
        fix_lines = tuple(pair.get("fix", []))
        if not fix_lines or fix_lines[-1] != FIX_MARKER:
            raise CorpusError(f"{where}: variation {v.value} fix instruction must end with '{FIX_MARKER}'")
        # Variation e embeds an uncommented example fix after its own "// FIX:".
        checked = bug_lines if v is not Variation.E else _commented_prefix(bug_lines)
        for line in (*checked, *fix_lines):
            if not line.startswith("// "):
                raise CorpusError(f"{where}: variation {v.value} line not a '// ' comment: {line!r}")
        if any("\n" in line for line in (*bug_lines, *fix_lines)):
            raise CorpusError(f"{where}: instruction lines must not embed newlines")
        out[v] = InstructionPair(bug_lines, fix_lines)
    return out


def _commented_prefix(lines) -> tuple[str, ...]:
    """Lines up to and including the example's ``// FIX:`` marker."""
    if FIX_MARKER in lines:
        return tuple(lines[:lines.index(FIX_MARKER) + 1])
    return tuple(lines)


def record_to_json(rec: BugRecord) -> dict:
    """Inverse of the manifest loader (paths relative to ``rec.root``)."""
    root = rec.root or rec.buggy_file.parent

    def rel(p: Path) -> str:
        return Path(p).relative_to(root).as_posix()

    out = {
        "id": rec.id,
        "design": rec.design_name,
        "cwe": rec.cwe.value,
        "source": rec.source_tag.value,
        "buggy_file": rel(rec.buggy_file),
        "bug_span": rec.bug_span.to_list(),
        "dut_files": [rel(p) for p in rec.dut_files],
        "functional_tb": rel(rec.functional_tb) if rec.functional_tb else None,
        "security_oracle": ({"kind": "testbench", "path": rel(rec.security_oracle.path)}
                            if rec.security_oracle.is_testbench else {"kind": rec.security_oracle.kind}),
        "stop_keywords": list(rec.stop_keywords),
        "instructions": {v.value: {"bug": list(p.bug_instruction), "fix": list(p.fix_instruction)}
                         for v, p in rec.instructions.items()},
    }
    if out["functional_tb"] is None:
        del out["functional_tb"]
    if rec.gold_repair:
        out["gold_repair"] = rel(rec.gold_repair)
    if rec.description:
        out["description"] = rec.description
    return out


def dump_corpus(records: list[BugRecord], path: str | Path) -> None:
    Path(path).write_text(json.dumps({"bugs": [record_to_json(r) for r in records]}, indent=2) + "\n")
