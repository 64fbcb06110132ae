"""Experiment orchestration: sweeps, report files, best settings, CirFix
comparison and the detect-repair-evaluate loop for unknown designs."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import time
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable

from .assembler import assemble, candidate_dir
from .corpus import (BugRecord, CweClass, SecurityOracle, SourceTag, Variation, get_bug,
                     load_corpus)
from .detector import DEFAULT_HEURISTICS, Finding, NameHeuristics, scan
from .errors import CassetteMiss, ConfigError, EndpointError, HwfixError, RetriesExhausted
from .evaluator import Evaluator, Outcome, Verdict
from .gateway import CompletionParams, FinishReason, Gateway, GatewayMode
from .prompt import ContextPolicy, build_prompt

DEFAULT_TEMPERATURES = (0.1, 0.3, 0.5, 0.7, 0.9)
RECORDS_FILE = "records.jsonl"


class CellAborted(HwfixError):
    """A sweep cell could not finish; ``cell`` names it."""

    def __init__(self, cell, cause):
        super().__init__(f"cell {format_cell(cell)} aborted: {cause}")
        self.cell = cell
        self.cause = cause


# cell = (model, bug_id, variation, temperature)
def format_cell(cell) -> str:
    model, bug_id, v, t = cell
    return f"{model}/bug{bug_id}/{Variation(v).value}/t={t:g}"


@dataclass(frozen=True)
class SweepConfig:
    bug_ids: tuple[int, ...]
    variations: tuple[Variation, ...] = tuple(Variation)
    temperatures: tuple[float, ...] = DEFAULT_TEMPERATURES
    models: tuple[str, ...] = ("code-davinci-002",)
    n: int = 20
    mode: GatewayMode = GatewayMode.REPLAY
    seed_run_id: str = ""
    max_tokens: int = 200

    def __post_init__(self):
        object.__setattr__(self, "bug_ids", tuple(int(b) for b in self.bug_ids))
        object.__setattr__(self, "variations", tuple(Variation.parse(v) if isinstance(v, str) else Variation(v)
                                                     for v in self.variations))
        object.__setattr__(self, "temperatures", tuple(float(t) for t in self.temperatures))
        object.__setattr__(self, "models", tuple(self.models))
        object.__setattr__(self, "mode", GatewayMode(self.mode))
        if any(not 0.0 <= t <= 1.0 for t in self.temperatures):
            raise ConfigError(f"temperatures must lie in [0, 1]: {self.temperatures}")
        if self.n < 1:
            raise ConfigError("n must be >= 1")
        if not self.models:
            raise ConfigError("at least one model name is required")

    @classmethod
    def from_json(cls, data: dict) -> "SweepConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown sweep config keys: {', '.join(sorted(unknown))}")
        if "bug_ids" not in data:
            raise ConfigError("sweep config needs 'bug_ids'")
        return cls(**data)

    @classmethod
    def from_file(cls, path: str | Path) -> "SweepConfig":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read sweep config {path}: {exc}") from exc
        return cls.from_json(data)

    def to_json(self) -> dict:
        return {"bug_ids": list(self.bug_ids), "variations": [v.value for v in self.variations],
                "temperatures": list(self.temperatures), "models": list(self.models), "n": self.n,
                "mode": self.mode.value, "seed_run_id": self.seed_run_id, "max_tokens": self.max_tokens}

    def run_id(self) -> str:
        """Content-addressed: the same grid always lands in the same run directory."""
        grid = {k: v for k, v in self.to_json().items() if k != "mode"}
        digest = hashlib.sha256(json.dumps(grid, sort_keys=True).encode()).hexdigest()[:12]
        return f"{self.seed_run_id}-{digest}" if self.seed_run_id else f"run-{digest}"

    def cells(self):
        for model in self.models:
            for bug_id in self.bug_ids:
                for v in self.variations:
                    for t in self.temperatures:
                        yield (model, bug_id, v.value, t)


@dataclass
class ExperimentMatrix:
    n: int
    cells: dict = field(default_factory=dict)  # (model, bug, variation, temp) -> successes

    def add(self, cell, successes: int) -> None:
        if not 0 <= successes <= self.n:
            raise ValueError(f"success count {successes} outside [0, {self.n}] for {format_cell(cell)}")
        self.cells[cell] = successes

    @classmethod
    def from_records(cls, records: Iterable[dict], n: int, cells=()) -> "ExperimentMatrix":
        m = cls(n, {tuple(c): 0 for c in cells})
        for r in records:
            key = (r["model"], r["bug_id"], r["variation"], r["temperature"])
            m.cells[key] = m.cells.get(key, 0) + (1 if r["success"] else 0)
        for key, count in m.cells.items():
            if count > n:
                raise ValueError(f"{format_cell(key)} has {count} successes > n={n}")
        return m

    def total(self, axis: str) -> dict:
        """Sum of successes grouped by one of model, bug, variation, temperature."""
        idx = {"model": 0, "bug": 1, "variation": 2, "temperature": 3}[axis]
        out = defaultdict(int)
        for key, count in self.cells.items():
            out[key[idx]] += count
        return dict(sorted(out.items()))

    def rate(self, axis: str) -> dict:
        idx = {"model": 0, "bug": 1, "variation": 2, "temperature": 3}[axis]
        sizes = defaultdict(int)
        for key in self.cells:
            sizes[key[idx]] += self.n
        return {k: v / sizes[k] for k, v in self.total(axis).items()}

    def sorted_cells(self):
        return sorted(self.cells.items(), key=lambda kv: (kv[0][0], kv[0][1], kv[0][2], kv[0][3]))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "bug_id", "variation", "temperature", "successes", "n"])
        for (model, bug_id, v, t), count in self.sorted_cells():
            w.writerow([model, bug_id, v, f"{t:g}", count, self.n])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "ExperimentMatrix":
        rows = list(csv.DictReader(io.StringIO(text)))
        n = int(rows[0]["n"]) if rows else 0
        m = cls(n)
        for r in rows:
            m.add((r["model"], int(r["bug_id"]), r["variation"], float(r["temperature"])), int(r["successes"]))
        return m

    def heatmap(self) -> str:
        """Plain-text grid: one block per model, rows bug/variation, columns temperature."""
        lines = []
        models = sorted({k[0] for k in self.cells})
        temps = sorted({k[3] for k in self.cells})
        for model in models:
            lines.append(f"model {model} (successes out of {self.n})")
            lines.append("bug var " + "".join(f"{t:>6g}" for t in temps))
            rows = sorted({(k[1], k[2]) for k in self.cells if k[0] == model})
            for bug_id, v in rows:
                vals = "".join(f"{self.cells.get((model, bug_id, v, t), 0):>6d}"
                               if (model, bug_id, v, t) in self.cells else "     ." for t in temps)
                lines.append(f"{bug_id:>3d} {v:>3s} {vals}")
            lines.append("")
        return "\n".join(lines)


# -- running a sweep ----------------------------------------------------------

def _record_key(r: dict):
    return (r["model"], r["bug_id"], r["variation"], r["temperature"], r["index"])


def load_records(path: Path) -> list[dict]:
    """Per-candidate records; a torn last line from an interrupted run is skipped."""
    if not path.exists():
        return []
    seen = {}
    for line in path.read_text().splitlines():
        try:
            r = json.loads(line)
        except json.JSONDecodeError:
            continue
        seen.setdefault(_record_key(r), r)
    return list(seen.values())


def _candidate_record(cell, index, cand, verdict: Verdict, finish: FinishReason, run_dir: Path) -> dict:
    model, bug_id, v, t = cell
    return {"model": model, "bug_id": bug_id, "variation": v, "temperature": t, "index": index,
            "raw_completion": cand.raw_completion, "repair_text": cand.repair_text,
            "finish_reason": finish.value, "line_delta": cand.line_delta,
            "functional": verdict.functional.value, "security": verdict.security.value,
            "success": verdict.success,
            "workdir": Path(cand.repaired_file).parent.relative_to(run_dir).as_posix()}


def _generate(bug: BugRecord, prompt, cell, n: int, max_tokens: int, gateway: Gateway):
    model, _, _, t = cell
    params = CompletionParams(temperature=t, n=n, max_tokens=max_tokens,
                              stop=bug.stop_keywords, model_name=model)
    return gateway.complete(prompt, params)


def run_sweep(config: SweepConfig, corpus: list[BugRecord], gateway: Gateway, evaluator: Evaluator,
              out_dir: str | Path, *, policy: ContextPolicy = ContextPolicy(),
              progress: Callable | None = None) -> ExperimentMatrix:
    """Run every cell of ``config`` and write the reports into the run directory.

    Per-candidate records are appended to ``records.jsonl`` as cells finish;
    running again with the same config resumes and skips finished cells.
    ``progress(cell, successes)`` is called after each cell.
    """
    bugs = {b: get_bug(corpus, b) for b in config.bug_ids}
    run_dir = Path(out_dir) / config.run_id()
    run_dir.mkdir(parents=True, exist_ok=True)
    cells = list(config.cells())
    (run_dir / "config.json").write_text(json.dumps(config.to_json(), indent=2) + "\n")
    if cells:
        evaluator.ensure_simulator()

    records_path = run_dir / RECORDS_FILE
    done = defaultdict(dict)
    for r in load_records(records_path):
        done[(r["model"], r["bug_id"], r["variation"], r["temperature"])][r["index"]] = r
    started = time.time()
    with records_path.open("a") as sink:
        for cell in cells:
            have = done[cell]
            if len(have) >= config.n:
                continue
            model, bug_id, v, t = cell
            bug = bugs[bug_id]
            source = bug.source_text()
            prompt = build_prompt(bug, source, v, policy)
            try:
                batch = _generate(bug, prompt, cell, config.n, config.max_tokens, gateway)
                todo = []
                for i, (raw, finish) in enumerate(zip(batch.completions, batch.finish_reasons)):
                    if i in have:
                        continue
                    wd = candidate_dir(run_dir, model, bug_id, v, t, i)
                    cand = assemble(bug, raw, wd, variation=v, temperature=t, model_name=model,
                                    index=i, finished_on_stop=finish is FinishReason.STOP)
                    todo.append((cand, finish))
                verdicts = evaluator.evaluate_many([(bug, c) for c, _ in todo])
            except (CassetteMiss, RetriesExhausted, EndpointError) as exc:
                raise CellAborted(cell, exc) from exc
            for (cand, finish), verdict in zip(todo, verdicts):
                rec = _candidate_record(cell, cand.index, cand, verdict, finish, run_dir)
                have[cand.index] = rec
                sink.write(json.dumps(rec, sort_keys=True) + "\n")
            sink.flush()
            if progress:
                progress(cell, sum(1 for r in have.values() if r["success"]))

    records = [r for cell in cells for r in done[cell].values()]
    matrix = ExperimentMatrix.from_records(records, config.n, cells)
    write_reports(run_dir, config, matrix, records)
    (run_dir / "timing.json").write_text(json.dumps({"wall_s": round(time.time() - started, 3)}) + "\n")
    return matrix


def write_reports(run_dir: Path, config: SweepConfig, matrix: ExperimentMatrix, records: list[dict]) -> None:
    """matrix.csv, records.json, heatmap.txt and best.txt; all deterministic."""
    run_dir = Path(run_dir)
    (run_dir / "matrix.csv").write_text(matrix.to_csv())
    ordered = sorted(records, key=_record_key)
    (run_dir / "records.json").write_text(json.dumps(ordered, indent=1, sort_keys=True) + "\n")
    (run_dir / "heatmap.txt").write_text(matrix.heatmap())
    (run_dir / "best.txt").write_text(format_best(best_settings(matrix)))
    (run_dir / "run.json").write_text(json.dumps({
        "run_id": config.run_id(), "config": config.to_json(), "cells": len(matrix.cells),
        "candidates": len(records), "successes": sum(matrix.cells.values()),
        "totals": {axis: {str(k): v for k, v in matrix.total(axis).items()}
                   for axis in ("model", "bug", "variation", "temperature")},
    }, indent=2, sort_keys=True) + "\n")


def load_run(run_dir: str | Path) -> ExperimentMatrix:
    path = Path(run_dir) / "matrix.csv"
    if not path.exists():
        raise ConfigError(f"no matrix.csv in {run_dir}")
    return ExperimentMatrix.from_csv(path.read_text())


# -- best settings ------------------------------------------------------------

@dataclass(frozen=True)
class BestSetting:
    model: str
    variations: tuple[str, ...]
    temperatures: tuple[float, ...]
    successes: int

    def label(self) -> str:
        def group(items, fmt=str):
            items = [fmt(i) for i in items]
            return items[0] if len(items) == 1 else "(" + ",".join(items) + ")"
        return f"[{self.model},{group(self.variations)},{group(self.temperatures, lambda t: f'{t:g}')}]"


def best_settings(matrix: ExperimentMatrix) -> dict[int, list[BestSetting]]:
    """Every argmax cell per bug, grouped per model.

    Within a model, cells are grouped by variation; variations whose
    maximizing temperatures coincide are merged into one setting.
    """
    per_bug = defaultdict(list)
    for cell, count in matrix.cells.items():
        per_bug[cell[1]].append((cell, count))
    out = {}
    for bug_id in sorted(per_bug):
        entries = per_bug[bug_id]
        best = max(c for _, c in entries)
        temps = defaultdict(set)
        for (model, _, v, t), c in entries:
            if c == best:
                temps[(model, v)].add(t)
        merged = defaultdict(list)
        for (model, v), ts in temps.items():
            merged[(model, tuple(sorted(ts)))].append(v)
        settings = [BestSetting(model, tuple(sorted(vs)), ts, best) for (model, ts), vs in merged.items()]
        out[bug_id] = sorted(settings, key=lambda s: (s.model, s.variations, s.temperatures))
    return out


def format_best(best: dict[int, list[BestSetting]]) -> str:
    lines = []
    for bug_id, settings in best.items():
        if not settings:
            continue
        count = settings[0].successes
        if count == 0:
            lines.append(f"bug {bug_id}: no successful setting")
            continue
        lines.append(f"bug {bug_id}: {count} successes " + " ".join(s.label() for s in settings))
    return "\n".join(lines) + ("\n" if lines else "")


# -- CirFix comparison --------------------------------------------------------

CIRFIX_VARIATIONS = (Variation.A, Variation.B)


@dataclass
class CirfixRow:
    benchmark: str
    description: str
    marks: dict  # variation value -> "y" | "-"
    candidates: dict  # variation value -> repair text
    verdicts: dict  # variation value -> functional outcome
    manual_review: str = ""

    def to_json(self) -> dict:
        return {"benchmark": self.benchmark, "description": self.description, "marks": self.marks,
                "candidates": self.candidates, "verdicts": self.verdicts, "manual_review": self.manual_review}


def default_cirfix_manifest() -> Path:
    from .corpus import default_manifest
    return default_manifest().parent.parent / "cirfix" / "manifest.json"


def cirfix_mode(benchmarks: list[BugRecord], gateway: Gateway, evaluator: Evaluator, out_dir: str | Path,
                *, model: str = "code-davinci-002", temperature: float = 0.1) -> list[CirfixRow]:
    """One candidate per benchmark for variations a and b, judged functionally."""
    out_dir = Path(out_dir)
    rows = []
    if benchmarks:
        evaluator.ensure_simulator()
    for bug in benchmarks:
        source = bug.source_text()
        marks, texts, verdicts = {}, {}, {}
        for v in CIRFIX_VARIATIONS:
            cell = (model, bug.id, v.value, temperature)
            prompt = build_prompt(bug, source, v)
            try:
                batch = _generate(bug, prompt, cell, 1, 200, gateway)
            except (CassetteMiss, RetriesExhausted, EndpointError) as exc:
                raise CellAborted(cell, exc) from exc
            cand = assemble(bug, batch.completions[0], candidate_dir(out_dir, model, bug.id, v, temperature, 0),
                            variation=v, temperature=temperature, model_name=model, index=0,
                            finished_on_stop=batch.finish_reasons[0] is FinishReason.STOP)
            verdict = evaluator.evaluate(bug, cand)
            ok = verdict.functional is Outcome.PASS
            marks[v.value] = "y" if ok else "-"
            texts[v.value] = cand.repair_text
            verdicts[v.value] = verdict.functional.value
        rows.append(CirfixRow(bug.design_name, bug.description, marks, texts, verdicts))
    return rows


def format_cirfix(rows: list[CirfixRow]) -> str:
    if not rows:
        return ""
    w1 = max(len("Benchmark"), *(len(r.benchmark) for r in rows))
    w2 = max(len("Defect"), *(len(r.description) for r in rows))
    head = f"{'Benchmark':<{w1}} | {'Defect':<{w2}} | a | b | review"
    lines = [head, "-" * len(head)]
    for r in rows:
        lines.append(f"{r.benchmark:<{w1}} | {r.description:<{w2}} | {r.marks['a']} | {r.marks['b']} | {r.manual_review}")
    return "\n".join(lines) + "\n"


# -- detect, repair, evaluate -------------------------------------------------

E2E_ID_BASE = 1000
E2E_VARIATIONS = (Variation.B, Variation.C)


def template_bug(corpus: list[BugRecord], cwe: CweClass) -> BugRecord:
    """The corpus bug whose instructions and stops serve as the CWE template.

    Detector-judged (Hack@DAC-style) bugs are preferred since their spans
    have the same shape as detector findings.
    """
    same = [b for b in corpus if b.cwe is cwe]
    if not same:
        raise ConfigError(f"corpus has no {cwe.value} bug to borrow instructions from")
    rescan = [b for b in same if b.security_oracle.kind == "detector_rescan"]
    return sorted(rescan or same, key=lambda b: b.id)[0]


def synthesize_bug(finding: Finding, bug_id: int, corpus: list[BugRecord]) -> BugRecord:
    tpl = template_bug(corpus, finding.cwe)
    path = Path(finding.file)
    return BugRecord(
        id=bug_id, design_name=path.stem, cwe=finding.cwe, source_tag=SourceTag.USER,
        buggy_file=path, bug_span=finding.span, dut_files=(path,), functional_tb=None,
        security_oracle=SecurityOracle("detector_rescan"),
        instructions={v: tpl.instructions[v] for v in E2E_VARIATIONS},
        stop_keywords=tpl.stop_keywords, description=finding.note, root=path.parent)


@dataclass
class Suggestion:
    finding: Finding
    bug_id: int
    candidates: list[dict]  # ranked, secure first

    @property
    def secure(self) -> list[dict]:
        return [c for c in self.candidates if c["success"]]

    def to_json(self) -> dict:
        return {"bug_id": self.bug_id, "finding": self.finding.to_json(), "candidates": self.candidates}


def end_to_end(paths: Iterable[str | Path], gateway: Gateway, evaluator: Evaluator, out_dir: str | Path, *,
               corpus: list[BugRecord] | None = None, heuristics: NameHeuristics = DEFAULT_HEURISTICS,
               model: str = "code-davinci-002", temperatures=(0.1,), n: int = 5,
               variations=E2E_VARIATIONS) -> list[Suggestion]:
    """Scan ``paths``, generate repairs for each finding and rank them.

    Findings that share a file, CWE and span (one per register for
    CWE-1271) form a single suggestion group.
    """
    corpus = corpus if corpus is not None else load_corpus()
    out_dir = Path(out_dir)
    findings = scan(paths, heuristics)
    groups = {}
    for f in findings:
        groups.setdefault((str(f.file), f.cwe, f.span), f)
    suggestions = []
    for k, finding in enumerate(groups.values()):
        bug = synthesize_bug(finding, E2E_ID_BASE + k, corpus)
        source = bug.source_text()
        ranked = {}
        for v in variations:
            prompt = build_prompt(bug, source, v)
            for t in temperatures:
                cell = (model, bug.id, Variation(v).value, t)
                try:
                    batch = _generate(bug, prompt, cell, n, 200, gateway)
                except (CassetteMiss, RetriesExhausted, EndpointError) as exc:
                    raise CellAborted(cell, exc) from exc
                cands = []
                for i, (raw, finish) in enumerate(zip(batch.completions, batch.finish_reasons)):
                    wd = candidate_dir(out_dir, model, bug.id, v, t, i)
                    cands.append(assemble(bug, raw, wd, variation=v, temperature=t, model_name=model,
                                          index=i, finished_on_stop=finish is FinishReason.STOP))
                for cand, verdict in zip(cands, evaluator.evaluate_many([(bug, c) for c in cands])):
                    entry = ranked.setdefault(cand.repair_text, {
                        "repair_text": cand.repair_text, "security": verdict.security.value,
                        "success": verdict.success, "count": 0, "first_seen": (Variation(v).value, t, cand.index)})
                    entry["count"] += 1
        cands = sorted(ranked.values(), key=lambda c: (not c["success"], -c["count"], c["first_seen"]))
        for c in cands:
            c["first_seen"] = list(c["first_seen"])
        suggestions.append(Suggestion(finding, bug.id, cands))
    return suggestions


def format_suggestions(suggestions: list[Suggestion]) -> str:
    lines = []
    for s in suggestions:
        f = s.finding
        lines.append(f"{f.file}:{f.span.start}-{f.span.end} {f.cwe.value} {f.note}")
        if not s.secure:
            lines.append("  no secure candidate")
        for rank, c in enumerate(s.secure, 1):
            lines.append(f"  suggestion {rank} (seen {c['count']}x):")
            lines.extend("    " + ln for ln in c["repair_text"].splitlines() or [""])
        lines.append("")
    return "\n".join(lines)
