"""Functional and security judgement of repair candidates.

Simulation follows a sentinel protocol: every testbench prints exactly one
of ``TESTS: PASS`` or ``TESTS: FAIL``.  Bugs without a security testbench are
judged by re-running the detector on the repaired file.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import re
import shlex
import shutil
import subprocess
import sys
import threading
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

from .assembler import RepairCandidate
from .corpus import BugRecord
from .detector import DEFAULT_HEURISTICS, Finding, NameHeuristics, RescanVerdict, rescan_verdict, scan
from .errors import ConfigError, EvalError, MissingFile, ParseError, SimulatorNotFound

PASS_SENTINEL = "TESTS: PASS"
FAIL_SENTINEL = "TESTS: FAIL"
# Simulator messages that mean a check fired even if the tb never printed FAIL.
_ASSERTION = re.compile(r"assert(ion)? failed|\$fatal|%Error|^ERROR:", re.IGNORECASE | re.MULTILINE)

TB_TOP = "tb"


class Outcome(str, enum.Enum):
    PASS = "PASS"
    FAIL = "FAIL"
    COMPILE_ERROR = "COMPILE_ERROR"
    TIMEOUT = "TIMEOUT"
    SKIPPED = "SKIPPED"


@dataclass
class Verdict:
    functional: Outcome
    security: Outcome
    success: bool
    logs: tuple[Path, ...] = ()

    def to_json(self) -> dict:
        return {"functional": self.functional.value, "security": self.security.value,
                "success": self.success, "logs": [str(p) for p in self.logs]}


def judge(functional: Outcome, security: Outcome, *, functional_required: bool = True,
          security_required: bool = True, logs=()) -> Verdict:
    """Combine the two outcomes; success needs PASS on every required check.

    A check that is not required (no functional testbench for detector-found
    bugs, no security oracle for functional-only benchmarks) must be SKIPPED
    or PASS.  At least one check is always required.
    """
    functional, security = Outcome(functional), Outcome(security)
    if not (functional_required or security_required):
        raise ValueError("at least one check must be required")

    def ok(outcome, required):
        return outcome is Outcome.PASS or (not required and outcome is Outcome.SKIPPED)

    success = ok(functional, functional_required) and ok(security, security_required)
    return Verdict(functional, security, success, tuple(logs))


# -- simulator adapter --------------------------------------------------------

_REQUIRED = {"compile_cmd_template": ("{files}", "{top}", "{out}"), "run_cmd_template": ("{out}",)}


@dataclass(frozen=True)
class SimulatorAdapter:
    """Compile-then-run command templates.

    Placeholders: ``{files}`` (expands to one argument per file), ``{top}``,
    ``{out}`` (per-simulation build directory) and ``{python}`` (the running
    interpreter).
    """

    compile_cmd_template: str
    run_cmd_template: str
    timeout_s: int = 60
    name: str = "custom"

    def __post_init__(self):
        for attr, needed in _REQUIRED.items():
            missing = [p for p in needed if p not in getattr(self, attr)]
            if missing:
                raise ConfigError(f"{attr} lacks placeholder(s) {', '.join(missing)}")
        if self.timeout_s <= 0:
            raise ConfigError("timeout_s must be positive")

    @classmethod
    def from_file(cls, path: str | Path) -> "SimulatorAdapter":
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read simulator config {path}: {exc}") from exc
        if "preset" in data:
            return preset(data["preset"], timeout_s=data.get("timeout_s", 60))
        try:
            return cls(data["compile_cmd_template"], data["run_cmd_template"],
                       int(data.get("timeout_s", 60)), data.get("name", "custom"))
        except KeyError as exc:
            raise ConfigError(f"simulator config {path} missing {exc}") from None

    def command(self, template: str, files, top: str, out: Path) -> list[str]:
        argv = []
        for tok in shlex.split(template):
            if tok == "{files}":
                argv.extend(str(f) for f in files)
            else:
                argv.append(tok.format(top=top, out=out, python=sys.executable,
                                       files=" ".join(str(f) for f in files)))
        return argv

    def ensure_available(self) -> None:
        """Raise :class:`SimulatorNotFound` unless the toolchain is present."""
        if self.name == "verilator":
            from .vbuild import verilator_root
            if verilator_root() is None:
                raise SimulatorNotFound("verilator not found (pip install verilator, or put it on PATH)")
            for tool in ("make", os.environ.get("CXX", "c++")):
                if shutil.which(tool) is None:
                    raise SimulatorNotFound(f"verilator needs '{tool}' on PATH")
            return
        for template in (self.compile_cmd_template, self.run_cmd_template):
            exe = shlex.split(template)[0]
            if exe.startswith("{"):
                continue
            if shutil.which(exe) is None:
                raise SimulatorNotFound(f"simulator executable '{exe}' not found on PATH")


def preset(name: str, timeout_s: int = 60) -> SimulatorAdapter:
    if name == "verilator":
        return SimulatorAdapter("{python} -m hwfix.vbuild --top {top} --out {out} {files}",
                                "{out}/sim", timeout_s, "verilator")
    if name == "iverilog":
        return SimulatorAdapter("iverilog -g2012 -s {top} -o {out}/sim.vvp {files}",
                                "vvp -n {out}/sim.vvp", timeout_s, "iverilog")
    raise ConfigError(f"unknown simulator preset {name!r} (verilator, iverilog)")


def default_simulator() -> SimulatorAdapter:
    """The Verilator preset, falling back to Icarus when only that is installed."""
    sim = preset("verilator")
    try:
        sim.ensure_available()
        return sim
    except SimulatorNotFound:
        if shutil.which("iverilog") and shutil.which("vvp"):
            return preset("iverilog")
        return sim


# -- single simulations -------------------------------------------------------

def classify(stdout: str) -> Outcome:
    if FAIL_SENTINEL in stdout or _ASSERTION.search(stdout):
        return Outcome.FAIL
    if PASS_SENTINEL in stdout:
        return Outcome.PASS
    return Outcome.FAIL


def simulate(files, tb: Path, sim: SimulatorAdapter, out: Path, *, top: str = TB_TOP,
             make_jobs: int = 1, keep_build: bool = False) -> tuple[Outcome, str]:
    """Compile ``files`` plus ``tb`` and run the result; returns (outcome, transcript)."""
    out = Path(out).resolve()
    if out.exists():
        shutil.rmtree(out)
    out.mkdir(parents=True)
    all_files = [Path(f).resolve() for f in (*files, tb)]
    env = {**os.environ, "HWFIX_MAKE_JOBS": str(make_jobs)}
    log = []

    def step(template, label):
        argv = sim.command(template, all_files, top, out)
        log.append(f"$ {shlex.join(argv)}")
        try:
            res = subprocess.run(argv, cwd=out, env=env, capture_output=True, text=True,
                                 timeout=sim.timeout_s)
        except subprocess.TimeoutExpired as exc:
            log.append(_text(exc.stdout) + _text(exc.stderr))
            log.append(f"[{label} timed out after {sim.timeout_s} s]")
            return None
        except FileNotFoundError as exc:
            raise SimulatorNotFound(str(exc)) from exc
        log.append(res.stdout + res.stderr)
        return res

    try:
        res = step(sim.compile_cmd_template, "compile")
        if res is None:
            return Outcome.TIMEOUT, "\n".join(log)
        if res.returncode != 0:
            if res.returncode == 127:
                raise SimulatorNotFound("\n".join(log[-1:]).strip() or "simulator not found")
            return Outcome.COMPILE_ERROR, "\n".join(log)
        res = step(sim.run_cmd_template, "run")
        if res is None:
            return Outcome.TIMEOUT, "\n".join(log)
        return classify(res.stdout + res.stderr), "\n".join(log)
    finally:
        if not keep_build:
            shutil.rmtree(out, ignore_errors=True)


def _text(b) -> str:
    if b is None:
        return ""
    return b.decode(errors="replace") if isinstance(b, bytes) else b


# -- per-candidate evaluation -------------------------------------------------

def assemble_dut(bug: BugRecord, candidate: RepairCandidate) -> list[Path]:
    """``bug.dut_files`` with the buggy file swapped for the repaired one."""
    repaired = Path(candidate.repaired_file)
    if not repaired.exists():
        raise MissingFile(f"repaired file missing: {repaired}")
    out = []
    for f in bug.dut_files:
        out.append(repaired if Path(f) == Path(bug.buggy_file) else Path(f))
    for f in out:
        if not f.exists():
            raise MissingFile(f"design file missing: {f}")
    return out


def original_finding(bug: BugRecord, heuristics: NameHeuristics = DEFAULT_HEURISTICS) -> Finding:
    """The detector finding that locates ``bug`` in its unmodified file.

    Falls back to the bug span itself when the detector does not flag it.
    """
    try:
        found = scan([bug.buggy_file], heuristics, rules=[bug.cwe.value.removeprefix("CWE")])
    except (ParseError, ValueError):
        found = []
    for f in found:
        if f.span.overlaps(bug.bug_span):
            return f
    return Finding(bug.buggy_file, bug.bug_span, bug.cwe, "R" + bug.cwe.value.removeprefix("CWE"))


class Evaluator:
    """Runs candidate judgements, optionally in parallel.

    Identical inputs (file contents, testbench, simulator) are simulated once
    and the outcome reused; transcripts are still copied into every
    candidate's directory.
    """

    def __init__(self, sim: SimulatorAdapter | None = None,
                 heuristics: NameHeuristics = DEFAULT_HEURISTICS, workers: int | None = None,
                 make_jobs: int = 1, cache: bool = True, keep_builds: bool = False):
        self.sim = sim or default_simulator()
        self.heuristics = heuristics
        self.workers = workers or os.cpu_count() or 1
        self.make_jobs = make_jobs
        self.keep_builds = keep_builds
        self._cache: dict[str, Future] | None = {} if cache else None
        self._lock = threading.Lock()
        self._checked = False
        self._findings: dict[tuple, Finding] = {}

    def ensure_simulator(self) -> None:
        if not self._checked:
            self.sim.ensure_available()
            self._checked = True

    # -- the two checks -------------------------------------------------------

    def _sim_key(self, files, tb) -> str:
        h = hashlib.sha256()
        h.update(repr((self.sim.compile_cmd_template, self.sim.run_cmd_template)).encode())
        for f in [*files, tb]:
            h.update(Path(f).name.encode() + b"\0" + Path(f).read_bytes() + b"\0")
        return h.hexdigest()

    def _simulate(self, files, tb, out: Path) -> tuple[Outcome, str]:
        self.ensure_simulator()
        if self._cache is None:
            return simulate(files, tb, self.sim, out, make_jobs=self.make_jobs, keep_build=self.keep_builds)
        key = self._sim_key(files, tb)
        with self._lock:
            fut = self._cache.get(key)
            owner = fut is None
            if owner:
                fut = self._cache[key] = Future()
        if owner:
            try:
                fut.set_result(simulate(files, tb, self.sim, out, make_jobs=self.make_jobs,
                                        keep_build=self.keep_builds))
            except BaseException as exc:
                with self._lock:
                    self._cache.pop(key, None)
                fut.set_exception(exc)
        return fut.result()

    def run_functional(self, files, tb: Path | None, workdir: Path) -> tuple[Outcome, Path | None]:
        if tb is None:
            return Outcome.SKIPPED, None
        outcome, transcript = self._simulate(files, tb, Path(workdir) / "sim_functional")
        log = Path(workdir) / "functional.log"
        log.write_text(transcript)
        return outcome, log

    def run_security(self, bug: BugRecord, candidate: RepairCandidate, files,
                     workdir: Path) -> tuple[Outcome, Path | None]:
        workdir = Path(workdir)
        oracle = bug.security_oracle
        if oracle.kind == "skipped":
            return Outcome.SKIPPED, None
        if oracle.is_testbench:
            outcome, transcript = self._simulate(files, oracle.path, workdir / "sim_security")
            log = workdir / "security.log"
            log.write_text(transcript)
            return outcome, log
        finding = self.finding_for(bug)
        log = workdir / "security.log"
        try:
            verdict = rescan_verdict(finding, [candidate.repaired_file], self.heuristics,
                                     line_delta=candidate.line_delta, repaired_span=bug.bug_span)
        except EvalError as exc:
            log.write_text(f"rescan for {finding.cwe.value} at {finding.span}: {exc}\n")
            return Outcome.COMPILE_ERROR, log
        log.write_text(f"rescan for {finding.cwe.value} at {finding.span}: {verdict.value}\n")
        return (Outcome.PASS if verdict is RescanVerdict.SECURE else Outcome.FAIL), log

    def finding_for(self, bug: BugRecord) -> Finding:
        key = (str(bug.buggy_file), bug.bug_span, bug.cwe)
        with self._lock:
            if key not in self._findings:
                self._findings[key] = original_finding(bug, self.heuristics)
            return self._findings[key]

    # -- whole candidates -----------------------------------------------------

    def evaluate(self, bug: BugRecord, candidate: RepairCandidate) -> Verdict:
        files = assemble_dut(bug, candidate)
        workdir = Path(candidate.repaired_file).parent
        functional, flog = self.run_functional(files, bug.functional_tb, workdir)
        if functional in (Outcome.COMPILE_ERROR, Outcome.TIMEOUT):
            security, slog = Outcome.SKIPPED, None
        else:
            security, slog = self.run_security(bug, candidate, files, workdir)
        verdict = judge(functional, security, functional_required=bug.functional_tb is not None,
                        security_required=bug.security_oracle.kind != "skipped",
                        logs=[p for p in (flog, slog) if p])
        (workdir / "verdict.json").write_text(json.dumps(verdict.to_json(), indent=2) + "\n")
        return verdict

    def evaluate_many(self, jobs) -> list[Verdict]:
        """Evaluate ``(bug, candidate)`` pairs on the worker pool, in order."""
        jobs = list(jobs)
        if self.workers <= 1 or len(jobs) <= 1:
            return [self.evaluate(b, c) for b, c in jobs]
        with ThreadPoolExecutor(max_workers=self.workers) as pool:
            return list(pool.map(lambda job: self.evaluate(*job), jobs))


__all__ = ["Evaluator", "Outcome", "SimulatorAdapter", "Verdict", "assemble_dut", "classify",
           "default_simulator", "judge", "original_finding", "preset", "simulate"]
