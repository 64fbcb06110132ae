import dataclasses
import itertools
import json
import shutil

import pytest

from hwfix.assembler import materialize, span_lines
from hwfix.corpus import SecurityOracle, get_bug
from hwfix.errors import ConfigError, MissingFile, SimulatorNotFound
from hwfix.evaluator import (Evaluator, Outcome, SimulatorAdapter, assemble_dut, classify, judge, preset,
                             simulate)

from conftest import GRANT_FIXED, GRANT_INSECURE, GRANT_WRONG, FIXTURES

FAKE = SimulatorAdapter(f"{{python}} {FIXTURES / 'fake_sim.py'} compile {{out}} {{top}} {{files}}",
                        f"{{python}} {FIXTURES / 'fake_sim.py'} run {{out}}", timeout_s=10, name="fake")
O = Outcome


# -- pure helpers -------------------------------------------------------------

@pytest.mark.parametrize("f,s", list(itertools.product(Outcome, Outcome)))
def test_judge_exhaustive(f, s):
    assert judge(f, s).success == (f is O.PASS and s is O.PASS)
    # functional not required (detector-found bugs): SKIPPED is fine there
    assert judge(f, s, functional_required=False).success == (f in (O.PASS, O.SKIPPED) and s is O.PASS)


def test_judge_examples():
    assert judge(O.PASS, O.PASS).success
    assert not judge(O.PASS, O.FAIL).success
    assert not judge(O.COMPILE_ERROR, O.SKIPPED).success
    assert judge(O.PASS, O.SKIPPED, security_required=False).success
    with pytest.raises(ValueError):
        judge(O.PASS, O.PASS, functional_required=False, security_required=False)


def test_classify():
    assert classify("hello\nTESTS: PASS\n") is O.PASS
    assert classify("TESTS: PASS\nTESTS: FAIL\n") is O.FAIL
    assert classify("Assertion failed at tb.v:10\nTESTS: PASS") is O.FAIL
    assert classify("no sentinel") is O.FAIL


def test_adapter_validation(tmp_path):
    with pytest.raises(ConfigError):
        SimulatorAdapter("sim {files}", "run {out}")
    with pytest.raises(ConfigError):
        SimulatorAdapter("sim {files} {top} {out}", "run")
    with pytest.raises(ConfigError):
        preset("modelsim")
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"preset": "iverilog", "timeout_s": 5}))
    assert SimulatorAdapter.from_file(cfg) == preset("iverilog", 5)
    cfg.write_text(json.dumps({"compile_cmd_template": "c {files} {top} {out}", "run_cmd_template": "r {out}"}))
    assert SimulatorAdapter.from_file(cfg).name == "custom"
    cfg.write_text("{")
    with pytest.raises(ConfigError):
        SimulatorAdapter.from_file(cfg)


def test_adapter_command_expands_files(tmp_path):
    argv = FAKE.command(FAKE.compile_cmd_template, ["a.v", "b.v"], "tb", tmp_path)
    assert argv[-3:] == ["tb", "a.v", "b.v"]
    assert argv[3] == str(tmp_path)


def test_missing_simulator(tmp_path):
    sim = SimulatorAdapter("no-such-sim-xyz {files} {top} {out}", "run {out}")
    with pytest.raises(SimulatorNotFound):
        sim.ensure_available()
    assert issubclass(SimulatorNotFound, ConfigError)
    with pytest.raises(SimulatorNotFound):
        Evaluator(sim).ensure_simulator()


def test_assemble_dut_order(corpus, tmp_path):
    bug3 = get_bug(corpus, 3)
    cand = materialize(bug3, bug3.gold_text(), tmp_path / "b3")
    assert assemble_dut(bug3, cand) == [tmp_path / "b3" / "user_grant_access.v"]
    bug4 = get_bug(corpus, 4)
    cand = materialize(bug4, bug4.gold_text(), tmp_path / "b4")
    files = assemble_dut(bug4, cand)
    assert [f.name for f in files] == ["tz_peripheral.v", "soc.v"]
    assert files[1] == tmp_path / "b4" / "soc.v"
    shutil.rmtree(tmp_path / "b4")
    with pytest.raises(MissingFile):
        assemble_dut(bug4, cand)


# -- orchestration with the stand-in simulator --------------------------------

def fake_bug(bug3, tmp_path):
    tb = tmp_path / "tb_fake.v"
    tb.write_text("module tb; endmodule\n")
    return dataclasses.replace(bug3, functional_tb=tb, security_oracle=SecurityOracle("testbench", tb))


def test_simulate_outcomes(tmp_path):
    design = tmp_path / "d.v"
    tb = tmp_path / "tb.v"
    tb.write_text("tb\n")
    for text, want in [("GOOD", O.PASS), ("bad", O.FAIL), ("SYNTAX_ERROR", O.COMPILE_ERROR)]:
        design.write_text(text)
        outcome, log = simulate([design], tb, FAKE, tmp_path / "out")
        assert outcome is want, log
        assert not (tmp_path / "out").exists()


def test_simulate_timeout(tmp_path):
    design = tmp_path / "d.v"
    design.write_text("HANG GOOD")
    tb = tmp_path / "tb.v"
    tb.write_text("tb\n")
    sim = dataclasses.replace(FAKE, timeout_s=1)
    outcome, log = simulate([design], tb, sim, tmp_path / "out")
    assert outcome is O.TIMEOUT
    assert "timed out" in log


def test_evaluate_with_fake(bug3, tmp_path):
    bug = fake_bug(bug3, tmp_path)
    ev = Evaluator(FAKE, workers=2)
    jobs = []
    for k, text in enumerate(["// GOOD", "// nope", "// SYNTAX_ERROR", "// GOOD"]):
        jobs.append((bug, materialize(bug, text, tmp_path / f"c{k}", index=k)))
    verdicts = ev.evaluate_many(jobs)
    assert [(v.functional, v.security, v.success) for v in verdicts] == [
        (O.PASS, O.PASS, True), (O.FAIL, O.FAIL, False), (O.COMPILE_ERROR, O.SKIPPED, False),
        (O.PASS, O.PASS, True)]
    for k in range(4):
        assert json.loads((tmp_path / f"c{k}" / "verdict.json").read_text())["success"] == verdicts[k].success
        assert (tmp_path / f"c{k}" / "functional.log").exists()


def test_verdict_cache_shares_identical_candidates(bug3, tmp_path, monkeypatch):
    import hwfix.evaluator as evmod
    calls = []
    real = evmod.simulate

    def counting(*args, **kw):
        calls.append(1)
        return real(*args, **kw)

    monkeypatch.setattr(evmod, "simulate", counting)
    bug = fake_bug(bug3, tmp_path)
    ev = Evaluator(FAKE, workers=1)
    for k in range(3):
        ev.evaluate(bug, materialize(bug, "// GOOD", tmp_path / f"c{k}", index=k))
    # one functional and one security run; both tbs are the same file so one run total
    assert len(calls) == 1
    Evaluator(FAKE, workers=1, cache=False).evaluate(bug, materialize(bug, "// GOOD", tmp_path / "x"))
    assert len(calls) == 3


def test_skipped_oracle(bug3, tmp_path):
    bug = dataclasses.replace(fake_bug(bug3, tmp_path), security_oracle=SecurityOracle("skipped"))
    v = Evaluator(FAKE).evaluate(bug, materialize(bug, "// GOOD", tmp_path / "c"))
    assert (v.functional, v.security, v.success) == (O.PASS, O.SKIPPED, True)


# -- real simulator -----------------------------------------------------------

def eval_text(evaluator, bug, text, wd):
    return evaluator.evaluate(bug, materialize(bug, text, wd))


@pytest.mark.sim
def test_grant_access_candidates(evaluator, bug3, tmp_path):
    indent = "        "

    def fix(text):
        return "\n".join(indent + line for line in text.splitlines())

    d = eval_text(evaluator, bug3, fix(GRANT_FIXED), tmp_path / "d")
    e = eval_text(evaluator, bug3, fix(GRANT_INSECURE), tmp_path / "e")
    f = eval_text(evaluator, bug3, fix(GRANT_WRONG), tmp_path / "f")
    assert (d.functional, d.security, d.success) == (O.PASS, O.PASS, True)
    assert (e.functional, e.security, e.success) == (O.PASS, O.FAIL, False)
    assert f.functional is O.FAIL and not f.success


@pytest.mark.sim
def test_bug9_rescan(evaluator, corpus, tmp_path):
    bug9 = get_bug(corpus, 9)
    gold = eval_text(evaluator, bug9, bug9.gold_text(), tmp_path / "gold")
    assert (gold.functional, gold.security, gold.success) == (O.PASS, O.PASS, True)
    same = eval_text(evaluator, bug9, span_lines(bug9.source_text(), bug9.bug_span), tmp_path / "same")
    assert same.security is O.FAIL and not same.success
    log = (tmp_path / "same" / "security.log").read_text()
    assert "STILL_VULNERABLE" in log


@pytest.mark.sim
def test_bug1_debug_override_fails_security(evaluator, corpus, tmp_path):
    bug1 = get_bug(corpus, 1)
    keep = "    else if (write & (~lock_status | debug_unlocked)) begin"
    v = eval_text(evaluator, bug1, keep, tmp_path / "keep")
    assert v.functional is O.PASS and v.security is O.FAIL


@pytest.mark.sim
def test_compile_error_candidate(evaluator, bug3, tmp_path):
    v = eval_text(evaluator, bug3, "        grant_access = ;", tmp_path / "broken")
    assert (v.functional, v.security, v.success) == (O.COMPILE_ERROR, O.SKIPPED, False)
