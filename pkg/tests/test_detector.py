import json

import pytest

from hwfix.assembler import splice, span_lines
from hwfix.corpus import CweClass, get_bug
from hwfix.detector import (DEFAULT_HEURISTICS, NameHeuristics, RescanVerdict, rescan_verdict, scan,
                            scan_source, shift_span)
from hwfix.errors import EvalError, ParseError
from hwfix.hdl import LineSpan

FIXTURE_BUGS = {8: CweClass.CWE1234, 9: CweClass.CWE1271, 10: CweClass.CWE1245}
EXPECTED_SPANS = {8: LineSpan(29, 29), 9: LineSpan(19, 28), 10: LineSpan(27, 92)}


def repaired_copy(bug, text, tmp_path):
    new, delta = splice(bug.source_text(), bug.bug_span, text)
    path = tmp_path / bug.buggy_file.name
    path.write_text(new)
    return path, delta


@pytest.mark.parametrize("bug_id", sorted(FIXTURE_BUGS))
def test_fixture_flagged_once(corpus, bug_id):
    bug = get_bug(corpus, bug_id)
    findings = scan([bug.buggy_file])
    assert len(findings) == 1
    (f,) = findings
    assert f.cwe is FIXTURE_BUGS[bug_id]
    assert f.span == EXPECTED_SPANS[bug_id]
    assert f.span.overlaps(bug.bug_span)


@pytest.mark.parametrize("bug_id", sorted(FIXTURE_BUGS))
def test_gold_fix_clean_and_secure(corpus, bug_id, tmp_path):
    bug = get_bug(corpus, bug_id)
    (original,) = scan([bug.buggy_file])
    path, delta = repaired_copy(bug, bug.gold_text(), tmp_path)
    moved = shift_span(original.span, bug.bug_span, delta)
    assert not [f for f in scan([path]) if f.cwe is original.cwe and f.span.overlaps(moved)]
    assert rescan_verdict(original, [path], line_delta=delta, repaired_span=bug.bug_span) is RescanVerdict.SECURE


@pytest.mark.parametrize("bug_id", sorted(FIXTURE_BUGS))
def test_identity_still_vulnerable(corpus, bug_id, tmp_path):
    bug = get_bug(corpus, bug_id)
    (original,) = scan([bug.buggy_file])
    same = span_lines(bug.source_text(), bug.bug_span).rstrip("\n")
    path, delta = repaired_copy(bug, same, tmp_path)
    assert delta == 0
    assert rescan_verdict(original, [path], repaired_span=bug.bug_span) is RescanVerdict.STILL_VULNERABLE


def test_renamed_register_still_vulnerable(corpus, tmp_path):
    bug = get_bug(corpus, 9)
    (original,) = scan([bug.buggy_file])
    renamed = span_lines(bug.source_text(), bug.bug_span).replace("pmp_access_type_en", "pmp_en_q")
    src = bug.source_text().replace("pmp_access_type_en", "pmp_en_q")
    path = tmp_path / bug.buggy_file.name
    path.write_text(src)
    assert "pmp_en_q" in renamed
    assert rescan_verdict(original, [path], repaired_span=bug.bug_span) is RescanVerdict.STILL_VULNERABLE


def test_broken_repair_raises_eval_error(corpus, tmp_path):
    bug = get_bug(corpus, 9)
    (original,) = scan([bug.buggy_file])
    path, delta = repaired_copy(bug, "  always @(posedge clk_i) begin\n    x <= 1;", tmp_path)
    with pytest.raises(EvalError):
        rescan_verdict(original, [path], line_delta=delta, repaired_span=bug.bug_span)


def test_r1234_plain_lock_is_quiet():
    src = """module m(input clk, input lock, input we, input [7:0] d, output reg [7:0] q);
always @(posedge clk) begin
  if (we && !lock) q <= d;
end
endmodule
"""
    assert scan_source(src, rules=["1234"]) == []


def test_r1234_flags_debug_override():
    src = """module m(input clk, input lock, input debug_mode, input we, input [7:0] d, output reg [7:0] q);
always @(posedge clk) begin
  if (we && (!lock || debug_mode))
    q <= d;
end
endmodule
"""
    (f,) = scan_source(src, rules=["1234"])
    assert f.cwe is CweClass.CWE1234
    assert f.span == LineSpan(3, 3)


def test_r1271_reset_value_present():
    src = """module m(input clk, input rst_n, input d, output reg q);
always @(posedge clk or negedge rst_n) begin
  if (!rst_n) q <= 1'b0;
  else q <= d;
end
endmodule
"""
    assert scan_source(src, rules=["1271"]) == []


def test_r1271_no_reset_branch():
    src = """module m(input clk, input d, output reg q);
always @(posedge clk) q <= d;
endmodule
"""
    (f,) = scan_source(src, rules=["1271"])
    assert f.cwe is CweClass.CWE1271 and f.span == LineSpan(2, 2)


def test_r1245_full_or_default_is_quiet():
    full = """module m(input [1:0] sel, output reg y);
always @* begin
  case (sel)
    2'd0: y = 0;
    2'd1: y = 1;
    2'd2: y = 0;
    2'd3: y = 1;
  endcase
end
endmodule
"""
    assert scan_source(full, rules=["1245"]) == []
    with_default = full.replace("    2'd3: y = 1;\n", "    default: y = 1;\n")
    assert scan_source(with_default, rules=["1245"]) == []
    partial = full.replace("    2'd3: y = 1;\n", "")
    (f,) = scan_source(partial, rules=["1245"])
    assert f.span == LineSpan(3, 7)


def test_rule_selection_and_errors(corpus):
    bug8 = get_bug(corpus, 8)
    assert scan([bug8.buggy_file], rules=["1271", "1245"]) == []
    assert len(scan([bug8.buggy_file], rules=["CWE1234"])) == 1
    with pytest.raises(ValueError):
        scan([bug8.buggy_file], rules=["9999"])


def test_parse_error_and_on_error(tmp_path, corpus):
    bad = tmp_path / "bad.v"
    bad.write_text("module m;\n  always @* begin\nendmodule\n")
    with pytest.raises(ParseError):
        scan([bad])
    seen = []
    found = scan([bad, get_bug(corpus, 9).buggy_file], on_error=lambda p, e: seen.append(p))
    assert seen == [bad] and len(found) == 1


def test_heuristics_file(tmp_path):
    path = tmp_path / "h.json"
    path.write_text(json.dumps({"debug_patterns": ["dbg"]}))
    h = NameHeuristics.from_file(path)
    assert h.is_debug("dbg_en") and not h.is_debug("debug_en")
    assert h.reset_patterns == DEFAULT_HEURISTICS.reset_patterns
    path.write_text(json.dumps({"colour": ["x"]}))
    with pytest.raises(ValueError):
        NameHeuristics.from_file(path)


def test_shift_span():
    region = LineSpan(10, 12)
    assert shift_span(LineSpan(5, 6), region, 2) == LineSpan(5, 6)
    assert shift_span(LineSpan(20, 21), region, -2) == LineSpan(18, 19)
    assert shift_span(LineSpan(8, 20), region, 1) == LineSpan(8, 21)
