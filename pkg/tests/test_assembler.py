import json

import pytest
from hypothesis import given, settings, strategies as st

from hwfix.assembler import (assemble, candidate_dir, materialize, postprocess, span_surplus, splice,
                             span_lines)
from hwfix.corpus import get_bug
from hwfix.errors import SpanOutOfRange
from hwfix.hdl import LineSpan, scope_balance

from conftest import GRANT_FIXED, FIXTURES

LINES = [
    "x <= 1;", "begin", "end", "if (a) begin", "end else begin", "always @(posedge clk) begin",
    "case (s)", "endcase", "// begin here", "/* end */", '$display("begin end");', "q <= q + 1; end",
    "default: begin y = 0; end", "", "    ", "endmodule", "wire w;", "end end", "begin : named",
]

fragments = st.lists(st.sampled_from(LINES), max_size=12).map("\n".join)


@settings(max_examples=1000, deadline=None)
@given(fragments)
def test_fuzz_balanced_and_idempotent(raw):
    once = postprocess(raw, surplus=0)
    begins, ends = scope_balance(once)
    assert begins == ends
    assert postprocess(once, surplus=0) == once


@settings(max_examples=200, deadline=None)
@given(fragments, st.sampled_from([("endmodule", "end"), ("endmodule", "endcase"), ("endmodule", "\n")]))
def test_fuzz_idempotent_with_stops(raw, stops):
    once = postprocess(raw, stop_keywords=stops, surplus=0)
    assert postprocess(once, stop_keywords=stops, surplus=0) == once


def test_worked_balanced():
    assert postprocess(GRANT_FIXED, surplus=0) == GRANT_FIXED


def test_worked_extra_begin():
    assert postprocess("if (x) begin y<=1;", surplus=0) == "if (x) begin y<=1;\nend"


def test_worked_extra_end():
    assert postprocess("end\nx<=1;", surplus=0) == "x<=1;"


def test_end_removed_inline():
    assert postprocess("x <= 1; end\ny <= 0;", surplus=0) == "x <= 1; \ny <= 0;"


def test_surplus_from_bug_span(corpus):
    assert {b.id: span_surplus(b) for b in corpus} == {
        1: 1, 2: 0, 3: 0, 4: 0, 5: 0, 6: 0, 7: 0, 8: 1, 9: 0, 10: 0}
    bug1 = get_bug(corpus, 1)
    gold = bug1.gold_text().rstrip("\n")
    # the bug line opens a block closed outside the span; nothing is added
    assert postprocess(gold, bug1) == gold


def test_stop_trimming(corpus):
    bug10 = get_bug(corpus, 10)
    raw = "    default: state <= s0;\n    endcase\n  end\nendmodule\n"
    assert postprocess(raw, bug10) == "    default: state <= s0;\n    endcase"
    # provider already removed the stop keyword
    assert postprocess("    default: state <= s0;\n    ", bug10, finished_on_stop=True) == \
        "    default: state <= s0;\n    endcase"
    bug1 = get_bug(corpus, 1)
    assert postprocess("else if (write & ~lock_status) begin\n    Data_out <= Data_in;\n", bug1) == \
        "else if (write & ~lock_status) begin"


def test_splice_grant_access(bug3):
    src = (FIXTURES / "grant_access_original.v").read_text()
    out, delta = splice(src, LineSpan(10, 11), GRANT_FIXED)
    lines = src.splitlines()
    assert out.splitlines() == lines[:9] + GRANT_FIXED.splitlines() + lines[11:]
    assert out.splitlines()[9:11] == GRANT_FIXED.splitlines()
    assert delta == 0


def test_splice_deletion():
    src = (FIXTURES / "grant_access_original.v").read_text()
    out, delta = splice(src, LineSpan(10, 11), "")
    lines = src.splitlines()
    assert out.splitlines() == lines[:9] + lines[11:]
    assert delta == -2


def test_splice_identity_and_reverse(corpus):
    for bug in corpus:
        src = bug.source_text()
        original = span_lines(src, bug.bug_span)
        assert splice(src, bug.bug_span, original) == (src, 0)
        out, delta = splice(src, bug.bug_span, bug.gold_text())
        new_span = LineSpan(bug.bug_span.start, bug.bug_span.end + delta)
        back, back_delta = splice(out, new_span, original)
        assert back == src and back_delta == -delta


def test_splice_insertion_and_range():
    src = "a\nb\nc\n"
    assert splice(src, LineSpan(2, 1), "x") == ("a\nx\nb\nc\n", 1)
    assert splice(src, LineSpan(4, 3), "z") == ("a\nb\nc\nz\n", 1)
    with pytest.raises(SpanOutOfRange):
        splice(src, LineSpan(3, 5), "x")


def test_assemble_writes_candidate(bug3, tmp_path):
    wd = candidate_dir(tmp_path, "some/model", 3, "c", 0.7, 4)
    assert wd.relative_to(tmp_path).as_posix() == "some_model/bug3/c/0.7/cand4"
    raw = "        " + GRANT_FIXED.replace("\n", "\n        ") + "\n    end\nend\nendmodule\n"
    cand = assemble(bug3, raw, wd, variation="c", temperature=0.7, model_name="some/model", index=4)
    assert cand.repaired_file == wd / "user_grant_access.v"
    text = cand.repaired_file.read_text().splitlines()
    assert text[10:12] == ["        grant_access = (usr_id == 3'h4) ? 1'b1 : 1'b0;",
                           "        if (grant_access) data_out = data_in;"]
    assert text[12:] == ["    end", "end", "endmodule"]
    meta = json.loads((wd / "candidate.json").read_text())
    assert meta["raw_completion"] == raw and meta["index"] == 4 and meta["variation"] == "c"


def test_materialize_replaces_stale_dir(bug3, tmp_path):
    wd = tmp_path / "w"
    wd.mkdir()
    (wd / "stale.txt").write_text("x")
    cand = materialize(bug3, bug3.gold_text(), wd)
    assert not (wd / "stale.txt").exists()
    assert cand.line_delta == 0 and cand.model_name == "manual"
