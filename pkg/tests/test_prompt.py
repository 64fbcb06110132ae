import dataclasses
import random

import pytest

from hwfix.corpus import Variation
from hwfix.hdl import LineSpan
from hwfix.prompt import ContextPolicy, build_prompt, comment_lines, context_span, select_context

from conftest import FIXTURES, GOLDEN
from oracles import random_design, reference_context


def as_bug(bug, span):
    return dataclasses.replace(bug, bug_span=span)


def test_golden_variation_c(bug3):
    prompt = build_prompt(bug3, bug3.source_text(), "c")
    assert prompt.text == (GOLDEN / "bug3_c_prompt.txt").read_text()
    assert prompt.context_span == LineSpan(1, 10)


def test_variation_a_same_context(bug3):
    a = build_prompt(bug3, bug3.source_text(), Variation.A).text.splitlines()
    c = build_prompt(bug3, bug3.source_text(), Variation.C).text.splitlines()
    assert a[:10] == c[:10]
    assert a[10] == "// BUG:"
    assert a[-1] == "// FIX:"
    assert a[11:13] == c[12:14]


def test_prompt_is_pure(bug3):
    src = bug3.source_text()
    assert build_prompt(bug3, src, "d") == build_prompt(bug3, src, "d")


def test_grant_access_context(bug3):
    src = (FIXTURES / "grant_access_original.v").read_text()
    assert select_context(as_bug(bug3, LineSpan(10, 11)), src) == LineSpan(1, 9)


def test_bug_on_line_two(bug3):
    assert select_context(as_bug(bug3, LineSpan(2, 2)), bug3.source_text()) == LineSpan(1, 1)


def test_long_file_keeps_nearest_fifty(bug3):
    body = [f"wire [7:0] n{k} = 8'd{k % 200};" for k in range(20)]
    inner = [f"        q <= q + 8'd{k % 9};" for k in range(60)]
    lines = ["module big(input clk, input rst_n, output reg [7:0] q);", *body,
             "always @(posedge clk or negedge rst_n) begin", "    if (!rst_n) q <= 8'd0;", "    else begin",
             *inner, "        q <= 8'd1;", "    end", "end", "endmodule"]
    src = "\n".join(lines) + "\n"
    bug_line = lines.index("        q <= 8'd1;") + 1
    always_line = lines.index("always @(posedge clk or negedge rst_n) begin") + 1
    assert bug_line - 1 >= 80 and bug_line - always_line >= 60
    span = select_context(as_bug(bug3, LineSpan(bug_line, bug_line)), src)
    assert span == LineSpan(bug_line - 50, bug_line - 1)
    assert len(span) == 50


def test_empty_bug_span(bug3):
    prompt = build_prompt(as_bug(bug3, LineSpan(11, 10)), bug3.source_text(), "a")
    lines = prompt.text.splitlines()
    assert lines[-2:] == ["// BUG:", "// FIX:"]


def test_comment_lines():
    assert comment_lines(["    x <= 1;", "", "  ", "y;"]) == ["// x <= 1;", "// y;"]


def test_policy_validation():
    with pytest.raises(ValueError):
        ContextPolicy(30, 20)
    with pytest.raises(ValueError):
        ContextPolicy(0, 20)


def test_context_span_rule():
    p = ContextPolicy(25, 50)
    assert context_span(20, 7, p) == LineSpan(1, 19)
    assert context_span(100, 90, p) == LineSpan(75, 99)
    assert context_span(100, 10, p) == LineSpan(50, 99)
    assert context_span(100, 60, p) == LineSpan(60, 99)


def test_random_designs_match_reference(bug3):
    rng = random.Random(20231)
    for _ in range(200):
        src, candidates = random_design(rng)
        line = rng.choice(candidates)
        lo = rng.randint(1, 30)
        policy = ContextPolicy(lo, rng.randint(lo, 60))
        got = select_context(as_bug(bug3, LineSpan(line, line)), src, policy)
        assert (got.start, got.end) == reference_context(src, line, policy.min_lines, policy.max_lines)
