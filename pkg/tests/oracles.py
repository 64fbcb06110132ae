"""Reference implementations and generators shared by the tests."""

import random

from hwfix.hdl import TokenKind, tokenize


def innermost_block_start(src: str, line: int) -> int:
    """Latest-starting always/case/module holding ``line``, by token nesting.

    Independent of the parser: blocks are matched with a keyword stack, which
    is exact for designs whose always bodies are ``begin ... end`` groups (as
    produced by :func:`random_design`).
    """
    openers = {"module": "endmodule", "case": "endcase", "casez": "endcase", "casex": "endcase"}
    stack, spans = [], []  # stack entries: [closer, start line, kind]
    pending_always = None
    for tok in tokenize(src):
        if tok.kind is not TokenKind.KEYWORD:
            continue
        word = tok.text
        if word in openers:
            stack.append([openers[word], tok.line, word])
        elif word == "always":
            pending_always = tok.line
        elif word == "begin":
            stack.append(["end", pending_always, "always" if pending_always else "begin"])
            pending_always = None
        elif stack and word == stack[-1][0]:
            closer, start, kind = stack.pop()
            if kind != "begin":
                spans.append((start, tok.line))
    starts = [a for a, b in spans if a <= line <= b]
    return max(starts) if starts else line


def reference_context(src: str, bug_start: int, min_lines: int, max_lines: int) -> tuple[int, int]:
    """Step-by-step application of the context rule."""
    last = bug_start - 1
    if last <= min_lines:
        return 1, last
    start = innermost_block_start(src, bug_start)
    while last - start + 1 < min_lines:
        start -= 1
    while last - start + 1 > max_lines:
        start += 1
    return start, last


def random_design(rng: random.Random) -> tuple[str, list[int]]:
    """A synthetic module and the lines a bug may start on."""
    lines = ["module synth(input clk, input rst_n, input [3:0] sel, output reg [7:0] q, output [7:0] w);"]
    candidates = []
    for k in range(rng.randint(0, 70)):
        lines.append(f"wire [7:0] n{k} = 8'd{k};")
        candidates.append(len(lines))
    for blk in range(rng.randint(1, 3)):
        lines.append("always @(posedge clk or negedge rst_n) begin")
        lines.append("    if (!rst_n) q <= 8'd0;")
        lines.append("    else begin")
        for k in range(rng.randint(1, 60)):
            if rng.random() < 0.1:
                lines.append("        case (sel)")
                for j in range(rng.randint(1, 6)):
                    lines.append(f"            4'd{j}: q <= 8'd{j};")
                    candidates.append(len(lines))
                lines.append("        endcase")
            else:
                lines.append(f"        q <= q + 8'd{k % 7};")
                candidates.append(len(lines))
        lines.append("    end")
        lines.append("end")
        for k in range(rng.randint(0, 20)):
            lines.append(f"assign w = n0 + 8'd{blk}{k};" if rng.random() < 0.5 else f"// filler {blk} {k}")
            candidates.append(len(lines))
    lines.append("endmodule")
    return "\n".join(lines) + "\n", candidates
