"""Lossless Verilog/SystemVerilog tokenizer.

Whitespace is not a token; each token keeps the whitespace that precedes it
(``pre``) and the final token also keeps whatever trails the source
(``post``), so ``detokenize(tokenize(src)) == src`` for any source that
contains at least one token.
"""

from __future__ import annotations

import enum
import re
from typing import NamedTuple

from ..errors import UnterminatedBlockComment, UnterminatedString


class TokenKind(str, enum.Enum):
    IDENT = "IDENT"
    KEYWORD = "KEYWORD"
    NUMBER = "NUMBER"
    OPERATOR = "OPERATOR"
    PUNCT = "PUNCT"
    COMMENT = "COMMENT"
    STRING = "STRING"


class Token(NamedTuple):
    kind: TokenKind
    text: str
    line: int
    col: int
    pre: str = ""
    post: str = ""

    @property
    def end_line(self) -> int:
        return self.line + self.text.count("\n")

    def is_kw(self, *words: str) -> bool:
        return self.text in words and self.kind is TokenKind.KEYWORD

    def is_op(self, *ops: str) -> bool:
        return self.text in ops and (self.kind is TokenKind.OPERATOR or self.kind is TokenKind.PUNCT)


KEYWORDS = frozenset("""
always always_comb always_ff always_latch and assert assign assume automatic
begin bit break buf bufif0 bufif1 byte case casex casez cmos const continue
cover deassign default defparam disable do edge else end endcase endclass
endfunction endgenerate endinterface endmodule endpackage endprimitive
endprogram endspecify endtable endtask enum event final for force forever
fork function generate genvar highz0 highz1 if iff ifnone import initial inout
input int integer interface join join_any join_none large localparam logic
longint macromodule medium module nand negedge nmos nor not notif0 notif1 or
output package packed parameter pmos posedge primitive priority program pull0
pull1 pulldown pullup rcmos real realtime reg release repeat return rnmos rpmos
rtran rtranif0 rtranif1 scalared shortint signed small specify specparam strong0
strong1 struct supply0 supply1 table task time tran tranif0 tranif1 tri tri0
tri1 triand trior trireg typedef union unique unique0 unsigned vectored void
wait wand weak0 weak1 while wire wor xnor xor
""".split())

# Longest first so the alternation picks maximal munch.
_OPERATORS = sorted("""
<<<= >>>= === !== ==? !=? <<< >>> <-> |-> |=> <<= >>= += -= *= /= %= &= |= ^=
== != <= >= && || << >> ** ~& ~| ~^ ^~ -> +: -: :: ++ --
+ - * / % & | ^ ~ ! < > = ? '
""".split(), key=len, reverse=True)

_WS = re.compile(r"[ \t\r\n\f\v]+")
_IDENT = re.compile(r"[A-Za-z_][A-Za-z0-9_$]*")
_SYSIDENT = re.compile(r"\$[A-Za-z_][A-Za-z0-9_$]*")
_ESCAPED = re.compile(r"\\\S+")
_NUMBER = re.compile(
    r"(?:\d[\d_]*)?\s*'[sS]?[bBoOdDhH]\s*[0-9a-fA-FxXzZ?_]+"
    r"|'[01xXzZ](?![A-Za-z0-9_])"
    r"|\d[\d_]*(?:\.\d[\d_]*)?(?:[eE][+-]?\d+)?(?:fs|ps|ns|us|ms|s)?(?![A-Za-z_])"
)
_OPERATOR = re.compile("|".join(re.escape(op) for op in _OPERATORS))
_DIRECTIVE = re.compile(r"`[A-Za-z_][A-Za-z0-9_]*")
# Directives whose whole line is passed through opaquely.
_LINE_DIRECTIVES = frozenset({
    "define", "undef", "timescale", "include", "ifdef", "ifndef", "elsif",
    "else", "endif", "default_nettype", "resetall", "celldefine",
    "endcelldefine", "line", "pragma",
})


def tokenize(source: str, strict: bool = True) -> list[Token]:
    """Split ``source`` into tokens.

    With ``strict=False`` an unterminated string or block comment runs to the
    end of input instead of raising; used on model output, which is often cut
    off mid-construct.
    """
    tokens: list[Token] = []
    pos = 0
    line = 1
    line_start = 0
    pre = ""
    n = len(source)

    def emit(kind, text):
        nonlocal pre
        tokens.append(Token(kind, text, line, pos - line_start + 1, pre))
        pre = ""

    while pos < n:
        m = _WS.match(source, pos)
        if m:
            ws = m.group()
            pre += ws
            nl = ws.count("\n")
            if nl:
                line += nl
                line_start = pos + ws.rindex("\n") + 1
            pos = m.end()
            continue

        m = _IDENT.match(source, pos)
        if m:
            word = m.group()
            emit(TokenKind.KEYWORD if word in KEYWORDS else TokenKind.IDENT, word)
            pos = m.end()
            continue

        ch = source[pos]
        nxt = source[pos + 1] if pos + 1 < n else ""

        if ch == "/" and nxt == "/":
            end = source.find("\n", pos)
            end = n if end < 0 else end
            emit(TokenKind.COMMENT, source[pos:end])
            pos = end
            continue

        if ch == "/" and nxt == "*":
            end = source.find("*/", pos + 2)
            if end < 0:
                if strict:
                    raise UnterminatedBlockComment("unterminated block comment", line)
                end = n
            else:
                end += 2
            text = source[pos:end]
            emit(TokenKind.COMMENT, text)
            line, line_start = _advance(text, pos, line, line_start)
            pos = end
            continue

        if ch == '"':
            i = pos + 1
            while i < n and source[i] not in '"\n':
                i += 2 if source[i] == "\\" else 1
            if i >= n or source[i] == "\n":
                if strict:
                    raise UnterminatedString("unterminated string literal", line)
                i = min(i, n)
                text = source[pos:i]
            else:
                text = source[pos:i + 1]
            emit(TokenKind.STRING, text)
            pos += len(text)
            continue

        if ch == "`":
            m = _DIRECTIVE.match(source, pos)
            if m and m.group()[1:] in _LINE_DIRECTIVES:
                end = _directive_end(source, pos)
                text = source[pos:end]
                emit(TokenKind.COMMENT, text)
                line, line_start = _advance(text, pos, line, line_start)
                pos = end
                continue
            if m:
                # macro use, e.g. `WIDTH
                emit(TokenKind.IDENT, m.group())
                pos = m.end()
                continue

        m = _NUMBER.match(source, pos) if (ch.isdigit() or ch == "'") else None
        if m:
            emit(TokenKind.NUMBER, m.group())
            pos = m.end()
            continue

        m = _SYSIDENT.match(source, pos) if ch == "$" else None
        if m:
            word = m.group()
            emit(TokenKind.KEYWORD if word in KEYWORDS else TokenKind.IDENT, word)
            pos = m.end()
            continue

        m = _ESCAPED.match(source, pos) if ch == "\\" else None
        if m:
            emit(TokenKind.IDENT, m.group())
            pos = m.end()
            continue

        m = _OPERATOR.match(source, pos)
        if m:
            emit(TokenKind.OPERATOR, m.group())
            pos = m.end()
            continue

        # Anything else (including stray bytes in model output) is punctuation.
        emit(TokenKind.PUNCT, ch)
        pos += 1

    if tokens and pre:
        tokens[-1] = tokens[-1]._replace(post=pre)
    return tokens


def _advance(text, pos, line, line_start):
    nl = text.count("\n")
    if nl:
        line += nl
        line_start = pos + text.rindex("\n") + 1
    return line, line_start


def _directive_end(source, pos):
    """End offset of a directive line, following backslash continuations."""
    end = pos
    while True:
        nl = source.find("\n", end)
        if nl < 0:
            return len(source)
        if source[nl - 1:nl] == "\\":
            end = nl + 1
            continue
        return nl


def detokenize(tokens: list[Token]) -> str:
    return "".join(t.pre + t.text + t.post for t in tokens)


def code_tokens(tokens: list[Token]) -> list[Token]:
    """Tokens with comments removed."""
    return [t for t in tokens if t.kind is not TokenKind.COMMENT]
