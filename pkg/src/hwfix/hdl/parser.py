"""Recursive-descent parser for the Verilog subset the pipeline needs.

Covered: modules and ports, declarations (for signal widths), always blocks
with their sensitivity lists, if/else, case/default, blocking and
non-blocking assignments, continuous assigns, named/positional module
instantiation and full expressions.  Everything else (functions, tasks,
generate regions, assertions, ...) is kept as an opaque ``EXPR`` node that
still carries a correct line span.

The only hard failure is structural: unbalanced begin/end, case/endcase,
module/endmodule and friends raise :class:`ParseError`.
"""

from __future__ import annotations

from ..errors import ParseError
from .lexer import Token, TokenKind, code_tokens, tokenize
from .nodes import AstNode, LineSpan, NodeKind

_CLOSERS = {
    "begin": ("end",),
    "case": ("endcase",),
    "casex": ("endcase",),
    "casez": ("endcase",),
    "fork": ("join", "join_any", "join_none"),
    "module": ("endmodule",),
    "macromodule": ("endmodule",),
    "function": ("endfunction",),
    "task": ("endtask",),
    "generate": ("endgenerate",),
    "package": ("endpackage",),
    "interface": ("endinterface",),
    "program": ("endprogram",),
    "primitive": ("endprimitive",),
    "specify": ("endspecify",),
    "table": ("endtable",),
}
_ALL_CLOSERS = {c for cs in _CLOSERS.values() for c in cs}
_BLOCK_END = frozenset(_ALL_CLOSERS)

_DECL_KEYWORDS = frozenset({
    "input", "output", "inout", "reg", "wire", "logic", "bit", "integer", "int",
    "genvar", "parameter", "localparam", "tri", "tri0", "tri1", "supply0",
    "supply1", "wand", "wor", "time", "real", "realtime", "byte", "shortint",
    "longint", "signed", "unsigned", "var", "event", "automatic", "const",
})
_DIRECTIONS = frozenset({"input", "output", "inout"})
_INTEGER_WIDTHS = {"integer": 32, "int": 32, "byte": 8, "shortint": 16, "longint": 64, "time": 64}

_BINARY_PREC = {
    "->": 1, "<->": 1,
    "||": 2,
    "&&": 3,
    "|": 4,
    "^": 5, "~^": 5, "^~": 5,
    "&": 6,
    "==": 7, "!=": 7, "===": 7, "!==": 7, "==?": 7, "!=?": 7,
    "<": 8, "<=": 8, ">": 8, ">=": 8,
    "<<": 9, ">>": 9, "<<<": 9, ">>>": 9,
    "+": 10, "-": 10,
    "*": 11, "/": 11, "%": 11,
    "**": 12,
}
_UNARY = frozenset({"!", "~", "-", "+", "&", "|", "^", "~&", "~|", "~^", "^~", "++", "--"})
_ASSIGN_OPS = frozenset({"=", "<=", "+=", "-=", "*=", "/=", "%=", "&=", "|=", "^=", "<<=", ">>=", "<<<=", ">>>="})


def check_balance(tokens: list[Token]) -> None:
    """Raise ParseError unless every structural opener has its closer."""
    stack: list[Token] = []
    prev = None
    for tok in tokens:
        if tok.kind is TokenKind.KEYWORD:
            word = tok.text
            opener = word in _CLOSERS
            if word == "fork" and prev is not None and prev.is_kw("wait", "disable"):
                opener = False
            if word == "interface" and prev is not None and prev.is_op("(", ","):
                opener = False  # interface-typed port
            if opener:
                stack.append(tok)
            elif word in _ALL_CLOSERS:
                if not stack:
                    raise ParseError(f"'{word}' without matching opener", tok.line)
                top = stack.pop()
                if word not in _CLOSERS[top.text]:
                    raise ParseError(
                        f"'{word}' closes '{top.text}' opened at line {top.line}", tok.line)
        prev = tok
    if stack:
        top = stack[-1]
        raise ParseError(f"'{top.text}' is never closed", top.line)


def parse_design(source: str) -> list[AstNode]:
    """Parse ``source`` into one MODULE node per module."""
    tokens = code_tokens(tokenize(source))
    check_balance(tokens)
    return _Parser(tokens).design()


def parse_expression(text: str) -> AstNode:
    """Parse a standalone expression (used by tests and the detector)."""
    tokens = code_tokens(tokenize(text))
    p = _Parser(tokens)
    node = p.expr()
    if not p.at_end():
        raise ParseError(f"unexpected '{p.peek().text}' after expression", p.peek().line)
    return node


def scope_balance(fragment: str) -> tuple[int, int]:
    """Count whole-word ``begin``/``end`` tokens outside comments and strings."""
    begins = ends = 0
    for tok in tokenize(fragment, strict=False):
        if tok.kind is TokenKind.KEYWORD:
            if tok.text == "begin":
                begins += 1
            elif tok.text == "end":
                ends += 1
    return begins, ends


def enclosing_block_start(source: str, line: int) -> int:
    """Start line of the innermost always block, case statement or module
    containing ``line``; ``line`` itself when nothing encloses it."""
    nlines = max(1, source.count("\n") + (0 if source.endswith("\n") else 1))
    if not 1 <= line <= nlines:
        raise ValueError(f"line {line} outside 1..{nlines}")
    best = None
    rank = {NodeKind.ALWAYS_BLOCK: 0, NodeKind.CASE_STMT: 1, NodeKind.MODULE: 2}
    for module in parse_design(source):
        for node in module.walk():
            if node.kind in rank and node.span.contains(line):
                key = (node.span.start, -rank[node.kind])
                if best is None or key > best[0]:
                    best = (key, node)
    return best[1].span.start if best else line


class _ExprError(Exception):
    pass


class _Parser:
    def __init__(self, tokens: list[Token]):
        self.toks = tokens
        self.n = len(tokens)
        self.i = 0

    # -- token helpers ------------------------------------------------------

    def at_end(self) -> bool:
        return self.i >= self.n

    def peek(self, k: int = 0) -> Token | None:
        j = self.i + k
        return self.toks[j] if j < self.n else None

    def next(self) -> Token:
        i = self.i
        if i >= self.n:
            raise _ExprError("unexpected end of input")
        self.i = i + 1
        return self.toks[i]

    def at_kw(self, *words) -> bool:
        return self.i < self.n and self.toks[self.i].is_kw(*words)

    def at_op(self, *ops) -> bool:
        return self.i < self.n and self.toks[self.i].is_op(*ops)

    def expect_op(self, op) -> Token:
        tok = self.peek()
        if tok is None or not tok.is_op(op):
            raise _ExprError(f"expected '{op}'")
        return self.next()

    def last_line(self) -> int:
        i = min(self.i, self.n)
        return self.toks[i - 1].end_line if i else 1

    def text(self, start: int, end: int | None = None) -> str:
        end = self.i if end is None else end
        if end - start == 1:
            return self.toks[start].text
        toks = self.toks[start:end]
        if not toks:
            return ""
        return toks[0].text + "".join(" " + t.text if t.pre else t.text for t in toks[1:])

    def span_from(self, start_tok: int) -> LineSpan:
        last = self.last_line()
        first = self.toks[start_tok].line if start_tok < self.n else last
        return LineSpan(first, max(first, last))

    def skip_balanced(self, open_op: str, close_op: str) -> None:
        """Consume from an opening bracket through its matching closer."""
        depth = 0
        while not self.at_end():
            tok = self.next()
            if tok.is_op(open_op):
                depth += 1
            elif tok.is_op(close_op):
                depth -= 1
                if depth == 0:
                    return
        raise _ExprError(f"unbalanced '{open_op}'")

    def skip_to_semicolon(self) -> None:
        """Consume through the next top-level ';' without leaving the block."""
        depth = 0
        while not self.at_end():
            tok = self.peek()
            if depth == 0 and tok.kind is TokenKind.KEYWORD and (
                    tok.text in _BLOCK_END or tok.text == "begin"):
                # never swallow a structural keyword
                return
            self.next()
            if tok.is_op("(", "[", "{"):
                depth += 1
            elif tok.is_op(")", "]", "}"):
                depth = max(0, depth - 1)
            elif tok.is_op(";") and depth == 0:
                return

    def skip_until_kw(self, *words) -> None:
        """Consume through the next keyword in ``words`` at nesting depth 0."""
        depth = 0
        while not self.at_end():
            tok = self.next()
            if tok.kind is not TokenKind.KEYWORD:
                continue
            if depth == 0 and tok.text in words:
                return
            if tok.text in _CLOSERS:
                depth += 1
            elif tok.text in _ALL_CLOSERS:
                depth -= 1

    def opaque(self, start: int, construct: str, children=None) -> AstNode:
        if self.i == start:
            self.next()
        return AstNode(NodeKind.EXPR, self.span_from(start), children or [],
                       {"op": "opaque", "construct": construct, "text": self.text(start)})

    # -- design / module ----------------------------------------------------

    def design(self) -> list[AstNode]:
        modules = []
        while not self.at_end():
            if self.at_kw("module", "macromodule"):
                modules.append(self.module())
            elif self.at_kw(*[k for k in _CLOSERS if k not in ("module", "macromodule")]):
                opener = self.next().text
                self.skip_until_kw(*_CLOSERS[opener])
            else:
                self.next()
        return modules

    def module(self) -> AstNode:
        start = self.i
        self.next()  # module
        if self.at_kw("automatic", "static"):
            self.next()
        name_tok = self.next()
        node = AstNode(NodeKind.MODULE, LineSpan(name_tok.line, name_tok.line), [],
                       {"name": name_tok.text, "signals": {}, "params": {}, "typedefs": {}})
        while self.at_kw("import"):
            self.skip_to_semicolon()
        if self.at_op("#"):
            self.next()
            p0 = self.i
            self.skip_balanced("(", ")")
            self._collect_params(node, p0, self.i)
        if self.at_op("("):
            node.children.extend(self.port_list(node))
        if self.at_op(";"):
            self.next()

        while not self.at_end() and not self.at_kw("endmodule"):
            before = self.i
            item = self.module_item(node)
            if item is not None:
                node.children.extend(item if isinstance(item, list) else [item])
            if self.i == before:
                self.next()
        if self.at_end():
            raise ParseError("missing endmodule", self.toks[start].line)
        self.next()  # endmodule
        if self.at_op(":"):
            self.next()
            self.next()
        node.span = LineSpan(self.toks[start].line, self.last_line())
        return node

    def port_list(self, module: AstNode) -> list[AstNode]:
        open_idx = self.i
        self.skip_balanced("(", ")")
        inner = self.toks[open_idx + 1:self.i - 1]
        ports = []
        direction = None
        width = 1
        for piece in _split_top(inner, ","):
            if not piece:
                continue
            words = [t.text for t in piece if t.kind is TokenKind.KEYWORD]
            dirs = [w for w in words if w in _DIRECTIONS]
            if dirs:
                direction = dirs[0]
                width = 1
            rng = _first_range(piece)
            if rng is not None:
                width = _range_width(rng, module.attrs["params"])
            names = [t for t in piece if t.kind is TokenKind.IDENT and not _inside_brackets(piece, t)]
            if not names:
                continue
            name = names[-1]
            if direction is not None:
                module.attrs["signals"][name.text] = {"width": width, "decl": direction or "port",
                                                      "line": name.line}
            attrs = {"name": name.text, "direction": direction if (dirs or direction) else None}
            ports.append(AstNode(NodeKind.PORT, LineSpan(piece[0].line, piece[-1].end_line), [], attrs))
        return ports

    def module_item(self, module: AstNode):
        tok = self.peek()
        start = self.i
        if tok.kind is TokenKind.KEYWORD:
            word = tok.text
            if word in ("always", "always_ff", "always_comb", "always_latch"):
                return self.always_block()
            if word == "assign":
                return self.continuous_assign()
            if word in ("initial", "final"):
                self.next()
                body = self.statement()
                return AstNode(NodeKind.EXPR, self.span_from(start), body,
                               {"op": "opaque", "construct": word})
            if word in ("parameter", "localparam"):
                self.skip_to_semicolon()
                self._collect_params(module, start, self.i)
                return self.opaque(start, "decl")
            if word in _DECL_KEYWORDS:
                return self.declaration(module, start)
            if word == "typedef":
                self.skip_to_semicolon()
                self._collect_typedef(module, start, self.i)
                return self.opaque(start, "typedef")
            if word in ("function", "task", "generate", "specify", "interface", "program"):
                self.next()
                self.skip_until_kw(*_CLOSERS[word])
                if self.at_op(":"):
                    self.next()
                    self.next()
                return self.opaque(start, word)
            if word in ("if", "for", "case", "begin"):
                # bare generate constructs
                self.skip_statement()
                return self.opaque(start, "generate")
            self.skip_to_semicolon()
            return self.opaque(start, word)
        if tok.kind is TokenKind.IDENT:
            if self._looks_like_instantiation():
                return self.instantiation()
            if self._looks_like_declaration():
                return self.declaration(module, start)
        self.skip_to_semicolon()
        return self.opaque(start, "item")

    def _looks_like_instantiation(self) -> bool:
        j = self.i + 1
        while j + 1 < len(self.toks) and self.toks[j].is_op("::"):
            j += 2
        if j < len(self.toks) and self.toks[j].is_op("#"):
            # skip parameter overrides
            depth = 0
            j += 1
            while j < len(self.toks):
                t = self.toks[j]
                if t.is_op("("):
                    depth += 1
                elif t.is_op(")"):
                    depth -= 1
                    if depth == 0:
                        j += 1
                        break
                elif depth == 0:
                    j += 1
                    break
                j += 1
        if j < len(self.toks) and self.toks[j].kind is TokenKind.IDENT:
            j += 1
            while j < len(self.toks) and self.toks[j].is_op("["):
                while j < len(self.toks) and not self.toks[j].is_op("]"):
                    j += 1
                j += 1
            return j < len(self.toks) and self.toks[j].is_op("(")
        return False

    def _looks_like_declaration(self) -> bool:
        # user type: T [::T] [range] name (, | ; | = | [)
        j = self.i + 1
        while j + 1 < len(self.toks) and self.toks[j].is_op("::"):
            j += 2
        while j < len(self.toks) and self.toks[j].is_op("["):
            while j < len(self.toks) and not self.toks[j].is_op("]"):
                j += 1
            j += 1
        return (j + 1 < len(self.toks) and self.toks[j].kind is TokenKind.IDENT
                and self.toks[j + 1].is_op(",", ";", "=", "["))

    def declaration(self, module: AstNode, start: int) -> AstNode:
        self.skip_to_semicolon()
        toks = self.toks[start:self.i]
        words = [t.text for t in toks if t.kind is TokenKind.KEYWORD]
        decl = next((w for w in words if w in ("input", "output", "inout")), None) \
            or next((w for w in words if w in _DECL_KEYWORDS), None) or "user"
        width = None
        rng = _first_range(toks)
        if rng is not None:
            width = _range_width(rng, module.attrs["params"])
        else:
            int_kw = next((w for w in words if w in _INTEGER_WIDTHS), None)
            if int_kw:
                width = _INTEGER_WIDTHS[int_kw]
            elif decl == "user":
                first = toks[0].text
                width = module.attrs["typedefs"].get(first)
            else:
                width = 1
        names = []
        body = [t for t in toks if not t.is_op(";")]
        for piece in _split_top(body, ","):
            # name is the identifier before any '=' or unpacked dimension
            cut = next((k for k, t in enumerate(piece) if t.is_op("=")), len(piece))
            idents = [t for t in piece[:cut]
                      if t.kind is TokenKind.IDENT and not _inside_brackets(piece, t)]
            if idents:
                names.append(idents[-1].text)
                prev = module.attrs["signals"].get(idents[-1].text, {})
                if decl in _DIRECTIONS or "width" not in prev or width is not None:
                    module.attrs["signals"][idents[-1].text] = {
                        "width": width if width is not None else prev.get("width"),
                        "decl": decl, "line": idents[-1].line}
        for port in module.children:
            if port.kind is NodeKind.PORT and port.attrs["name"] in names and decl in _DIRECTIONS:
                port.attrs["direction"] = decl
        node = self.opaque(start, "decl")
        node.attrs["names"] = names
        return node

    def _collect_params(self, module, start, end):
        toks = [t for t in self.toks[start:end]]
        for k, tok in enumerate(toks[:-1]):
            if tok.kind is TokenKind.IDENT and toks[k + 1].is_op("="):
                j = k + 2
                depth = 0
                val = []
                while j < len(toks):
                    t = toks[j]
                    if t.is_op("(", "[", "{"):
                        depth += 1
                    elif t.is_op(")", "]", "}"):
                        if depth == 0:
                            break
                        depth -= 1
                    elif depth == 0 and t.is_op(",", ";"):
                        break
                    val.append(t)
                    j += 1
                module.attrs["params"][tok.text] = _const_eval(val, module.attrs["params"])

    def _collect_typedef(self, module, start, end):
        toks = self.toks[start:end]
        if not any(t.is_kw("enum") for t in toks):
            return
        names = [t for t in toks if t.kind is TokenKind.IDENT]
        if not names:
            return
        brace = next((k for k, t in enumerate(toks) if t.is_op("{")), len(toks))
        rng = _first_range(toks[:brace])
        width = _range_width(rng, module.attrs["params"]) if rng is not None else 32
        module.attrs["typedefs"][names[-1].text] = width

    # -- always blocks and statements ---------------------------------------

    def always_block(self) -> AstNode:
        start = self.i
        kw = self.next()
        sens_start = self.i
        items: list[tuple[str | None, str]] = []
        star = False
        if self.at_op("@"):
            self.next()
            if self.at_op("*"):
                self.next()
                star = True
            elif self.at_op("("):
                open_idx = self.i
                self.skip_balanced("(", ")")
                inner = self.toks[open_idx + 1:self.i - 1]
                if len(inner) == 1 and inner[0].is_op("*"):
                    star = True
                else:
                    for piece in _split_sens(inner):
                        edge = piece[0].text if piece and piece[0].is_kw("posedge", "negedge", "edge") else None
                        sig = piece[1:] if edge else piece
                        items.append((edge, " ".join(t.text for t in sig)))
            else:
                items.append((None, self.next().text))
            sens = AstNode(NodeKind.SENS_LIST, self.span_from(sens_start), [],
                           {"items": items, "star": star})
        else:
            sens = AstNode(NodeKind.SENS_LIST, LineSpan(kw.line, kw.line), [],
                           {"items": [], "star": False, "implicit": True})
        body = self.statement()
        sequential = kw.text == "always_ff" or any(edge for edge, _ in items)
        return AstNode(NodeKind.ALWAYS_BLOCK, self.span_from(start), [sens, *body],
                       {"keyword": kw.text, "sequential": sequential})

    def continuous_assign(self) -> list[AstNode]:
        start = self.i
        self.next()  # assign
        nodes = []
        while True:
            s0 = self.i
            try:
                lhs = self.lvalue()
                self.expect_op("=")
                rhs = self.expr()
            except _ExprError:
                self.i = s0
                self.skip_to_semicolon()
                return nodes + [self.opaque(start, "assign")]
            nodes.append(AstNode(NodeKind.ASSIGNMENT, self.span_from(s0), [lhs, rhs],
                                 {"blocking": True, "continuous": True,
                                  "lhs": lhs.attrs["text"], "targets": _targets(lhs)}))
            if self.at_op(","):
                self.next()
                continue
            break
        if self.at_op(";"):
            self.next()
        return nodes

    def skip_statement(self) -> None:
        """Consume one statement structurally without building nodes."""
        if self.at_kw("begin"):
            self.next()
            self.skip_until_kw("end")
            if self.at_op(":"):
                self.next()
                self.next()
            return
        if self.at_kw("case", "casex", "casez"):
            self.next()
            self.skip_until_kw("endcase")
            return
        if self.at_kw("if", "for", "while", "repeat"):
            self.next()
            if self.at_op("("):
                self.skip_balanced("(", ")")
            self.skip_statement()
            if self.at_kw("else"):
                self.next()
                self.skip_statement()
            return
        self.skip_to_semicolon()

    def statement(self) -> list[AstNode]:
        """Parse one statement; a begin/end block yields its inner statements."""
        tok = self.peek()
        if tok is None:
            return []
        start = self.i
        if tok.kind is TokenKind.KEYWORD:
            word = tok.text
            if word in _BLOCK_END:
                return []
            if word in ("begin", "fork"):
                return self.block()
            if word in ("unique", "unique0", "priority"):
                self.next()
                return self.statement()
            if word == "if":
                return [self.if_stmt()]
            if word in ("case", "casex", "casez"):
                return [self.case_stmt()]
            if word in ("for", "while", "repeat", "forever", "do"):
                return [self.loop_stmt()]
            if word == "wait":
                self.next()
                if self.at_op("("):
                    self.skip_balanced("(", ")")
                return self.statement()
            if word in _DECL_KEYWORDS:
                self.skip_to_semicolon()
                return [self.opaque(start, "decl")]
            if word == "else":
                self.next()
                return [self.opaque(start, "stray-else")]
            self.skip_to_semicolon()
            return [self.opaque(start, word)]
        if tok.is_op(";"):
            self.next()
            return []
        if tok.is_op("#"):
            self.next()
            self._skip_delay_value()
            return self.statement()
        if tok.is_op("@"):
            self.next()
            if self.at_op("("):
                self.skip_balanced("(", ")")
            elif not self.at_end():
                self.next()
            return self.statement()
        if tok.is_op("->"):
            self.skip_to_semicolon()
            return [self.opaque(start, "event")]
        if tok.kind is TokenKind.IDENT and self._looks_like_declaration():
            self.skip_to_semicolon()
            return [self.opaque(start, "decl")]
        return [self.assignment_or_call()]

    def _skip_delay_value(self):
        if self.at_op("("):
            self.skip_balanced("(", ")")
        elif not self.at_end():
            self.next()

    def block(self) -> list[AstNode]:
        opener = self.next().text
        closers = _CLOSERS[opener]
        if self.at_op(":"):
            self.next()
            self.next()
        out = []
        while not self.at_end() and not self.at_kw(*closers):
            before = self.i
            out.extend(self.statement())
            if self.i == before:
                # a foreign closer or junk: swallow it so we always progress
                out.append(self.opaque(before, "junk"))
        if not self.at_end():
            self.next()
            if self.at_op(":"):
                self.next()
                self.next()
        return out

    def if_stmt(self) -> AstNode:
        start = self.i
        self.next()  # if
        try:
            self.expect_op("(")
            cond = self.expr()
            self.expect_op(")")
        except _ExprError:
            self.i = start + 1
            c0 = self.i
            if self.at_op("("):
                self.skip_balanced("(", ")")
            cond = self.opaque(c0, "condition")
        then = self.statement()
        other: list[AstNode] = []
        if self.at_kw("else"):
            self.next()
            other = self.statement()
        return AstNode(NodeKind.IF_STMT, self.span_from(start), [cond, *then, *other],
                       {"n_then": len(then), "has_else": bool(other),
                        "cond_text": cond.attrs.get("text", "")})

    def case_stmt(self) -> AstNode:
        start = self.i
        kw = self.next().text
        s0 = self.i
        try:
            self.expect_op("(")
            sel = self.expr()
            self.expect_op(")")
        except _ExprError:
            self.i = s0
            if self.at_op("("):
                self.skip_balanced("(", ")")
            sel = self.opaque(s0, "selector")
        if self.at_kw("inside"):
            self.next()
        items = []
        while not self.at_end() and not self.at_kw("endcase"):
            before = self.i
            items.append(self.case_item())
            if self.i == before:
                self.next()
        if not self.at_end():
            self.next()
        return AstNode(NodeKind.CASE_STMT, self.span_from(start), [sel, *items],
                       {"keyword": kw, "selector": sel.attrs.get("text", ""),
                        "has_default": any(i.attrs["default"] for i in items)})

    def case_item(self) -> AstNode:
        start = self.i
        labels: list[str] = []
        if self.at_kw("default"):
            self.next()
            if self.at_op(":"):
                self.next()
            is_default = True
        else:
            is_default = False
            depth = 0
            label_start = self.i
            while not self.at_end():
                tok = self.peek()
                if tok.is_op("(", "[", "{"):
                    depth += 1
                elif tok.is_op(")", "]", "}"):
                    depth -= 1
                elif depth == 0 and tok.is_op(","):
                    labels.append(self.text(label_start))
                    self.next()
                    label_start = self.i
                    continue
                elif depth == 0 and tok.is_op(":"):
                    labels.append(self.text(label_start))
                    self.next()
                    break
                elif depth == 0 and tok.kind is TokenKind.KEYWORD and tok.text in _BLOCK_END:
                    break
                self.next()
        body = self.statement()
        return AstNode(NodeKind.CASE_ITEM, self.span_from(start), body,
                       {"labels": labels, "default": is_default})

    def loop_stmt(self) -> AstNode:
        start = self.i
        word = self.next().text
        if word == "do":
            body = self.statement()
            if self.at_kw("while"):
                self.skip_to_semicolon()
            return AstNode(NodeKind.EXPR, self.span_from(start), body,
                           {"op": "opaque", "construct": "loop"})
        if self.at_op("("):
            self.skip_balanced("(", ")")
        body = self.statement()
        return AstNode(NodeKind.EXPR, self.span_from(start), body,
                       {"op": "opaque", "construct": "loop"})

    def assignment_or_call(self) -> AstNode:
        start = self.i
        try:
            lhs = self.lvalue()
            tok = self.peek()
            if tok is not None and tok.is_op("++", "--"):
                self.next()
                node = AstNode(NodeKind.ASSIGNMENT, self.span_from(start), [lhs],
                               {"blocking": True, "lhs": lhs.attrs["text"], "targets": _targets(lhs)})
            elif tok is not None and tok.kind is TokenKind.OPERATOR and tok.text in _ASSIGN_OPS:
                self.next()
                if self.at_op("#"):
                    self.next()
                    self._skip_delay_value()
                elif self.at_op("@"):
                    self.next()
                    if self.at_op("("):
                        self.skip_balanced("(", ")")
                rhs = self.expr()
                node = AstNode(NodeKind.ASSIGNMENT, self.span_from(start), [lhs, rhs],
                               {"blocking": tok.text != "<=", "lhs": lhs.attrs["text"],
                                "targets": _targets(lhs)})
            elif lhs.attrs.get("op") in ("call", "id", "scoped", "member"):
                node = AstNode(NodeKind.EXPR, self.span_from(start), [lhs],
                               {"op": "opaque", "construct": "call", "text": lhs.attrs["text"]})
            else:
                raise _ExprError("not a statement")
            if not self.at_op(";"):
                raise _ExprError("missing ';'")
            self.next()
            node.span = self.span_from(start)
            return node
        except _ExprError:
            self.i = start
            self.skip_to_semicolon()
            return self.opaque(start, "statement")

    def instantiation(self) -> AstNode:
        start = self.i
        module_name = self.next().text
        while self.at_op("::"):
            self.next()
            module_name += "::" + self.next().text
        params = {}
        if self.at_op("#"):
            self.next()
            if self.at_op("("):
                p0 = self.i
                self.skip_balanced("(", ")")
                params = _named_connections(self.toks[p0 + 1:self.i - 1])[0]
            else:
                self.next()
        instance = self.next().text
        while self.at_op("["):
            self.skip_balanced("[", "]")
        c0 = self.i
        self.skip_balanced("(", ")")
        inner = self.toks[c0 + 1:self.i - 1]
        conns, positional = _named_connections(inner)
        children = []
        for piece in _split_top(inner, ","):
            if piece:
                children.append(AstNode(NodeKind.EXPR, LineSpan(piece[0].line, piece[-1].end_line), [],
                                        {"op": "opaque", "construct": "connection",
                                         "text": _join(piece)}))
        # further instances in the same statement are folded into this node
        self.skip_to_semicolon()
        return AstNode(NodeKind.INSTANTIATION, self.span_from(start), children,
                       {"module": module_name, "name": instance, "connections": conns,
                        "positional": positional, "parameters": params})

    # -- expressions --------------------------------------------------------

    def lvalue(self) -> AstNode:
        if self.at_op("{"):
            return self.primary()
        return self.postfix(self.primary_atom())

    def expr(self) -> AstNode:
        start = self.i
        cond = self.binary(1)
        if self.at_op("?"):
            self.next()
            a = self.expr()
            if not self.at_op(":"):
                raise _ExprError("expected ':' in conditional")
            self.next()
            b = self.expr()
            return self._mk(start, "?:", [cond, a, b])
        return cond

    def binary(self, min_prec: int) -> AstNode:
        start = self.i
        left = self.unary()
        while True:
            tok = self.peek()
            if tok is None or tok.kind is not TokenKind.OPERATOR:
                break
            prec = _BINARY_PREC.get(tok.text)
            if prec is None or prec < min_prec:
                break
            self.next()
            right = self.binary(prec + 1 if tok.text != "**" else prec)
            left = self._mk(start, tok.text, [left, right], binary=True)
        return left

    def unary(self) -> AstNode:
        start = self.i
        tok = self.peek()
        if tok is not None and tok.kind is TokenKind.OPERATOR and tok.text in _UNARY:
            self.next()
            operand = self.unary()
            return self._mk(start, "u" + tok.text, [operand])
        return self.postfix(self.primary())

    def primary(self) -> AstNode:
        start = self.i
        tok = self.peek()
        if tok is None:
            raise _ExprError("unexpected end of expression")
        if tok.is_op("("):
            self.next()
            inner = self.expr()
            self.expect_op(")")
            return self._mk(start, "paren", [inner])
        if tok.is_op("{"):
            self.next()
            parts = []
            if self.at_op("}"):
                self.next()
                return self._mk(start, "concat", parts)
            first = self.expr()
            if self.at_op("{"):
                # replication {N{...}}
                inner = self.primary()
                self.expect_op("}")
                return self._mk(start, "replicate", [first, inner])
            parts.append(first)
            while self.at_op(","):
                self.next()
                parts.append(self.expr())
            self.expect_op("}")
            return self._mk(start, "concat", parts)
        if tok.is_op("'"):
            # '{...} assignment pattern or '(..)
            self.next()
            if self.at_op("{"):
                self.skip_balanced("{", "}")
            elif self.at_op("("):
                self.skip_balanced("(", ")")
            return self._mk(start, "lit", [])
        if tok.kind in (TokenKind.NUMBER, TokenKind.STRING):
            self.next()
            return self._mk(start, "lit", [])
        return self.primary_atom()

    def primary_atom(self) -> AstNode:
        start = self.i
        tok = self.peek()
        if tok is None or tok.kind not in (TokenKind.IDENT, TokenKind.KEYWORD):
            raise _ExprError(f"unexpected '{tok.text if tok else 'EOF'}'")
        if tok.kind is TokenKind.KEYWORD and tok.text not in ("signed", "unsigned", "int", "logic", "bit"):
            raise _ExprError(f"unexpected keyword '{tok.text}'")
        self.next()
        if self.at_op("::"):
            name = tok.text
            while self.at_op("::"):
                self.next()
                name += "::" + self.next().text
            node = self._mk(start, "scoped", [])
            node.attrs["name"] = name
            return node
        node = self._mk(start, "id", [])
        node.attrs["name"] = tok.text
        return node

    def postfix(self, node: AstNode) -> AstNode:
        start = self._start_of(node)
        while True:
            if self.at_op("["):
                self.next()
                idx = self.expr()
                kids = [node, idx]
                if self.at_op(":", "+:", "-:"):
                    self.next()
                    kids.append(self.expr())
                self.expect_op("]")
                node = self._mk(start, "index", kids)
            elif self.at_op(".") and self.peek(1) is not None and self.peek(1).kind is TokenKind.IDENT:
                self.next()
                member = self.next().text
                node = self._mk(start, "member", [node])
                node.attrs["member"] = member
            elif self.at_op("(") and node.attrs.get("op") in ("id", "scoped"):
                self.next()
                args = []
                if not self.at_op(")"):
                    args.append(self.expr())
                    while self.at_op(","):
                        self.next()
                        args.append(self.expr())
                self.expect_op(")")
                name = node.attrs["name"]
                node = self._mk(start, "call", args)
                node.attrs["name"] = name
            elif self.at_op("'") and self.peek(1) is not None and self.peek(1).is_op("("):
                self.next()
                self.next()
                inner = self.expr()
                self.expect_op(")")
                node = self._mk(start, "cast", [node, inner])
            else:
                return node

    def _start_of(self, node: AstNode) -> int:
        return node.attrs["_start"]

    def _mk(self, start: int, op: str, children: list[AstNode], binary: bool = False) -> AstNode:
        node = AstNode(NodeKind.EXPR, self.span_from(start), children,
                       {"op": op, "text": self.text(start), "_start": start})
        if binary:
            node.attrs["binary"] = True
        return node


# -- helpers ------------------------------------------------------------------

def _split_top(tokens: list[Token], sep: str) -> list[list[Token]]:
    pieces: list[list[Token]] = [[]]
    depth = 0
    for tok in tokens:
        if tok.is_op("(", "[", "{"):
            depth += 1
        elif tok.is_op(")", "]", "}"):
            depth -= 1
        if depth == 0 and tok.is_op(sep):
            pieces.append([])
            continue
        pieces[-1].append(tok)
    return pieces


def _split_sens(tokens: list[Token]) -> list[list[Token]]:
    pieces: list[list[Token]] = [[]]
    depth = 0
    for tok in tokens:
        if tok.is_op("(", "[", "{"):
            depth += 1
        elif tok.is_op(")", "]", "}"):
            depth -= 1
        if depth == 0 and (tok.is_op(",") or tok.is_kw("or")):
            pieces.append([])
            continue
        pieces[-1].append(tok)
    return [p for p in pieces if p]


def _inside_brackets(piece: list[Token], target: Token) -> bool:
    depth = 0
    for tok in piece:
        if tok is target:
            return depth > 0
        if tok.is_op("[", "(", "{"):
            depth += 1
        elif tok.is_op("]", ")", "}"):
            depth -= 1
    return False


def _first_range(tokens: list[Token]) -> list[Token] | None:
    """Tokens between the first top-level '[' and its ']'."""
    for k, tok in enumerate(tokens):
        if tok.is_op("["):
            depth = 0
            for j in range(k, len(tokens)):
                if tokens[j].is_op("["):
                    depth += 1
                elif tokens[j].is_op("]"):
                    depth -= 1
                    if depth == 0:
                        return tokens[k + 1:j]
            return None
        if tok.kind is TokenKind.IDENT and k > 0 and not tokens[k - 1].is_op("::"):
            # range after the declared name is an unpacked dimension
            if any(t.kind is TokenKind.KEYWORD for t in tokens[:k]) or k > 1:
                return None
    return None


def _range_width(rng: list[Token], params: dict) -> int | None:
    parts = _split_top(rng, ":")
    if len(parts) != 2:
        return None
    msb = _const_eval(parts[0], params)
    lsb = _const_eval(parts[1], params)
    if msb is None or lsb is None:
        return None
    return abs(msb - lsb) + 1


def _const_eval(tokens: list[Token], params: dict) -> int | None:
    """Evaluate a constant integer expression; None when not constant."""
    if not tokens:
        return None
    try:
        node = _Parser(list(tokens)).expr()
    except (_ExprError, IndexError):
        return None
    return _eval_node(node, params)


def _eval_node(node: AstNode, params: dict) -> int | None:
    op = node.attrs.get("op")
    kids = node.children
    if op == "lit":
        return verilog_int(node.attrs["text"])
    if op == "id":
        return params.get(node.attrs["name"])
    if op == "paren":
        return _eval_node(kids[0], params)
    if op == "call" and node.attrs.get("name") == "$clog2" and kids:
        v = _eval_node(kids[0], params)
        return None if v is None else max(0, (v - 1).bit_length())
    if op in ("u-", "u+") and kids:
        v = _eval_node(kids[0], params)
        return None if v is None else (-v if op == "u-" else v)
    if node.attrs.get("binary"):
        a, b = (_eval_node(k, params) for k in kids)
        if a is None or b is None:
            return None
        fns = {"+": lambda: a + b, "-": lambda: a - b, "*": lambda: a * b,
               "/": lambda: a // b if b else None, "%": lambda: a % b if b else None,
               "**": lambda: a ** b, "<<": lambda: a << b, ">>": lambda: a >> b}
        fn = fns.get(op)
        return fn() if fn else None
    return None


def verilog_int(text: str) -> int | None:
    """Value of a Verilog integer literal, or None if it has x/z digits."""
    t = text.replace("_", "").replace(" ", "")
    if "'" not in t:
        return int(t) if t.isdigit() else None
    _, rest = t.split("'", 1)
    rest = rest.lstrip("sS")
    if not rest:
        return None
    base = {"b": 2, "o": 8, "d": 10, "h": 16}.get(rest[0].lower())
    if base is None:
        return 0 if rest in ("0",) else (1 if rest == "1" else None)
    digits = rest[1:]
    try:
        return int(digits, base)
    except ValueError:
        return None


def _join(tokens: list[Token]) -> str:
    return "".join((" " if k and t.pre else "") + t.text for k, t in enumerate(tokens))


def _named_connections(tokens: list[Token]) -> tuple[dict[str, str], list[str]]:
    named: dict[str, str] = {}
    positional: list[str] = []
    for piece in _split_top(tokens, ","):
        if not piece:
            continue
        if piece[0].is_op(".") and len(piece) >= 2:
            if piece[1].is_op("*"):
                named[".*"] = ".*"
                continue
            port = piece[1].text
            if len(piece) >= 3 and piece[2].is_op("("):
                named[port] = _join(piece[3:-1]).strip()
            else:
                named[port] = port
        else:
            positional.append(_join(piece).strip())
    return named, positional


def _targets(lhs: AstNode) -> list[str]:
    """Base names written by an lvalue."""
    op = lhs.attrs.get("op")
    if op == "id":
        return [lhs.attrs["name"]]
    if op in ("index", "member"):
        return _targets(lhs.children[0])
    if op == "concat":
        return [n for k in lhs.children for n in _targets(k)]
    if op == "scoped":
        return [lhs.attrs["name"]]
    return []
