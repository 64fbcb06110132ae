"""Verilog front end: lexer, line-spanned AST and structural helpers."""

from .lexer import Token, TokenKind, code_tokens, detokenize, tokenize
from .nodes import AstNode, LineSpan, NodeKind, identifiers
from .parser import (
    check_balance,
    enclosing_block_start,
    parse_design,
    parse_expression,
    scope_balance,
    verilog_int,
)

__all__ = [
    "AstNode", "LineSpan", "NodeKind", "Token", "TokenKind", "check_balance",
    "code_tokens", "detokenize", "enclosing_block_start", "identifiers",
    "parse_design", "parse_expression", "scope_balance", "tokenize", "verilog_int",
]
