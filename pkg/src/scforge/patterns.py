"""Keyword-level vulnerability candidate extraction over token streams.

Matching happens on lexer output, never on raw text, so occurrences inside
comments or string literals are invisible here. The per-type features mirror
the evidence the annotation prompts ask generator models to check.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

from scforge.corpus import ContractUnit, Token, TokenCategory


class VulnType(Enum):
    REENTRANCY = "reentrancy"
    TIMESTAMP_DEPENDENCY = "timestamp_dependency"
    INTEGER_OVERFLOW_UNDERFLOW = "integer_overflow_underflow"
    DELEGATECALL = "delegatecall"

    @property
    def code(self) -> str:
        return {
            VulnType.REENTRANCY: "RE",
            VulnType.TIMESTAMP_DEPENDENCY: "TD",
            VulnType.INTEGER_OVERFLOW_UNDERFLOW: "IO",
            VulnType.DELEGATECALL: "DE",
        }[self]

    @classmethod
    def parse(cls, text: str) -> "VulnType":
        needle = text.strip().lower().replace("-", "_")
        for vt in cls:
            if needle in (vt.value, vt.code.lower(), vt.name.lower()):
                return vt
        raise ValueError(f"unknown vulnerability type {text!r}")


@dataclass(frozen=True)
class CandidateHit:
    unit_id: str
    vuln_type: VulnType
    matched_feature: str
    lines: tuple[int, ...]

    def __post_init__(self):
        if not self.lines:
            raise ValueError("a hit must carry at least one line")


FEATURES = {
    VulnType.REENTRANCY: ("call.value", ".call{value:"),
    VulnType.TIMESTAMP_DEPENDENCY: ("block.timestamp", "now"),
    VulnType.DELEGATECALL: (".delegatecall",),
    VulnType.INTEGER_OVERFLOW_UNDERFLOW: ("integer_arithmetic", "safemath_absent", "safemath_present"),
}

_ARITHMETIC_OPS = {"+", "-", "*", "+=", "-=", "*="}
_INT_TYPE_PREFIXES = ("uint", "int")


def _is_ident(tok: Token, name: str) -> bool:
    return tok.category is TokenCategory.IDENTIFIER and tok.lexeme == name


def _is_punct(tok: Token, lexeme: str) -> bool:
    return tok.category is TokenCategory.PUNCTUATION and tok.lexeme == lexeme


def _is_int_type(tok: Token) -> bool:
    return tok.category is TokenCategory.KEYWORD and tok.lexeme.startswith(_INT_TYPE_PREFIXES)


def extract_candidates(unit: ContractUnit, vuln_type: VulnType) -> list[CandidateHit]:
    toks = unit.tokens
    hits: list[CandidateHit] = []

    def hit(feature: str, lines: list[int]) -> None:
        hits.append(CandidateHit(unit.unit_id, vuln_type, feature, tuple(dict.fromkeys(lines))))

    if vuln_type is VulnType.REENTRANCY:
        for i in range(len(toks) - 2):
            if _is_ident(toks[i], "call") and _is_punct(toks[i + 1], ".") and _is_ident(toks[i + 2], "value"):
                hit("call.value", [toks[i].line])
        for i in range(len(toks) - 4):
            if (
                _is_punct(toks[i], ".")
                and _is_ident(toks[i + 1], "call")
                and _is_punct(toks[i + 2], "{")
                and _is_ident(toks[i + 3], "value")
                and toks[i + 4].lexeme == ":"
            ):
                hit(".call{value:", [toks[i + 1].line])

    elif vuln_type is VulnType.TIMESTAMP_DEPENDENCY:
        for i in range(len(toks)):
            if (
                i + 2 < len(toks)
                and _is_ident(toks[i], "block")
                and _is_punct(toks[i + 1], ".")
                and _is_ident(toks[i + 2], "timestamp")
            ):
                hit("block.timestamp", [toks[i].line])
            elif _is_ident(toks[i], "now") and (i == 0 or not _is_punct(toks[i - 1], ".")):
                hit("now", [toks[i].line])

    elif vuln_type is VulnType.DELEGATECALL:
        for i in range(len(toks) - 1):
            if _is_punct(toks[i], ".") and _is_ident(toks[i + 1], "delegatecall"):
                hit(".delegatecall", [toks[i + 1].line])

    elif vuln_type is VulnType.INTEGER_OVERFLOW_UNDERFLOW:
        typed_lines = _integer_arithmetic_lines(toks)
        if typed_lines:
            hit("integer_arithmetic", typed_lines)
        any_arith = sorted(
            {t.line for t in toks if t.category is TokenCategory.OPERATOR and t.lexeme in _ARITHMETIC_OPS}
        )
        if any_arith:
            safemath_lines = [t.line for t in toks if _is_ident(t, "SafeMath")]
            if safemath_lines:
                hit("safemath_present", safemath_lines)
            else:
                hit("safemath_absent", any_arith)
    return hits


def _integer_arithmetic_lines(toks: tuple[Token, ...]) -> list[int]:
    """Lines of statements that mix {+,-,*} with a uint/int-typed declaration.

    A statement is the token run between ';' and brace boundaries; this is a
    deliberately shallow notion of scope, adequate for candidate surfacing.
    """
    lines: list[int] = []
    stmt_ops: list[int] = []
    stmt_has_int = False
    for tok in toks:
        if tok.lexeme in (";", "{", "}") and tok.category is TokenCategory.PUNCTUATION:
            if stmt_has_int:
                lines.extend(stmt_ops)
            stmt_ops = []
            stmt_has_int = False
            continue
        if _is_int_type(tok):
            stmt_has_int = True
        elif tok.category is TokenCategory.OPERATOR and tok.lexeme in _ARITHMETIC_OPS:
            stmt_ops.append(tok.line)
    if stmt_has_int:
        lines.extend(stmt_ops)
    return sorted(dict.fromkeys(lines))


def rule_label(unit: ContractUnit, vuln_type: VulnType) -> int:
    """Naive keyword-presence baseline label: 1 iff any feature hit exists."""
    return 1 if extract_candidates(unit, vuln_type) else 0
