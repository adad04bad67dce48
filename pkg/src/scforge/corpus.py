"""Raw Solidity ingestion: lexing, unit decomposition, and filename grouping.

A "unit" is one top-level contract/library/interface/abstract-contract
definition carved out of a source file; units are the atoms the rest of the
pipeline (dedup, extraction, annotation) operates on.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path


class CorpusError(Exception):
    pass


class RootNotFound(CorpusError):
    pass


class LexError(CorpusError):
    def __init__(self, message: str, line: int):
        super().__init__(f"{message} (line {line})")
        self.line = line


class UnterminatedString(LexError):
    def __init__(self, line: int):
        super().__init__("unterminated string literal", line)


class UnterminatedComment(LexError):
    def __init__(self, line: int):
        super().__init__("unterminated block comment", line)


class UnbalancedBraces(CorpusError):
    def __init__(self, line: int):
        super().__init__(f"unbalanced braces (line {line})")
        self.line = line


class TokenCategory(str, Enum):
    KEYWORD = "keyword"
    IDENTIFIER = "identifier"
    NUMBER = "number"
    STRING_LITERAL = "string_literal"
    OPERATOR = "operator"
    PUNCTUATION = "punctuation"


class UnitKind(str, Enum):
    CONTRACT = "contract"
    LIBRARY = "library"
    INTERFACE = "interface"
    ABSTRACT_CONTRACT = "abstract_contract"


@dataclass(frozen=True)
class Token:
    lexeme: str
    category: TokenCategory
    line: int
    col: int


@dataclass(frozen=True)
class SourceFile:
    path: str
    filename: str
    content: str

    @property
    def byte_len(self) -> int:
        return len(self.content.encode("utf-8"))


@dataclass(frozen=True)
class IngestIssue:
    path: str
    kind: str
    detail: str


def _elementary_types() -> set[str]:
    names = {"address", "bool", "string", "bytes", "byte", "uint", "int", "fixed", "ufixed"}
    for width in range(8, 257, 8):
        names.add(f"uint{width}")
        names.add(f"int{width}")
    for width in range(1, 33):
        names.add(f"bytes{width}")
    return names


# Reserved words and builtin statement-level functions; member names such as
# call/value/delegatecall and the `now` alias deliberately stay identifiers so
# pattern extraction can match them as such.
KEYWORDS = _elementary_types() | {
    "pragma", "solidity", "import", "contract", "library", "interface", "abstract",
    "function", "modifier", "event", "error", "struct", "enum", "mapping", "constructor",
    "fallback", "receive", "public", "private", "internal", "external", "pure", "view",
    "payable", "constant", "immutable", "virtual", "override", "indexed", "anonymous",
    "returns", "return", "if", "else", "for", "while", "do", "break", "continue",
    "throw", "emit", "new", "delete", "using", "is", "memory", "storage", "calldata",
    "require", "assert", "revert", "try", "catch", "unchecked", "assembly", "type",
    "true", "false", "wei", "gwei", "szabo", "finney", "ether",
    "seconds", "minutes", "hours", "days", "weeks", "years", "var",
}

_OPERATORS_3 = (">>=", "<<=")
_OPERATORS_2 = ("**", "++", "--", "+=", "-=", "*=", "/=", "%=", "|=", "&=", "^=",
                "==", "!=", "<=", ">=", "&&", "||", "<<", ">>", "=>")
_OPERATORS_1 = set("=+-*/%!<>&|^~?:")
_PUNCTUATION = set("{}()[];,.")
_IDENT_START = set("abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ_$")
_IDENT_CONT = _IDENT_START | set("0123456789")
_DIGITS = set("0123456789")
_HEX_DIGITS = set("0123456789abcdefABCDEF_")


def _lex(source: str) -> list[tuple[Token, int, int]]:
    """Tokenize, returning (token, start_offset, end_offset) triples."""
    out: list[tuple[Token, int, int]] = []
    i, line, col = 0, 1, 1
    n = len(source)

    def advance(text: str) -> None:
        nonlocal line, col
        newlines = text.count("\n")
        if newlines:
            line += newlines
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)

    while i < n:
        ch = source[i]
        if ch in " \t\r\n\f\v":
            advance(ch)
            i += 1
            continue
        if source.startswith("//", i):
            end = source.find("\n", i)
            end = n if end < 0 else end
            advance(source[i:end])
            i = end
            continue
        if source.startswith("/*", i):
            end = source.find("*/", i + 2)
            if end < 0:
                raise UnterminatedComment(line)
            advance(source[i : end + 2])
            i = end + 2
            continue
        start, start_line, start_col = i, line, col
        if ch in ("'", '"'):
            j = i + 1
            while j < n:
                c = source[j]
                if c == "\\":
                    j += 2
                    continue
                if c == "\n":
                    raise UnterminatedString(start_line)
                if c == ch:
                    break
                j += 1
            if j >= n:
                raise UnterminatedString(start_line)
            lexeme = source[start : j + 1]
            category = TokenCategory.STRING_LITERAL
            i = j + 1
        elif ch in _IDENT_START:
            j = i + 1
            while j < n and source[j] in _IDENT_CONT:
                j += 1
            lexeme = source[start:j]
            category = TokenCategory.KEYWORD if lexeme in KEYWORDS else TokenCategory.IDENTIFIER
            i = j
        elif ch in _DIGITS:
            j = i + 1
            if ch == "0" and j < n and source[j] in "xX":
                j += 1
                while j < n and source[j] in _HEX_DIGITS:
                    j += 1
            else:
                while j < n and (source[j] in _DIGITS or source[j] == "_"):
                    j += 1
                if j < n and source[j] == "." and j + 1 < n and source[j + 1] in _DIGITS:
                    j += 1
                    while j < n and source[j] in _DIGITS:
                        j += 1
                if j < n and source[j] in "eE":
                    k = j + 1
                    if k < n and source[k] in "+-":
                        k += 1
                    if k < n and source[k] in _DIGITS:
                        j = k
                        while j < n and source[j] in _DIGITS:
                            j += 1
            lexeme = source[start:j]
            category = TokenCategory.NUMBER
            i = j
        elif source[i : i + 3] in _OPERATORS_3:
            lexeme = source[i : i + 3]
            category = TokenCategory.OPERATOR
            i += 3
        elif source[i : i + 2] in _OPERATORS_2:
            lexeme = source[i : i + 2]
            category = TokenCategory.OPERATOR
            i += 2
        elif ch in _PUNCTUATION:
            lexeme = ch
            category = TokenCategory.PUNCTUATION
            i += 1
        else:
            # Covers single-char operators plus any stray character, so every
            # non-comment, non-whitespace character lands in exactly one token.
            lexeme = ch
            category = TokenCategory.OPERATOR
            i += 1
        out.append((Token(lexeme, category, start_line, start_col), start, i))
        advance(lexeme)
    return out


def lex_solidity(source: str) -> list[Token]:
    """Tokenize Solidity source; comments and whitespace produce no tokens."""
    return [tok for tok, _, _ in _lex(source)]


def unit_id_for(source: str) -> str:
    return hashlib.sha256(source.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class ContractUnit:
    unit_id: str
    origin_path: str
    filename: str
    kind: UnitKind
    source: str
    tokens: tuple[Token, ...] = field(repr=False, compare=False, default=())

    @classmethod
    def from_source(cls, source: str, origin_path: str, filename: str, kind: UnitKind) -> "ContractUnit":
        return cls(
            unit_id=unit_id_for(source),
            origin_path=origin_path,
            filename=filename,
            kind=kind,
            source=source,
            tokens=tuple(lex_solidity(source)),
        )

    @property
    def token_set(self) -> frozenset[str]:
        return frozenset(tok.lexeme for tok in self.tokens)

    @property
    def line_count(self) -> int:
        return self.source.count("\n") + 1


_UNIT_KEYWORDS = {
    "contract": UnitKind.CONTRACT,
    "library": UnitKind.LIBRARY,
    "interface": UnitKind.INTERFACE,
}


def decompose_units(file: SourceFile) -> list[ContractUnit]:
    """Split a source file into its top-level definition units.

    Pragma/import prologue is not part of any unit. Returns an empty list when
    the file declares nothing at the top level.
    """
    lexed = _lex(file.content)
    units: list[ContractUnit] = []
    depth = 0
    idx = 0
    while idx < len(lexed):
        tok, start, _ = lexed[idx]
        if tok.lexeme == "{" and tok.category is TokenCategory.PUNCTUATION:
            depth += 1
        elif tok.lexeme == "}" and tok.category is TokenCategory.PUNCTUATION:
            depth -= 1
        elif depth == 0 and tok.category is TokenCategory.KEYWORD:
            kind = None
            if tok.lexeme in _UNIT_KEYWORDS:
                kind = _UNIT_KEYWORDS[tok.lexeme]
            elif tok.lexeme == "abstract" and idx + 1 < len(lexed) and lexed[idx + 1][0].lexeme == "contract":
                kind = UnitKind.ABSTRACT_CONTRACT
            if kind is not None:
                end_idx = _close_of_unit(lexed, idx)
                end_offset = lexed[end_idx][2]
                source = file.content[start:end_offset]
                units.append(ContractUnit.from_source(source, file.path, file.filename, kind))
                idx = end_idx + 1
                continue
        idx += 1
    return units


def _close_of_unit(lexed: list[tuple[Token, int, int]], start_idx: int) -> int:
    """Index of the closing brace of the unit starting at start_idx."""
    open_line = lexed[start_idx][0].line
    depth = 0
    for j in range(start_idx, len(lexed)):
        lexeme = lexed[j][0].lexeme
        if lexeme == "{":
            depth += 1
        elif lexeme == "}":
            depth -= 1
            if depth == 0:
                return j
    raise UnbalancedBraces(open_line)


def ingest_directory(root: str | Path, glob: str = "**/*.sol") -> tuple[list[SourceFile], list[IngestIssue]]:
    """Read every file matching glob under root, in deterministic path order.

    Files that fail UTF-8 decoding are reported as issues, not silently dropped.
    """
    root = Path(root)
    if not root.is_dir():
        raise RootNotFound(str(root))
    files: list[SourceFile] = []
    issues: list[IngestIssue] = []
    for path in sorted(p for p in root.glob(glob) if p.is_file()):
        try:
            content = path.read_bytes().decode("utf-8")
        except UnicodeDecodeError as exc:
            issues.append(IngestIssue(str(path), "decode_error", str(exc)))
            continue
        files.append(SourceFile(path=str(path), filename=path.name, content=content))
    return files, issues


def build_units(files: list[SourceFile]) -> tuple[list[ContractUnit], list[IngestIssue]]:
    """Decompose every file, collecting per-file problems instead of aborting."""
    units: list[ContractUnit] = []
    issues: list[IngestIssue] = []
    for file in files:
        try:
            found = decompose_units(file)
        except LexError as exc:
            issues.append(IngestIssue(file.path, "lex_error", str(exc)))
            continue
        except UnbalancedBraces as exc:
            issues.append(IngestIssue(file.path, "unbalanced_braces", str(exc)))
            continue
        if not found:
            issues.append(IngestIssue(file.path, "no_units_found", "no top-level definitions"))
        units.extend(found)
    return units, issues


def group_by_filename(units: list[ContractUnit]) -> dict[str, list[ContractUnit]]:
    """Partition units by filename, preserving input order within each group."""
    groups: dict[str, list[ContractUnit]] = {}
    for unit in units:
        groups.setdefault(unit.filename, []).append(unit)
    return groups


def write_units(units: list[ContractUnit], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for unit in units:
            row = {
                "unit_id": unit.unit_id,
                "origin_path": unit.origin_path,
                "filename": unit.filename,
                "kind": unit.kind.value,
                "source": unit.source,
            }
            fh.write(json.dumps(row, ensure_ascii=False) + "\n")


def read_units(path: str | Path) -> list[ContractUnit]:
    """Load units, recomputing token data (and the id) from the source text."""
    units = []
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            raw = raw.strip()
            if not raw:
                continue
            row = json.loads(raw)
            try:
                kind = UnitKind(row["kind"])
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: unknown unit kind {row['kind']!r}") from exc
            units.append(ContractUnit.from_source(row["source"], row["origin_path"], row["filename"], kind))
    return units
