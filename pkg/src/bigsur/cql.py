"""CQL: the catalog query language.

Grammar::

    query     = "FIND" target "WITH" predicate { "AND" predicate } ;
    target    = "sites" | "objects" | "functions" | "tools"
              | "documents" | "collections" | "responsible" ;
    predicate = "TYPE" string
              | "SUBTYPES" ("ON" | "OFF")
              | "FAVORITE" "OF" string
              | "DERIVED" "FROM" "TYPE" string
              | "AT" "SITE" string
              | "FOR" string ;
    string    = '"' characters-except-quote '"' ;

Keywords are case-insensitive, strings are not. ``SUBTYPES`` toggles the
subtype-closure flag instead of contributing a predicate.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import QuerySyntaxError, UnknownPredicate

TARGETS = ("sites", "objects", "functions", "tools", "documents", "collections", "responsible")

# predicate kind -> keyword spelling
PREDICATE_WORDS = {
    "type": ("TYPE",),
    "favorite_of": ("FAVORITE", "OF"),
    "derived_from_type": ("DERIVED", "FROM", "TYPE"),
    "at_site": ("AT", "SITE"),
    "for": ("FOR",),
}

ALLOWED = {
    "sites": {"type", "at_site"},
    "objects": {"type", "at_site"},
    "functions": {"type", "derived_from_type"},
    "tools": {"type", "favorite_of"},
    "documents": {"type"},
    "collections": {"type"},
    "responsible": {"for"},
}


@dataclass(frozen=True)
class QueryAst:
    target: str
    predicates: tuple[tuple[str, str], ...]
    subtype_closure: bool = True


@dataclass(frozen=True)
class _Token:
    kind: str  # "word", "string" or "end"
    text: str
    line: int
    column: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    i, line, col = 0, 1, 1
    while i < len(text):
        ch = text[i]
        if ch == "\n":
            i, line, col = i + 1, line + 1, 1
            continue
        if ch.isspace():
            i, col = i + 1, col + 1
            continue
        if ch == '"':
            end = text.find('"', i + 1)
            if end < 0:
                raise QuerySyntaxError("unterminated string", line, col)
            value = text[i + 1:end]
            if "\n" in value:
                raise QuerySyntaxError("newline inside string", line, col)
            tokens.append(_Token("string", value, line, col))
            col += end + 1 - i
            i = end + 1
            continue
        start, start_col = i, col
        while i < len(text) and not text[i].isspace() and text[i] != '"':
            i, col = i + 1, col + 1
        tokens.append(_Token("word", text[start:i], line, start_col))
    tokens.append(_Token("end", "", line, col))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        if tok.kind != "end":
            self.pos += 1
        return tok

    def fail(self, tok: _Token, expected: str):
        found = "end of input" if tok.kind == "end" else repr(tok.text)
        raise QuerySyntaxError(f"expected {expected}, found {found}", tok.line, tok.column)

    def keyword(self, word: str) -> _Token:
        tok = self.next()
        if tok.kind != "word" or tok.text.upper() != word:
            self.fail(tok, word)
        return tok

    def string(self) -> str:
        tok = self.next()
        if tok.kind != "string":
            self.fail(tok, "quoted string")
        return tok.text

    def parse(self) -> QueryAst:
        self.keyword("FIND")
        tok = self.next()
        if tok.kind != "word" or tok.text.lower() not in TARGETS:
            self.fail(tok, "target (" + " | ".join(TARGETS) + ")")
        target = tok.text.lower()
        self.keyword("WITH")
        predicates: list[tuple[str, str]] = []
        closure = True
        while True:
            tok = self.peek()
            kind, value = self.predicate()
            if kind == "subtypes":
                closure = value == "ON"
            else:
                if kind not in ALLOWED[target]:
                    raise UnknownPredicate(
                        f"{tok.line}:{tok.column}: {' '.join(PREDICATE_WORDS[kind])} "
                        f"does not apply to {target}")
                predicates.append((kind, value))
            tok = self.next()
            if tok.kind == "end":
                break
            if tok.kind != "word" or tok.text.upper() != "AND":
                self.fail(tok, "AND or end of input")
        if not predicates:
            raise QuerySyntaxError("query needs a selecting predicate", 1, 1)
        return QueryAst(target, tuple(predicates), closure)

    def predicate(self) -> tuple[str, str]:
        tok = self.next()
        if tok.kind != "word":
            self.fail(tok, "predicate")
        word = tok.text.upper()
        if word == "SUBTYPES":
            flag = self.next()
            if flag.kind != "word" or flag.text.upper() not in ("ON", "OFF"):
                self.fail(flag, "ON or OFF")
            return "subtypes", flag.text.upper()
        for kind, words in PREDICATE_WORDS.items():
            if words[0] == word:
                for rest in words[1:]:
                    self.keyword(rest)
                return kind, self.string()
        raise UnknownPredicate(f"{tok.line}:{tok.column}: unknown predicate {tok.text!r}")


def parse_cql(text: str) -> QueryAst:
    return _Parser(text).parse()


def print_cql(ast: QueryAst) -> str:
    """Canonical text form; ``parse_cql(print_cql(ast)) == ast``."""
    parts = [" ".join(PREDICATE_WORDS[kind]) + f' "{value}"' for kind, value in ast.predicates]
    if not ast.subtype_closure:
        parts.append("SUBTYPES OFF")
    return f"FIND {ast.target} WITH " + " AND ".join(parts)
