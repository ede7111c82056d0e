"""SPARQL-style query subset: parser, evaluator, results XML, context substitution.

Grammar (full EBNF in docs/query-grammar.md):

    SELECT ?v ... WHERE { pattern . pattern . FILTER(expr op expr) } [WITH INFERENCE]
    ASK { ... } [WITH INFERENCE]
    INSERT DATA { triples } / DELETE DATA { triples }
    [DELETE { template }] [INSERT { template }] WHERE { patterns }

Prefixed names are expanded against the store's prefix table. SELECT is
set-valued: rows are distinct and sorted by the text of the projected terms,
so identical query + snapshot always yields byte-identical results XML.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from xml.sax.saxutils import escape, quoteattr

from .namespaces import SPARQL_RESULTS_NS, XSD
from .store import (
    StoreView,
    Term,
    Triple,
    TriplePattern,
    TripleStore,
    Var,
    nt_term,
)


class QueryError(Exception):
    pass


class QuerySyntaxError(QueryError):
    def __init__(self, message: str, position: int):
        super().__init__(f"at offset {position}: {message}")
        self.position = position


class UnknownPrefixError(QueryError):
    def __init__(self, prefix: str, position: int = -1):
        super().__init__(f"unknown prefix {prefix!r}")
        self.prefix = prefix
        self.position = position


class UnknownContextKeyError(QueryError):
    def __init__(self, key: str):
        super().__init__(f"unknown context key {key!r}")
        self.key = key


class UnboundTemplateVariableError(QueryError):
    def __init__(self, name: str):
        super().__init__(f"template variable ?{name} not bound by WHERE clause")
        self.name = name


_CMP_OPS = ("=", "!=", "<", "<=", ">", ">=")


@dataclass(frozen=True)
class FilterExpr:
    """Comparison between two operands, each a Var or a constant Term."""

    op: str
    left: Term | Var
    right: Term | Var


@dataclass(frozen=True)
class Query:
    form: str  # "select" | "ask"
    projected: tuple[str, ...]
    where: tuple[TriplePattern, ...]
    filters: tuple[FilterExpr, ...] = ()
    entailment: str = "none"


@dataclass(frozen=True)
class UpdateRequest:
    kind: str  # "insert-data" | "delete-data" | "modify"
    insert_templates: tuple[TriplePattern, ...] = ()
    delete_templates: tuple[TriplePattern, ...] = ()
    where: tuple[TriplePattern, ...] = ()
    filters: tuple[FilterExpr, ...] = ()
    entailment: str = "none"


@dataclass
class ResultSet:
    variables: list[str]
    rows: list[dict[str, Term]] = field(default_factory=list)

    def __len__(self):
        return len(self.rows)

    def column(self, name: str) -> list[Term]:
        return [row[name] for row in self.rows if name in row]


@dataclass
class RenderContext:
    """Named Term values resolved into query text at rendering time."""

    values: dict[str, Term] = field(default_factory=dict)

    @classmethod
    def of(cls, current_user: Term | None = None, current_page: Term | None = None,
           **extra: Term) -> "RenderContext":
        values = dict(extra)
        if current_user is not None:
            values["currentUser"] = current_user
        if current_page is not None:
            values["currentPage"] = current_page
        return cls(values)

    def get(self, key: str) -> Term:
        if key not in self.values:
            raise UnknownContextKeyError(key)
        return self.values[key]


_PLACEHOLDER_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def substitute_context(text: str, ctx: RenderContext) -> str:
    """Replace ${name} placeholders with the context's Terms in query syntax."""
    return _PLACEHOLDER_RE.sub(lambda m: nt_term(ctx.get(m.group(1))), text)


# --- tokenizer ----------------------------------------------------------------

_TOKEN_SPEC = [
    ("WS", r"[ \t\r\n]+|#[^\n]*"),
    ("IRIREF", r"<[^<>\s]*>"),
    ("STRING", r'"(?:[^"\\]|\\.)*"(?:@[A-Za-z][\w-]*|\^\^<[^<>\s]*>)?'),
    ("VAR", r"\?[A-Za-z_][A-Za-z0-9_]*"),
    ("NUMBER", r"[+-]?\d+(?:\.\d+)?"),
    ("NAME", r"[A-Za-z_][A-Za-z0-9_-]*(?::[A-Za-z0-9_.%\-/#]*)?"),
    ("OP", r"!=|<=|>=|[=<>{}().]"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{n}>{p})" for n, p in _TOKEN_SPEC))

_KEYWORDS = {"select", "ask", "where", "filter", "insert", "delete", "data", "with", "inference"}


@dataclass
class _Token:
    kind: str
    text: str
    pos: int


def _tokenize(text: str) -> list[_Token]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise QuerySyntaxError(f"unexpected character {text[pos]!r}", pos)
        if m.lastgroup != "WS":
            tokens.append(_Token(m.lastgroup, m.group(), pos))
        pos = m.end()
    tokens.append(_Token("EOF", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str, prefixes: dict[str, str]):
        self.tokens = _tokenize(text)
        self.prefixes = prefixes
        self.i = 0

    def peek(self) -> _Token:
        return self.tokens[self.i]

    def next(self) -> _Token:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str) -> QuerySyntaxError:
        return QuerySyntaxError(message, self.peek().pos)

    def expect_keyword(self, word: str) -> None:
        tok = self.next()
        if tok.kind != "NAME" or tok.text.lower() != word:
            raise QuerySyntaxError(f"expected {word.upper()}", tok.pos)

    def at_keyword(self, word: str) -> bool:
        tok = self.peek()
        return tok.kind == "NAME" and tok.text.lower() == word

    def expect_op(self, op: str) -> None:
        tok = self.next()
        if tok.kind != "OP" or tok.text != op:
            raise QuerySyntaxError(f"expected {op!r}", tok.pos)

    # terms

    def parse_term(self) -> Term | Var:
        tok = self.next()
        if tok.kind == "VAR":
            return Var(tok.text[1:])
        if tok.kind == "IRIREF":
            return Term("iri", tok.text[1:-1])
        if tok.kind == "NUMBER":
            dt = XSD + ("decimal" if "." in tok.text else "integer")
            return Term("literal", tok.text, datatype=dt)
        if tok.kind == "STRING":
            return _string_token_term(tok.text)
        if tok.kind == "NAME":
            low = tok.text.lower()
            if low in ("true", "false"):
                return Term("literal", low, datatype=XSD + "boolean")
            if ":" in tok.text:
                prefix, _, local = tok.text.partition(":")
                if prefix not in self.prefixes:
                    raise UnknownPrefixError(prefix, tok.pos)
                return Term("iri", self.prefixes[prefix] + local)
        raise QuerySyntaxError(f"expected a term, found {tok.text!r}", tok.pos)

    # query structure

    def parse_query_or_update(self):
        tok = self.peek()
        if tok.kind != "NAME":
            raise self.error("expected SELECT, ASK, INSERT or DELETE")
        word = tok.text.lower()
        if word == "select":
            return self.parse_select()
        if word == "ask":
            return self.parse_ask()
        if word in ("insert", "delete"):
            return self.parse_update()
        raise self.error(f"unknown query form {tok.text!r}")

    def parse_select(self) -> Query:
        self.expect_keyword("select")
        projected = []
        while self.peek().kind == "VAR":
            projected.append(self.next().text[1:])
        if not projected:
            raise self.error("SELECT needs at least one variable")
        self.expect_keyword("where")
        where, filters = self.parse_group()
        entailment = self.parse_inference()
        self.expect_eof()
        q = Query("select", tuple(projected), tuple(where), tuple(filters), entailment)
        _validate_query(q)
        return q

    def parse_ask(self) -> Query:
        self.expect_keyword("ask")
        where, filters = self.parse_group()
        entailment = self.parse_inference()
        self.expect_eof()
        q = Query("ask", (), tuple(where), tuple(filters), entailment)
        _validate_query(q)
        return q

    def parse_update(self) -> UpdateRequest:
        deletes: list[TriplePattern] = []
        inserts: list[TriplePattern] = []
        if self.at_keyword("delete"):
            self.next()
            if self.at_keyword("data"):
                self.next()
                templates = self.parse_triple_block()
                self.expect_eof()
                return _ground_update("delete-data", templates)
            deletes = self.parse_triple_block()
        if self.at_keyword("insert"):
            self.next()
            if self.at_keyword("data"):
                self.next()
                if deletes:
                    raise self.error("DATA form cannot follow a DELETE template")
                templates = self.parse_triple_block()
                self.expect_eof()
                return _ground_update("insert-data", templates)
            inserts = self.parse_triple_block()
        if not deletes and not inserts:
            raise self.error("update needs a DELETE or INSERT template")
        self.expect_keyword("where")
        where, filters = self.parse_group()
        entailment = self.parse_inference()
        self.expect_eof()
        u = UpdateRequest("modify", tuple(inserts), tuple(deletes), tuple(where),
                          tuple(filters), entailment)
        _validate_modify(u)
        return u

    def parse_inference(self) -> str:
        if self.at_keyword("with"):
            self.next()
            self.expect_keyword("inference")
            return "rdfs-subclass"
        return "none"

    def expect_eof(self):
        if self.peek().kind != "EOF":
            raise self.error(f"unexpected trailing input {self.peek().text!r}")

    def parse_group(self) -> tuple[list[TriplePattern], list[FilterExpr]]:
        self.expect_op("{")
        patterns: list[TriplePattern] = []
        filters: list[FilterExpr] = []
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.text == "}":
                self.next()
                break
            if tok.kind == "EOF":
                raise self.error("unterminated group (missing '}')")
            if self.at_keyword("filter"):
                self.next()
                filters.append(self.parse_filter())
            else:
                patterns.append(self.parse_pattern())
            if self.peek().kind == "OP" and self.peek().text == ".":
                self.next()
        return patterns, filters

    def parse_pattern(self) -> TriplePattern:
        s = self.parse_term()
        p = self.parse_term()
        o = self.parse_term()
        if isinstance(s, Term) and not s.is_iri:
            raise self.error("literal in subject position")
        if isinstance(p, Term) and not p.is_iri:
            raise self.error("literal in predicate position")
        return TriplePattern(s, p, o)

    def parse_filter(self) -> FilterExpr:
        self.expect_op("(")
        left = self.parse_term()
        op_tok = self.next()
        if op_tok.kind != "OP" or op_tok.text not in _CMP_OPS:
            raise QuerySyntaxError("expected comparison operator", op_tok.pos)
        right = self.parse_term()
        self.expect_op(")")
        return FilterExpr(op_tok.text, left, right)

    def parse_triple_block(self) -> list[TriplePattern]:
        self.expect_op("{")
        patterns = []
        while True:
            tok = self.peek()
            if tok.kind == "OP" and tok.text == "}":
                self.next()
                break
            if tok.kind == "EOF":
                raise self.error("unterminated block (missing '}')")
            patterns.append(self.parse_pattern())
            if self.peek().kind == "OP" and self.peek().text == ".":
                self.next()
        return patterns


def _string_token_term(text: str) -> Term:
    lang = datatype = None
    if not text.endswith('"'):
        body, sep, suffix = text.rpartition('"')
        if suffix.startswith("@"):
            lang = suffix[1:]
        else:
            datatype = suffix[3:-1]  # ^^<...>
        text = body + sep
    return Term("literal", _unescape_string(text[1:-1]), datatype=datatype, lang=lang)


def _unescape_string(value: str) -> str:
    out = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch == "\\" and i + 1 < len(value):
            nxt = value[i + 1]
            out.append({"n": "\n", "t": "\t", "r": "\r"}.get(nxt, nxt))
            i += 2
        else:
            out.append(ch)
            i += 1
    return "".join(out)


def _pattern_vars(patterns) -> set[str]:
    out: set[str] = set()
    for p in patterns:
        out |= p.variables()
    return out


def _validate_query(q: Query) -> None:
    if not q.where:
        raise QueryError("WHERE clause must contain at least one pattern")
    bound = _pattern_vars(q.where)
    for v in q.projected:
        if v not in bound:
            raise QueryError(f"projected variable ?{v} does not occur in WHERE")
    for f in q.filters:
        if not any(isinstance(side, Var) and side.name in bound for side in (f.left, f.right)):
            raise QueryError("filter references no variable bound by WHERE")


def _ground_update(kind: str, templates: list[TriplePattern]) -> UpdateRequest:
    for tpl in templates:
        if tpl.variables():
            raise UnboundTemplateVariableError(sorted(tpl.variables())[0])
    if kind == "insert-data":
        return UpdateRequest(kind, insert_templates=tuple(templates))
    return UpdateRequest(kind, delete_templates=tuple(templates))


def _validate_modify(u: UpdateRequest) -> None:
    if not u.where:
        raise QueryError("modify requires a WHERE clause")
    bound = _pattern_vars(u.where)
    for tpl in list(u.insert_templates) + list(u.delete_templates):
        for v in tpl.variables():
            if v not in bound:
                raise UnboundTemplateVariableError(v)


def parse(text: str, prefixes: dict[str, str] | None = None) -> Query | UpdateRequest:
    """Parse query/update text; prefixed names expand against the given table."""
    return _Parser(text, prefixes if prefixes is not None else {}).parse_query_or_update()


# --- evaluation ---------------------------------------------------------------

def _resolve(pos, binding: dict[str, Term]):
    if isinstance(pos, Var):
        return binding.get(pos.name, pos)
    return pos


def _bind_pattern(p: TriplePattern, binding: dict[str, Term]) -> TriplePattern:
    return TriplePattern(_resolve(p.subject, binding), _resolve(p.predicate, binding),
                         _resolve(p.object, binding))


_NUMERIC_DATATYPES = {XSD + "integer", XSD + "decimal", XSD + "double", XSD + "float"}


def _numeric_value(term: Term):
    if term.kind != "literal":
        return None
    if term.datatype is not None and term.datatype not in _NUMERIC_DATATYPES:
        return None
    try:
        return float(term.value)
    except ValueError:
        return None


def compare_terms(op: str, a: Term, b: Term) -> bool:
    """Equality is structural; ordering is numeric when both sides are numeric
    literals, otherwise lexicographic on the serialized term text."""
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    na, nb = _numeric_value(a), _numeric_value(b)
    if na is not None and nb is not None:
        ka, kb = na, nb
    else:
        ka, kb = nt_term(a), nt_term(b)
    return {"<": ka < kb, "<=": ka <= kb, ">": ka > kb, ">=": ka >= kb}[op]


def _filter_passes(f: FilterExpr, binding: dict[str, Term]) -> bool:
    left = _resolve(f.left, binding)
    right = _resolve(f.right, binding)
    if isinstance(left, Var) or isinstance(right, Var):
        return False  # unbound operand: row is excluded
    return compare_terms(f.op, left, right)


def _solutions(where, filters, entailment: str, view: StoreView) -> list[dict[str, Term]]:
    solutions: list[dict[str, Term]] = [{}]
    for pattern in where:
        nxt: list[dict[str, Term]] = []
        for binding in solutions:
            bound = _bind_pattern(pattern, binding)
            for extension in view.match(bound, entailment=entailment, seed=binding):
                nxt.append(extension)
        solutions = nxt
        if not solutions:
            break
    return [b for b in solutions if all(_filter_passes(f, b) for f in filters)]


def evaluate_select(q: Query, view: StoreView) -> ResultSet:
    """Distinct projected solutions, sorted by projected term text."""
    if q.form != "select":
        raise QueryError("not a SELECT query")
    rows: dict[tuple, dict[str, Term]] = {}
    for binding in _solutions(q.where, q.filters, q.entailment, view):
        projected = {v: binding[v] for v in q.projected if v in binding}
        key = tuple(nt_term(projected[v]) if v in projected else "" for v in q.projected)
        rows.setdefault(key, projected)
    return ResultSet(list(q.projected), [rows[k] for k in sorted(rows)])


def evaluate_ask(q: Query, view: StoreView) -> bool:
    if q.form != "ask":
        raise QueryError("not an ASK query")
    return bool(_solutions(q.where, q.filters, q.entailment, view))


def execute_update(u: UpdateRequest, store: TripleStore) -> dict[str, int]:
    """Apply an update; returns effective {"inserted": n, "removed": m} counts."""
    inserted = removed = 0
    if u.kind == "insert-data":
        for tpl in u.insert_templates:
            before = store.revision
            if store.insert(_template_triple(tpl, {})) != before:
                inserted += 1
        return {"inserted": inserted, "removed": removed}
    if u.kind == "delete-data":
        for tpl in u.delete_templates:
            t = _template_triple(tpl, {})
            removed += store.remove(TriplePattern(t.subject, t.predicate, t.object))
        return {"inserted": inserted, "removed": removed}
    # modify: solutions computed against a pre-mutation snapshot
    view = store.snapshot()
    solutions = _solutions(u.where, u.filters, u.entailment, view)
    for binding in solutions:
        for tpl in u.delete_templates:
            t = _template_triple(tpl, binding)
            removed += store.remove(TriplePattern(t.subject, t.predicate, t.object))
        for tpl in u.insert_templates:
            before = store.revision
            if store.insert(_template_triple(tpl, binding)) != before:
                inserted += 1
    return {"inserted": inserted, "removed": removed}


def _template_triple(tpl: TriplePattern, binding: dict[str, Term]) -> Triple:
    parts = []
    for pos in tpl.positions():
        resolved = _resolve(pos, binding)
        if not isinstance(resolved, Term):
            name = resolved.name if isinstance(resolved, Var) else "_"
            raise UnboundTemplateVariableError(name)
        parts.append(resolved)
    return Triple(*parts)


# --- results XML ---------------------------------------------------------------

def serialize_results_xml(rs: ResultSet) -> str:
    """W3C SPARQL-results-style XML; byte-stable for a given ResultSet."""
    out = ['<?xml version="1.0" encoding="UTF-8"?>']
    out.append(f'<sparql xmlns="{SPARQL_RESULTS_NS}">')
    out.append("  <head>")
    for v in rs.variables:
        out.append(f"    <variable name={quoteattr(v)}/>")
    out.append("  </head>")
    out.append("  <results>")
    for row in rs.rows:
        out.append("    <result>")
        for v in rs.variables:
            term = row.get(v)
            if term is None:
                continue
            out.append(f"      <binding name={quoteattr(v)}>")
            out.append("        " + _binding_xml(term))
            out.append("      </binding>")
        out.append("    </result>")
    out.append("  </results>")
    out.append("</sparql>")
    return "\n".join(out) + "\n"


def serialize_boolean_xml(value: bool) -> str:
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<sparql xmlns="{SPARQL_RESULTS_NS}">\n'
        "  <head/>\n"
        f"  <boolean>{'true' if value else 'false'}</boolean>\n"
        "</sparql>\n"
    )


def _binding_xml(term: Term) -> str:
    if term.is_iri:
        return f"<uri>{escape(term.value)}</uri>"
    if term.lang:
        return f'<literal xml:lang={quoteattr(term.lang)}>{escape(term.value)}</literal>'
    if term.datatype:
        return f'<literal datatype={quoteattr(term.datatype)}>{escape(term.value)}</literal>'
    return f"<literal>{escape(term.value)}</literal>"
