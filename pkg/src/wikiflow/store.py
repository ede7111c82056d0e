"""Embedded RDF triple store.

Holds the semantic model every other subsystem reads and decorates: a set
of triples with named prefixes, optional RDFS subclass entailment at match
time, immutable snapshot views for query evaluation, and a line-based
N-Triples persistence format (see docs/store-format.md).
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .namespaces import DEFAULT_PREFIXES, RDF_TYPE, RDFS_SUBCLASSOF


class StoreError(Exception):
    pass


class InvalidTermError(StoreError):
    pass


class StoreIOError(StoreError):
    pass


class StoreParseError(StoreError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


_SCHEME_RE = re.compile(r"^[A-Za-z][A-Za-z0-9+.-]*:")
_FORBIDDEN_IRI_CHARS = set(' <>"{}|^`\\\x00\t\n\r')


@dataclass(frozen=True)
class Term:
    """An IRI or a literal; literals optionally carry a datatype IRI or language tag."""

    kind: str  # "iri" | "literal"
    value: str
    datatype: str | None = None
    lang: str | None = None

    def __post_init__(self):
        if self.kind == "iri":
            if not _SCHEME_RE.match(self.value):
                raise InvalidTermError(f"not an absolute IRI: {self.value!r}")
            bad = _FORBIDDEN_IRI_CHARS.intersection(self.value)
            if bad:
                raise InvalidTermError(f"forbidden character {bad.pop()!r} in IRI {self.value!r}")
            if self.datatype is not None or self.lang is not None:
                raise InvalidTermError("IRI terms carry no datatype or language tag")
        elif self.kind == "literal":
            if self.datatype is not None and self.lang is not None:
                raise InvalidTermError("literal cannot have both datatype and language tag")
        else:
            raise InvalidTermError(f"unknown term kind {self.kind!r}")

    @property
    def is_iri(self) -> bool:
        return self.kind == "iri"

    def sort_text(self) -> str:
        """Stable text used for deterministic row ordering."""
        return nt_term(self)

    def __repr__(self):
        return nt_term(self)


def iri(value: str) -> Term:
    return Term("iri", value)


def literal(value: str, datatype: str | None = None, lang: str | None = None) -> Term:
    return Term("literal", value, datatype=datatype, lang=lang)


@dataclass(frozen=True, order=True)
class Var:
    """Named variable in a triple pattern."""

    name: str


# Pattern positions: a concrete Term, a named Var, or None (anonymous wildcard).
PatternTerm = Term | Var | None


@dataclass(frozen=True)
class Triple:
    subject: Term
    predicate: Term
    object: Term

    def __post_init__(self):
        if not self.subject.is_iri:
            raise InvalidTermError("triple subject must be an IRI")
        if not self.predicate.is_iri:
            raise InvalidTermError("triple predicate must be an IRI")

    def __iter__(self) -> Iterator[Term]:
        return iter((self.subject, self.predicate, self.object))


@dataclass(frozen=True)
class TriplePattern:
    subject: PatternTerm = None
    predicate: PatternTerm = None
    object: PatternTerm = None

    def positions(self):
        return (self.subject, self.predicate, self.object)

    def variables(self) -> set[str]:
        return {p.name for p in self.positions() if isinstance(p, Var)}


def _unify_position(pattern: PatternTerm, value: Term, binding: dict[str, Term]) -> bool:
    if pattern is None:
        return True
    if isinstance(pattern, Var):
        bound = binding.get(pattern.name)
        if bound is None:
            binding[pattern.name] = value
            return True
        return bound == value
    return pattern == value


def match_triple(pattern: TriplePattern, t: Triple, seed: dict[str, Term] | None = None) -> dict[str, Term] | None:
    """Unify one pattern against one triple; returns the extended binding or None."""
    binding = dict(seed) if seed else {}
    for pos, value in zip(pattern.positions(), t):
        if not _unify_position(pos, value, binding):
            return None
    return binding


def _binding_key(binding: dict[str, Term]) -> tuple:
    return tuple(sorted((k, nt_term(v)) for k, v in binding.items()))


class StoreView:
    """Immutable view of the store at one revision; safe to share across threads."""

    def __init__(self, triples: frozenset[Triple], prefixes: dict[str, str], revision: int):
        self.triples = triples
        self.prefixes = dict(prefixes)
        self.revision = revision
        self._closure_cache: dict[Term, frozenset[Term]] = {}
        self._entailed: frozenset[Triple] | None = None
        self._sub = Term("iri", RDFS_SUBCLASSOF)
        self._type = Term("iri", RDF_TYPE)

    def __len__(self):
        return len(self.triples)

    def __contains__(self, t: Triple) -> bool:
        return t in self.triples

    def expand(self, curie: str) -> str:
        """Expand prefix:local against the view's prefix table."""
        prefix, _, local = curie.partition(":")
        if prefix not in self.prefixes:
            raise StoreError(f"unknown prefix {prefix!r}")
        return self.prefixes[prefix] + local

    def subclass_closure(self, c: Term) -> frozenset[Term]:
        """{c} plus all ancestors over rdfs:subClassOf; fixpoint, cycle-tolerant."""
        if not c.is_iri:
            raise InvalidTermError("subclass_closure expects an IRI")
        cached = self._closure_cache.get(c)
        if cached is not None:
            return cached
        seen = {c}
        frontier = [c]
        while frontier:
            node = frontier.pop()
            for t in self.triples:
                if t.predicate == self._sub and t.subject == node and t.object not in seen:
                    seen.add(t.object)
                    frontier.append(t.object)
        result = frozenset(seen)
        self._closure_cache[c] = result
        return result

    def _class_universe(self) -> set[Term]:
        classes: set[Term] = set()
        for t in self.triples:
            if t.predicate == self._sub:
                classes.add(t.subject)
                if t.object.is_iri:
                    classes.add(t.object)
            elif t.predicate == self._type and t.object.is_iri:
                classes.add(t.object)
        return classes

    def entailed_triples(self) -> frozenset[Triple]:
        """Asserted triples plus rdfs-subclass entailments (type propagation and
        the transitive-reflexive subClassOf closure over known classes)."""
        if self._entailed is not None:
            return self._entailed
        extra: set[Triple] = set()
        for cls in self._class_universe():
            for ancestor in self.subclass_closure(cls):
                extra.add(Triple(cls, self._sub, ancestor))
        for t in self.triples:
            if t.predicate == self._type and t.object.is_iri:
                for ancestor in self.subclass_closure(t.object):
                    extra.add(Triple(t.subject, self._type, ancestor))
        self._entailed = frozenset(self.triples | extra)
        return self._entailed

    def match(self, pattern: TriplePattern, entailment: str = "none",
              seed: dict[str, Term] | None = None) -> list[dict[str, Term]]:
        """All bindings of the pattern's variables, deduplicated and sorted."""
        if entailment == "rdfs-subclass":
            universe: Iterable[Triple] = self.entailed_triples()
        elif entailment == "none":
            universe = self.triples
        else:
            raise StoreError(f"unknown entailment regime {entailment!r}")
        out: dict[tuple, dict[str, Term]] = {}
        for t in universe:
            binding = match_triple(pattern, t, seed)
            if binding is not None:
                out.setdefault(_binding_key(binding), binding)
        return [out[k] for k in sorted(out)]

    def ask(self, pattern: TriplePattern, entailment: str = "none") -> bool:
        return bool(self.match(pattern, entailment))


class TripleStore:
    """Mutable triple store: concurrent readers, serialized writers, monotone revision."""

    def __init__(self, prefixes: dict[str, str] | None = None):
        self._lock = threading.RLock()
        self._triples: set[Triple] = set()
        self._prefixes: dict[str, str] = dict(DEFAULT_PREFIXES)
        if prefixes:
            self._prefixes.update(prefixes)
        self._revision = 0

    @property
    def revision(self) -> int:
        with self._lock:
            return self._revision

    @property
    def prefixes(self) -> dict[str, str]:
        with self._lock:
            return dict(self._prefixes)

    def bind_prefix(self, prefix: str, namespace: str) -> None:
        with self._lock:
            self._prefixes[prefix] = namespace

    def expand(self, curie: str) -> str:
        prefix, _, local = curie.partition(":")
        with self._lock:
            if prefix not in self._prefixes:
                raise StoreError(f"unknown prefix {prefix!r}")
            return self._prefixes[prefix] + local

    def __len__(self):
        with self._lock:
            return len(self._triples)

    def __contains__(self, t: Triple) -> bool:
        with self._lock:
            return t in self._triples

    def insert(self, t: Triple) -> int:
        """Insert one triple; returns the store revision (unchanged for duplicates)."""
        if not isinstance(t, Triple):
            raise InvalidTermError("insert expects a Triple")
        with self._lock:
            if t not in self._triples:
                self._triples.add(t)
                self._revision += 1
            return self._revision

    def insert_all(self, triples: Iterable[Triple]) -> int:
        with self._lock:
            for t in triples:
                self.insert(t)
            return self._revision

    def remove(self, pattern: TriplePattern) -> int:
        """Remove all triples matching the pattern; returns how many were removed."""
        with self._lock:
            doomed = [t for t in self._triples if match_triple(pattern, t) is not None]
            for t in doomed:
                self._triples.discard(t)
            if doomed:
                self._revision += 1
            return len(doomed)

    def snapshot(self) -> StoreView:
        with self._lock:
            return StoreView(frozenset(self._triples), self._prefixes, self._revision)

    def match(self, pattern: TriplePattern, entailment: str = "none") -> list[dict[str, Term]]:
        return self.snapshot().match(pattern, entailment)

    def ask(self, pattern: TriplePattern, entailment: str = "none") -> bool:
        return self.snapshot().ask(pattern, entailment)

    def subclass_closure(self, c: Term) -> frozenset[Term]:
        return self.snapshot().subclass_closure(c)

    def save(self, path) -> None:
        view = self.snapshot()
        lines = [f"@prefix {p}: <{ns}> ." for p, ns in sorted(view.prefixes.items())]
        lines.extend(sorted(nt_triple(t) for t in view.triples))
        try:
            with open(path, "w", encoding="utf-8") as fh:
                fh.write("\n".join(lines) + "\n")
        except OSError as exc:
            raise StoreIOError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "TripleStore":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise StoreIOError(str(exc)) from exc
        store = cls()
        store.load_text(text)
        return store

    def load_text(self, text: str) -> int:
        """Parse store-format lines into this store; returns the resulting revision."""
        pending: list[Triple] = []
        new_prefixes: dict[str, str] = {}
        merged = dict(self.prefixes)
        # split on "\n" only: exotic literals may contain U+2028 and friends,
        # which must not be treated as statement boundaries
        for lineno, raw in enumerate(text.split("\n"), start=1):
            line = raw.strip("\r\t ")
            if not line or line.startswith("#"):
                continue
            if line.startswith("@prefix"):
                m = re.match(r"@prefix\s+([A-Za-z_][\w.-]*)?:\s+<([^>]*)>\s*\.$", line)
                if not m:
                    raise StoreParseError("malformed @prefix declaration", lineno)
                new_prefixes[m.group(1) or ""] = m.group(2)
                merged[m.group(1) or ""] = m.group(2)
                continue
            pending.append(_parse_statement_line(line, lineno, merged))
        with self._lock:
            self._prefixes.update(new_prefixes)
            return self.insert_all(pending)


# --- N-Triples style serialization ------------------------------------------

_ESCAPES = {"\\": "\\\\", '"': '\\"', "\n": "\\n", "\r": "\\r", "\t": "\\t"}
_UNESCAPES = {"\\": "\\", '"': '"', "n": "\n", "r": "\r", "t": "\t"}


def _escape_literal(value: str) -> str:
    out = []
    for ch in value:
        if ch in _ESCAPES:
            out.append(_ESCAPES[ch])
        elif ord(ch) < 0x20:
            out.append(f"\\u{ord(ch):04X}")
        else:
            out.append(ch)
    return "".join(out)


def _unescape_literal(value: str, lineno: int) -> str:
    out = []
    i = 0
    while i < len(value):
        ch = value[i]
        if ch != "\\":
            out.append(ch)
            i += 1
            continue
        if i + 1 >= len(value):
            raise StoreParseError("dangling escape in literal", lineno)
        nxt = value[i + 1]
        if nxt in _UNESCAPES:
            out.append(_UNESCAPES[nxt])
            i += 2
        elif nxt == "u" and i + 6 <= len(value):
            out.append(chr(int(value[i + 2:i + 6], 16)))
            i += 6
        elif nxt == "U" and i + 10 <= len(value):
            out.append(chr(int(value[i + 2:i + 10], 16)))
            i += 10
        else:
            raise StoreParseError(f"unknown escape \\{nxt}", lineno)
    return "".join(out)


def nt_term(t: Term) -> str:
    if t.is_iri:
        return f"<{t.value}>"
    body = f'"{_escape_literal(t.value)}"'
    if t.lang:
        return f"{body}@{t.lang}"
    if t.datatype:
        return f"{body}^^<{t.datatype}>"
    return body


def nt_triple(t: Triple) -> str:
    return f"{nt_term(t.subject)} {nt_term(t.predicate)} {nt_term(t.object)} ."


_TOKEN_RE = re.compile(
    r"""\s*(?:
        <(?P<iri>[^>]*)>
      | "(?P<lit>(?:[^"\\]|\\.)*)"(?:@(?P<lang>[A-Za-z][\w-]*)|\^\^<(?P<dt>[^>]*)>)?
      | (?P<curie>[A-Za-z_][\w.-]*:[^\s<>"]*)
      | (?P<dot>\.)
    )""",
    re.VERBOSE,
)


def _parse_statement_line(line: str, lineno: int, prefixes: dict[str, str]) -> Triple:
    pos = 0
    parts: list[Term] = []
    saw_dot = False
    while pos < len(line):
        m = _TOKEN_RE.match(line, pos)
        if not m:
            raise StoreParseError(f"unparseable token at column {pos + 1}", lineno)
        pos = m.end()
        if m.group("dot"):
            saw_dot = True
            if line[pos:].strip():
                raise StoreParseError("content after terminating '.'", lineno)
            break
        try:
            if m.group("iri") is not None:
                parts.append(Term("iri", m.group("iri")))
            elif m.group("lit") is not None:
                parts.append(Term("literal", _unescape_literal(m.group("lit"), lineno),
                                  datatype=m.group("dt"), lang=m.group("lang")))
            else:
                curie = m.group("curie")
                prefix, _, local = curie.partition(":")
                if prefix not in prefixes:
                    raise StoreParseError(f"unknown prefix {prefix!r}", lineno)
                parts.append(Term("iri", prefixes[prefix] + local))
        except InvalidTermError as exc:
            raise StoreParseError(str(exc), lineno) from exc
    if not saw_dot:
        raise StoreParseError("missing terminating '.'", lineno)
    if len(parts) != 3:
        raise StoreParseError(f"expected 3 terms, found {len(parts)}", lineno)
    try:
        return Triple(*parts)
    except InvalidTermError as exc:
        raise StoreParseError(str(exc), lineno) from exc
