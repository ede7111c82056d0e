"""Process definitions: data model, text format, validation, URI minting.

The text format is a line-oriented block format (EBNF in
docs/process-format.md):

    process specimen version 1

    swimlane Curator
      query "SELECT ?u WHERE { ... } WITH INFERENCE"

    start begin
      -> describeDiscovery

    task describeDiscovery
      lane FieldWorkParticipant
      template discovery-form
      notify
      action create-page template=discovery-form name=Discovery${instanceSeq} store-as=discoveryPage
      -> identify

    end finish
"""

from __future__ import annotations

import re
import shlex
from dataclasses import dataclass, field, replace

from .namespaces import (
    PM_ANNOTATION,
    PM_FROM,
    PM_HAS_NODE,
    PM_HAS_SWIMLANE,
    PM_HAS_TRANSITION,
    PM_IN_SWIMLANE,
    PM_KIND,
    PM_NAME,
    PM_NODE,
    PM_PROCESS_DEFINITION,
    PM_SWIMLANE,
    PM_TO,
    PM_TRANSITION,
    PM_VERSION,
    RDF_TYPE,
    XSD,
)
from .store import Term, Triple, TriplePattern, TripleStore, iri, literal


class DefinitionError(Exception):
    pass


class DefinitionSyntaxError(DefinitionError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvalidNamespaceError(DefinitionError):
    pass


class DuplicateVersionError(DefinitionError):
    pass


NODE_KINDS = ("start", "end", "task", "decision", "fork", "join")


@dataclass(frozen=True)
class Violation:
    code: str
    subject: str = ""

    def __str__(self):
        return f"{self.code}({self.subject})" if self.subject else self.code


@dataclass
class Swimlane:
    name: str
    role: str | None = None          # static role IRI text
    query: str | None = None         # SELECT with context placeholders
    uri: Term | None = None


@dataclass
class ActionBinding:
    """Completion action resolved by name against registered engine bindings."""

    name: str
    params: dict[str, str] = field(default_factory=dict)


@dataclass
class Transition:
    source: str
    target: str
    guard: str | None = None
    default: bool = False
    index: int = 0
    uri: Term | None = None


@dataclass
class Node:
    name: str
    kind: str
    lane: str | None = None
    template: str | None = None
    concept: str | None = None       # semantic annotation IRI text
    notify: bool = False
    subject_expr: str | None = None  # ${var} expression decorated as pm:about
    actions: list[ActionBinding] = field(default_factory=list)
    uri: Term | None = None


@dataclass
class ProcessDefinition:
    name: str
    version: int
    nodes: list[Node] = field(default_factory=list)
    transitions: list[Transition] = field(default_factory=list)
    swimlanes: list[Swimlane] = field(default_factory=list)
    uri: Term | None = None

    def node(self, name: str) -> Node:
        for n in self.nodes:
            if n.name == name:
                return n
        raise DefinitionError(f"unknown node {name!r}")

    def lane(self, name: str) -> Swimlane:
        for lane in self.swimlanes:
            if lane.name == name:
                return lane
        raise DefinitionError(f"unknown swimlane {name!r}")

    def outgoing(self, node_name: str) -> list[Transition]:
        return [t for t in self.transitions if t.source == node_name]

    def incoming(self, node_name: str) -> list[Transition]:
        return [t for t in self.transitions if t.target == node_name]

    @property
    def start_nodes(self) -> list[Node]:
        return [n for n in self.nodes if n.kind == "start"]


_NAME_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_-]*$")


def parse_definition(text: str) -> ProcessDefinition:
    """Parse the block format; structural invariants are checked by validate()."""
    definition: ProcessDefinition | None = None
    current: Node | Swimlane | None = None
    index = 0
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        try:
            words = shlex.split(line)
        except ValueError as exc:
            raise DefinitionSyntaxError(str(exc), lineno) from exc
        head = words[0]
        if head == "process":
            if definition is not None:
                raise DefinitionSyntaxError("duplicate process header", lineno)
            if len(words) != 4 or words[2] != "version":
                raise DefinitionSyntaxError("expected: process <name> version <int>", lineno)
            if not words[3].isdigit():
                raise DefinitionSyntaxError("version must be an integer", lineno)
            definition = ProcessDefinition(words[1], int(words[3]))
            continue
        if definition is None:
            raise DefinitionSyntaxError("file must begin with a process header", lineno)
        if head == "swimlane":
            if len(words) != 2:
                raise DefinitionSyntaxError("expected: swimlane <name>", lineno)
            current = Swimlane(words[1])
            definition.swimlanes.append(current)
            continue
        if head in NODE_KINDS:
            if len(words) != 2 or not _NAME_RE.match(words[1]):
                raise DefinitionSyntaxError(f"expected: {head} <name>", lineno)
            current = Node(words[1], head)
            definition.nodes.append(current)
            continue
        if current is None:
            raise DefinitionSyntaxError(f"{head!r} outside any block", lineno)
        if head == "->":
            if not isinstance(current, Node):
                raise DefinitionSyntaxError("transition outside a node block", lineno)
            index += 1
            definition.transitions.append(_parse_transition(words, current.name, index, lineno))
            continue
        _parse_property(current, head, words, lineno)
    if definition is None:
        raise DefinitionSyntaxError("empty definition", 1)
    return definition


def _parse_transition(words: list[str], source: str, index: int, lineno: int) -> Transition:
    if len(words) < 2:
        raise DefinitionSyntaxError("expected: -> <target> [if \"ASK ...\"] [default]", lineno)
    target = words[1]
    guard = None
    default = False
    i = 2
    while i < len(words):
        if words[i] == "if":
            if i + 1 >= len(words):
                raise DefinitionSyntaxError("'if' needs a quoted ASK query", lineno)
            guard = words[i + 1]
            i += 2
        elif words[i] == "default":
            default = True
            i += 1
        else:
            raise DefinitionSyntaxError(f"unexpected token {words[i]!r} in transition", lineno)
    return Transition(source, target, guard, default, index)


def _parse_property(current, head: str, words: list[str], lineno: int) -> None:
    if isinstance(current, Swimlane):
        if head == "role" and len(words) == 2:
            current.role = words[1]
        elif head == "query" and len(words) == 2:
            current.query = words[1]
        else:
            raise DefinitionSyntaxError(f"unknown swimlane property {head!r}", lineno)
        return
    if head == "lane" and len(words) == 2:
        current.lane = words[1]
    elif head == "template" and len(words) == 2:
        current.template = words[1]
    elif head == "concept" and len(words) == 2:
        current.concept = words[1]
    elif head == "notify" and len(words) == 1:
        current.notify = True
    elif head == "subject" and len(words) == 2:
        current.subject_expr = words[1]
    elif head == "action" and len(words) >= 2:
        params = {}
        for chunk in words[2:]:
            key, sep, value = chunk.partition("=")
            if not sep:
                raise DefinitionSyntaxError("action parameters use key=value", lineno)
            params[key] = value
        current.actions.append(ActionBinding(words[1], params))
    else:
        raise DefinitionSyntaxError(f"unknown node property {head!r}", lineno)


def serialize_definition(d: ProcessDefinition) -> str:
    """Inverse of parse_definition, used for fixtures and round-trip checks."""
    out = [f"process {d.name} version {d.version}", ""]
    for lane in d.swimlanes:
        out.append(f"swimlane {lane.name}")
        if lane.role:
            out.append(f"  role {lane.role}")
        if lane.query:
            out.append(f"  query {_quote(lane.query)}")
        out.append("")
    for node in d.nodes:
        out.append(f"{node.kind} {node.name}")
        if node.lane:
            out.append(f"  lane {node.lane}")
        if node.template:
            out.append(f"  template {node.template}")
        if node.concept:
            out.append(f"  concept {node.concept}")
        if node.notify:
            out.append("  notify")
        if node.subject_expr:
            out.append(f"  subject {node.subject_expr}")
        for action in node.actions:
            params = " ".join(f"{k}={_quote_param(v)}" for k, v in action.params.items())
            out.append(f"  action {action.name}{' ' + params if params else ''}")
        for t in d.transitions:
            if t.source != node.name:
                continue
            line = f"  -> {t.target}"
            if t.guard:
                line += f" if {_quote(t.guard)}"
            if t.default:
                line += " default"
            out.append(line)
        out.append("")
    return "\n".join(out)


def _quote(text: str) -> str:
    return '"' + text.replace('"', '\\"') + '"'


def _quote_param(value: str) -> str:
    return _quote(value) if (" " in value or '"' in value) else value


def validate(d: ProcessDefinition) -> list[Violation]:
    """Structural violations; empty means safe to deploy."""
    violations: list[Violation] = []
    names = [n.name for n in d.nodes]
    for name in sorted({n for n in names if names.count(n) > 1}):
        violations.append(Violation("duplicate-node", name))
    starts = d.start_nodes
    if len(starts) > 1:
        violations.append(Violation("multiple-start"))
    if not starts:
        violations.append(Violation("missing-start"))
    if not any(n.kind == "end" for n in d.nodes):
        violations.append(Violation("missing-end"))
    lane_names = {s.name for s in d.swimlanes}
    for lane in d.swimlanes:
        if (lane.role is None) == (lane.query is None):
            violations.append(Violation("swimlane-assignment", lane.name))
        if lane.query is not None:
            problem = _check_lane_query(lane.query)
            if problem:
                violations.append(Violation(problem, lane.name))
    for t in d.transitions:
        for endpoint in (t.source, t.target):
            if endpoint not in names:
                violations.append(Violation("unknown-endpoint", endpoint))
        if t.guard is not None and not _guard_parses(t.guard):
            violations.append(Violation("bad-guard", f"{t.source}->{t.target}"))
    by_source: dict[str, list[Transition]] = {}
    for t in d.transitions:
        by_source.setdefault(t.source, []).append(t)
    for source, ts in sorted(by_source.items()):
        if sum(1 for t in ts if t.default) > 1:
            violations.append(Violation("multiple-default", source))
    for node in d.nodes:
        outgoing = by_source.get(node.name, [])
        incoming = d.incoming(node.name)
        if node.kind == "start" and incoming:
            violations.append(Violation("start-has-incoming", node.name))
        if node.kind == "end" and outgoing:
            violations.append(Violation("end-has-outgoing", node.name))
        if node.kind != "end" and not outgoing:
            violations.append(Violation("dead-end", node.name))
        if node.kind == "join" and len(incoming) < 2:
            violations.append(Violation("join-indegree", node.name))
        if node.kind == "fork" and len(outgoing) < 2:
            violations.append(Violation("fork-outdegree", node.name))
        if node.kind == "task":
            if node.lane is None:
                violations.append(Violation("task-missing-lane", node.name))
            elif node.lane not in lane_names:
                violations.append(Violation("unknown-swimlane", node.name))
        if node.kind == "decision":
            has_default = any(t.default for t in outgoing)
            all_guarded = outgoing and all(t.guard is not None for t in outgoing if not t.default)
            if not has_default and not all_guarded:
                violations.append(Violation("decision-unguarded", node.name))
    if starts and len(starts) == 1:
        reachable = {starts[0].name}
        frontier = [starts[0].name]
        while frontier:
            here = frontier.pop()
            for t in by_source.get(here, []):
                if t.target in names and t.target not in reachable:
                    reachable.add(t.target)
                    frontier.append(t.target)
        for node in d.nodes:
            if node.name not in reachable:
                violations.append(Violation("unreachable", node.name))
    return violations


class _PermissivePrefixes(dict):
    """Static validation accepts any prefix; real tables apply at deployment."""

    def __contains__(self, key):
        return True

    def __getitem__(self, key):
        return f"urn:prefix:{key}:"


def _structural_parse(query: str):
    from .sparql import parse

    # placeholders are legal in guards; substitute parseable stand-ins
    text = re.sub(r"\$\{[A-Za-z_][A-Za-z0-9_]*\}", "<urn:ctx:x>", query)
    return parse(text, _PermissivePrefixes())


def _guard_parses(guard: str) -> bool:
    from .sparql import QueryError

    try:
        return getattr(_structural_parse(guard), "form", None) == "ask"
    except QueryError:
        return False


def _check_lane_query(query: str) -> str | None:
    from .sparql import QueryError

    try:
        q = _structural_parse(query)
    except QueryError:
        return "bad-lane-query"
    if getattr(q, "form", None) != "select" or len(q.projected) != 1:
        return "lane-query-projection"
    return None


def mint_uris(d: ProcessDefinition, base_namespace: str) -> ProcessDefinition:
    """Deterministic IRIs for the definition and every element."""
    if not base_namespace.endswith(("/", "#")):
        raise InvalidNamespaceError("base namespace must end in '/' or '#'")
    iri("".join([base_namespace, "x"]))  # validates the namespace itself
    root = f"{base_namespace}process/{d.name}/{d.version}"
    minted = replace(d, uri=iri(root))
    minted.nodes = [replace(n, uri=iri(f"{root}/node/{n.name}")) for n in d.nodes]
    minted.transitions = [replace(t, uri=iri(f"{root}/transition/{t.index}"))
                          for t in d.transitions]
    minted.swimlanes = [replace(s, uri=iri(f"{root}/lane/{s.name}")) for s in d.swimlanes]
    return minted


_KIND_INT = XSD + "integer"


def _concept_iri(text: str, store: TripleStore) -> Term:
    if text.startswith("<") and text.endswith(">"):
        return iri(text[1:-1])
    prefix = text.split(":", 1)[0]
    if ":" in text and prefix in store.prefixes:
        return iri(store.expand(text))
    return iri(text)


def register(d: ProcessDefinition, store: TripleStore) -> int:
    """Assert the definition's description; errors if name+version already present."""
    if d.uri is None:
        raise DefinitionError("definition must be minted before registration")
    rdf_type = iri(RDF_TYPE)
    if store.ask(TriplePattern(d.uri, rdf_type, iri(PM_PROCESS_DEFINITION))):
        raise DuplicateVersionError(f"{d.name} version {d.version} already registered")
    triples = [
        Triple(d.uri, rdf_type, iri(PM_PROCESS_DEFINITION)),
        Triple(d.uri, iri(PM_NAME), literal(d.name)),
        Triple(d.uri, iri(PM_VERSION), literal(str(d.version), datatype=_KIND_INT)),
    ]
    for lane in d.swimlanes:
        triples.append(Triple(lane.uri, rdf_type, iri(PM_SWIMLANE)))
        triples.append(Triple(d.uri, iri(PM_HAS_SWIMLANE), lane.uri))
    for node in d.nodes:
        triples.append(Triple(node.uri, rdf_type, iri(PM_NODE)))
        triples.append(Triple(d.uri, iri(PM_HAS_NODE), node.uri))
        triples.append(Triple(node.uri, iri(PM_KIND), literal(node.kind)))
        if node.lane:
            triples.append(Triple(node.uri, iri(PM_IN_SWIMLANE), d.lane(node.lane).uri))
        if node.concept:
            triples.append(Triple(node.uri, iri(PM_ANNOTATION), _concept_iri(node.concept, store)))
    node_uri = {n.name: n.uri for n in d.nodes}
    for t in d.transitions:
        triples.append(Triple(t.uri, rdf_type, iri(PM_TRANSITION)))
        triples.append(Triple(d.uri, iri(PM_HAS_TRANSITION), t.uri))
        if t.source in node_uri:
            triples.append(Triple(t.uri, iri(PM_FROM), node_uri[t.source]))
        if t.target in node_uri:
            triples.append(Triple(t.uri, iri(PM_TO), node_uri[t.target]))
    return store.insert_all(triples)
