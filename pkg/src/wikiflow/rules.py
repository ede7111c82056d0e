"""Declarative rule layer: derivation rules, ECA rules, messaging reaction rules.

Concrete syntax (documented in docs/rule-syntax.md) is Prolog-like:

    ancestor(X, Z) :- parent(X, Y), ancestor(Y, Z).
    curator(U) :- triple(U, pm:hasRole, ex:CuratorRole).
    on(taskAssign(Task, User)) do insert(Task, pm:assignee, User).
    rcvMsg(CID, P, From, ping, [X]) :- sendMsg(CID, P, From, pong, [X]).

Reserved functors: on/1 introduces an ECA rule, rcvMsg as a clause head
introduces a messaging reaction rule, triple/3 queries the store snapshot,
not/1 is negation as failure (ground subgoals only).
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .namespaces import DEFAULT_PREFIXES, XSD
from .store import StoreView, Term, TriplePattern, Var, nt_term


class RuleError(Exception):
    pass


class RuleSyntaxError(RuleError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class RangeViolationError(RuleError):
    def __init__(self, rule: str, variable: str):
        super().__init__(f"range violation in {rule}: variable {variable} unbound by body")
        self.rule = rule
        self.variable = variable


class NonGroundNegationError(RuleError):
    pass


# --- term model -----------------------------------------------------------------

@dataclass(frozen=True)
class RVar:
    name: str


@dataclass(frozen=True)
class RAtom:
    name: str


@dataclass(frozen=True)
class RList:
    items: tuple


@dataclass(frozen=True)
class RStruct:
    functor: str
    args: tuple


# An RTerm is RVar | RAtom | store Term | RList | RStruct.


@dataclass(frozen=True)
class Compare:
    op: str
    left: object
    right: object


@dataclass(frozen=True)
class Naf:
    goal: RStruct


@dataclass(frozen=True)
class MsgPattern:
    """Five-field message shape: (conversation, protocol, agent, performative, payload)."""

    cid: object
    protocol: object
    agent: object
    performative: object
    payload: object

    def fields(self):
        return (self.cid, self.protocol, self.agent, self.performative, self.payload)


@dataclass(frozen=True)
class SendStep:
    pattern: MsgPattern


@dataclass(frozen=True)
class ReceiveStep:
    pattern: MsgPattern


@dataclass(frozen=True)
class GoalStep:
    literal: object  # RStruct | Compare | Naf


@dataclass(frozen=True)
class DerivationRule:
    head: RStruct
    body: tuple
    index: int = 0

    def text(self) -> str:
        if not self.body:
            return f"{term_text(self.head)}."
        return f"{term_text(self.head)} :- {', '.join(term_text(b) for b in self.body)}."


ACTION_ARITIES = {
    "insert": 3,
    "delete": 3,
    "setState": 2,
    "send": 5,
    "mintPage": 2,
    "notify": 3,
    "selectTransition": 1,
}


@dataclass(frozen=True)
class ECARule:
    event: RStruct
    condition: tuple
    actions: tuple
    index: int = 0

    def text(self) -> str:
        cond = f" if {', '.join(term_text(c) for c in self.condition)}" if self.condition else ""
        acts = ", ".join(term_text(a) for a in self.actions)
        return f"on({term_text(self.event)}){cond} do {acts}."


@dataclass(frozen=True)
class MessagingRule:
    trigger: MsgPattern
    steps: tuple
    index: int = 0

    def text(self) -> str:
        parts = []
        for step in self.steps:
            if isinstance(step, SendStep):
                parts.append(_msg_text("sendMsg", step.pattern))
            elif isinstance(step, ReceiveStep):
                parts.append(_msg_text("rcvMsg", step.pattern))
            else:
                parts.append(term_text(step.literal))
        return f"{_msg_text('rcvMsg', self.trigger)} :- {', '.join(parts)}."


@dataclass
class RuleBase:
    derivation: list[DerivationRule] = field(default_factory=list)
    eca: list[ECARule] = field(default_factory=list)
    messaging: list[MessagingRule] = field(default_factory=list)

    def all_rules(self) -> list:
        ordered = list(self.derivation) + list(self.eca) + list(self.messaging)
        return sorted(ordered, key=lambda r: r.index)

    def merged_with(self, other: "RuleBase") -> "RuleBase":
        merged = RuleBase(list(self.derivation), list(self.eca), list(self.messaging))
        offset = len(self.derivation) + len(self.eca) + len(self.messaging)
        for r in other.derivation:
            merged.derivation.append(DerivationRule(r.head, r.body, r.index + offset))
        for r in other.eca:
            merged.eca.append(ECARule(r.event, r.condition, r.actions, r.index + offset))
        for r in other.messaging:
            merged.messaging.append(MessagingRule(r.trigger, r.steps, r.index + offset))
        return merged


def term_text(t) -> str:
    if isinstance(t, RVar):
        return t.name
    if isinstance(t, RAtom):
        return t.name
    if isinstance(t, Term):
        return nt_term(t)
    if isinstance(t, RList):
        return "[" + ", ".join(term_text(x) for x in t.items) + "]"
    if isinstance(t, RStruct):
        if not t.args:
            return t.functor
        return f"{t.functor}({', '.join(term_text(a) for a in t.args)})"
    if isinstance(t, Compare):
        return f"{term_text(t.left)} {t.op} {term_text(t.right)}"
    if isinstance(t, Naf):
        return f"not({term_text(t.goal)})"
    return repr(t)


def _msg_text(functor: str, p: MsgPattern) -> str:
    return f"{functor}({', '.join(term_text(f) for f in p.fields())})"


def term_vars(t) -> set[str]:
    if isinstance(t, RVar):
        return {t.name}
    if isinstance(t, (RAtom, Term)):
        return set()
    if isinstance(t, RList):
        out = set()
        for x in t.items:
            out |= term_vars(x)
        return out
    if isinstance(t, RStruct):
        out = set()
        for a in t.args:
            out |= term_vars(a)
        return out
    if isinstance(t, Compare):
        return term_vars(t.left) | term_vars(t.right)
    if isinstance(t, Naf):
        return term_vars(t.goal)
    if isinstance(t, MsgPattern):
        out = set()
        for f in t.fields():
            out |= term_vars(f)
        return out
    return set()


# --- tokenizer / parser -----------------------------------------------------------

_RULE_TOKEN_SPEC = [
    ("WS", r"[ \t\r]+"),
    ("NL", r"\n"),
    ("COMMENT", r"[%#][^\n]*"),
    ("ARROW", r":-"),
    ("IRIREF", r"<[^<>\s]*>"),
    ("STRING", r'"(?:[^"\\]|\\.)*"'),
    ("NUMBER", r"[+-]?\d+(?:\.\d+)?"),
    ("CURIE", r"[A-Za-z_][A-Za-z0-9_]*:[A-Za-z0-9_][A-Za-z0-9_\-/#%.]*"),
    ("NAME", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("OP", r"!=|<=|>=|[=<>()\[\],.]"),
]
_RULE_TOKEN_RE = re.compile("|".join(f"(?P<{n}>{p})" for n, p in _RULE_TOKEN_SPEC))


@dataclass
class _RTok:
    kind: str
    text: str
    line: int


def _tokenize_rules(text: str) -> list[_RTok]:
    tokens = []
    line = 1
    pos = 0
    while pos < len(text):
        m = _RULE_TOKEN_RE.match(text, pos)
        if not m:
            raise RuleSyntaxError(f"unexpected character {text[pos]!r}", line)
        kind = m.lastgroup
        if kind == "NL":
            line += 1
        elif kind not in ("WS", "COMMENT"):
            tokens.append(_RTok(kind, m.group(), line))
        pos = m.end()
    tokens.append(_RTok("EOF", "", line))
    return tokens


class _RuleParser:
    def __init__(self, text: str, prefixes: dict[str, str]):
        self.tokens = _tokenize_rules(text)
        self.prefixes = prefixes
        self.i = 0

    def peek(self) -> _RTok:
        return self.tokens[self.i]

    def next(self) -> _RTok:
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def error(self, message: str) -> RuleSyntaxError:
        return RuleSyntaxError(message, self.peek().line)

    def expect(self, text: str):
        tok = self.next()
        if tok.text != text:
            raise RuleSyntaxError(f"expected {text!r}, found {tok.text!r}", tok.line)

    def at(self, text: str) -> bool:
        return self.peek().text == text

    def parse_rulebase(self) -> RuleBase:
        rb = RuleBase()
        index = 0
        while self.peek().kind != "EOF":
            rule = self.parse_clause(index)
            if isinstance(rule, DerivationRule):
                rb.derivation.append(rule)
            elif isinstance(rule, ECARule):
                rb.eca.append(rule)
            else:
                rb.messaging.append(rule)
            index += 1
        return rb

    def parse_clause(self, index: int):
        head = self.parse_term()
        if isinstance(head, RStruct) and head.functor == "on" and len(head.args) == 1:
            return self.parse_eca(head.args[0], index)
        if not isinstance(head, RStruct):
            raise self.error("clause head must be a compound term")
        body: list = []
        if self.at(":-"):
            self.next()
            body = self.parse_literals(stop={"."})
        self.expect(".")
        if head.functor == "rcvMsg":
            return self._build_messaging(head, body, index)
        rule = DerivationRule(head, tuple(body), index)
        _check_derivation_range(rule)
        return rule

    def parse_eca(self, event, index: int) -> ECARule:
        if not isinstance(event, RStruct):
            raise self.error("ECA event pattern must be a compound term")
        condition: list = []
        if self.at("if"):
            self.next()
            condition = self.parse_literals(stop={"do"})
        self.expect("do")
        actions = self.parse_actions()
        self.expect(".")
        rule = ECARule(event, tuple(condition), tuple(actions), index)
        _check_eca_range(rule)
        return rule

    def parse_actions(self) -> list[RStruct]:
        actions = []
        while True:
            term = self.parse_term()
            if not isinstance(term, RStruct) or term.functor not in ACTION_ARITIES:
                raise self.error(
                    f"unknown action {term_text(term)!r}; expected one of {sorted(ACTION_ARITIES)}")
            if len(term.args) != ACTION_ARITIES[term.functor]:
                raise self.error(
                    f"action {term.functor} takes {ACTION_ARITIES[term.functor]} arguments")
            actions.append(term)
            if self.at(","):
                self.next()
                continue
            return actions

    def parse_literals(self, stop: set[str]) -> list:
        literals = [self.parse_literal()]
        while self.at(","):
            self.next()
            literals.append(self.parse_literal())
        if self.peek().text not in stop:
            raise self.error(f"expected one of {sorted(stop)}")
        return literals

    def parse_literal(self):
        if self.peek().text == "not":
            # lookahead: "not(" is negation, bare "not" would be an atom
            if self.tokens[self.i + 1].text == "(":
                self.next()
                self.expect("(")
                goal = self.parse_term()
                if not isinstance(goal, RStruct):
                    raise self.error("negation takes a compound goal")
                self.expect(")")
                return Naf(goal)
        left = self.parse_term()
        if self.peek().kind == "OP" and self.peek().text in ("=", "!=", "<", "<=", ">", ">="):
            op = self.next().text
            right = self.parse_term()
            return Compare(op, left, right)
        if not isinstance(left, RStruct):
            raise self.error("body literal must be a compound term or comparison")
        return left

    def parse_term(self):
        tok = self.next()
        if tok.kind == "IRIREF":
            return Term("iri", tok.text[1:-1])
        if tok.kind == "STRING":
            return Term("literal", _unescape(tok.text[1:-1]))
        if tok.kind == "NUMBER":
            dt = XSD + ("decimal" if "." in tok.text else "integer")
            return Term("literal", tok.text, datatype=dt)
        if tok.kind == "CURIE":
            prefix, _, local = tok.text.partition(":")
            if prefix not in self.prefixes:
                raise RuleSyntaxError(f"unknown prefix {prefix!r}", tok.line)
            return Term("iri", self.prefixes[prefix] + local)
        if tok.kind == "OP" and tok.text == "[":
            items = []
            if not self.at("]"):
                items.append(self.parse_term())
                while self.at(","):
                    self.next()
                    items.append(self.parse_term())
            self.expect("]")
            return RList(tuple(items))
        if tok.kind == "NAME":
            if self.at("("):
                self.next()
                args = [self.parse_term()]
                while self.at(","):
                    self.next()
                    args.append(self.parse_term())
                self.expect(")")
                return RStruct(tok.text, tuple(args))
            if tok.text[0].isupper() or tok.text[0] == "_":
                return RVar(tok.text)
            return RAtom(tok.text)
        raise RuleSyntaxError(f"expected a term, found {tok.text!r}", tok.line)

    def _build_messaging(self, head: RStruct, body: list, index: int) -> MessagingRule:
        trigger = _msg_pattern(head, self.error)
        steps: list = []
        for literal in body:
            if isinstance(literal, RStruct) and literal.functor == "sendMsg":
                steps.append(SendStep(_msg_pattern(literal, self.error)))
            elif isinstance(literal, RStruct) and literal.functor == "rcvMsg":
                steps.append(ReceiveStep(_msg_pattern(literal, self.error)))
            else:
                steps.append(GoalStep(literal))
        rule = MessagingRule(trigger, tuple(steps), index)
        _check_messaging(rule)
        return rule


def _msg_pattern(struct: RStruct, error) -> MsgPattern:
    if len(struct.args) != 5:
        raise error(f"{struct.functor} takes 5 arguments (cid, protocol, agent, performative, payload)")
    return MsgPattern(*struct.args)


def _unescape(value: str) -> str:
    out = []
    i = 0
    while i < len(value):
        if value[i] == "\\" and i + 1 < len(value):
            out.append({"n": "\n", "t": "\t", "r": "\r"}.get(value[i + 1], value[i + 1]))
            i += 2
        else:
            out.append(value[i])
            i += 1
    return "".join(out)


def _positive_body_vars(body) -> set[str]:
    bound: set[str] = set()
    for literal in body:
        if isinstance(literal, RStruct):
            bound |= term_vars(literal)
    return bound


def _check_derivation_range(rule: DerivationRule) -> None:
    bound = _positive_body_vars(rule.body)
    for v in sorted(term_vars(rule.head)):
        if rule.body and v in bound:
            continue
        if not rule.body:
            # facts must be ground
            raise RangeViolationError(rule.text(), v)
        raise RangeViolationError(rule.text(), v)


def _check_eca_range(rule: ECARule) -> None:
    bound = term_vars(rule.event) | _positive_body_vars(rule.condition)
    for action in rule.actions:
        for v in sorted(term_vars(action)):
            if v not in bound:
                raise RangeViolationError(rule.text(), v)


def _check_messaging(rule: MessagingRule) -> None:
    trigger_cid = rule.trigger.cid
    bound = term_vars(rule.trigger)
    for step in rule.steps:
        if isinstance(step, GoalStep):
            if isinstance(step.literal, RStruct):
                bound |= term_vars(step.literal)
        elif isinstance(step, SendStep):
            for v in sorted(term_vars(step.pattern)):
                if v not in bound:
                    raise RangeViolationError(rule.text(), v)
        elif isinstance(step, ReceiveStep):
            # conversation locality: nested receives stay in the trigger's conversation
            if step.pattern.cid != trigger_cid:
                raise RuleSyntaxError(
                    f"nested receive must reuse the trigger conversation id {term_text(trigger_cid)}",
                    0,
                )
            bound |= term_vars(step.pattern)


def parse_rules(text: str, prefixes: dict[str, str] | None = None) -> RuleBase:
    """Parse rule text into a rulebase; range restriction checked per rule."""
    table = dict(DEFAULT_PREFIXES)
    if prefixes:
        table.update(prefixes)
    return _RuleParser(text, table).parse_rulebase()


# --- unification / solving ---------------------------------------------------------

def walk(t, binding: dict):
    while isinstance(t, RVar) and t.name in binding:
        t = binding[t.name]
    return t


def resolve(t, binding: dict):
    t = walk(t, binding)
    if isinstance(t, RList):
        return RList(tuple(resolve(x, binding) for x in t.items))
    if isinstance(t, RStruct):
        return RStruct(t.functor, tuple(resolve(a, binding) for a in t.args))
    return t


def unify(a, b, binding: dict) -> dict | None:
    a = walk(a, binding)
    b = walk(b, binding)
    if isinstance(a, RVar):
        out = dict(binding)
        out[a.name] = b
        return out
    if isinstance(b, RVar):
        out = dict(binding)
        out[b.name] = a
        return out
    if isinstance(a, RAtom) and isinstance(b, RAtom):
        return binding if a.name == b.name else None
    if isinstance(a, Term) and isinstance(b, Term):
        return binding if a == b else None
    if isinstance(a, RList) and isinstance(b, RList):
        if len(a.items) != len(b.items):
            return None
        for x, y in zip(a.items, b.items):
            binding = unify(x, y, binding)
            if binding is None:
                return None
        return binding
    if isinstance(a, RStruct) and isinstance(b, RStruct):
        if a.functor != b.functor or len(a.args) != len(b.args):
            return None
        for x, y in zip(a.args, b.args):
            binding = unify(x, y, binding)
            if binding is None:
                return None
        return binding
    return None


def is_ground(t) -> bool:
    return not term_vars(t)


class _Renamer:
    def __init__(self):
        self.counter = 0

    def fresh(self, rule_vars: Iterable[str]) -> dict[str, RVar]:
        self.counter += 1
        return {v: RVar(f"{v}#{self.counter}") for v in rule_vars}


def _rename(t, mapping: dict[str, RVar]):
    if isinstance(t, RVar):
        return mapping.get(t.name, t)
    if isinstance(t, RList):
        return RList(tuple(_rename(x, mapping) for x in t.items))
    if isinstance(t, RStruct):
        return RStruct(t.functor, tuple(_rename(a, mapping) for a in t.args))
    if isinstance(t, Compare):
        return Compare(t.op, _rename(t.left, mapping), _rename(t.right, mapping))
    if isinstance(t, Naf):
        return Naf(_rename(t.goal, mapping))
    return t


@dataclass
class SolveResult:
    answers: list[dict]
    depth_limited: bool = False

    def __iter__(self) -> Iterator[dict]:
        return iter(self.answers)

    def __len__(self):
        return len(self.answers)


DEFAULT_DEPTH_LIMIT = 512


def _to_pattern_term(t):
    if isinstance(t, RVar):
        return Var(t.name)
    if isinstance(t, Term):
        return t
    return None  # atoms/lists/structs never occur in the store


def _compare_rterms(op: str, a, b) -> bool:
    from .sparql import compare_terms

    if isinstance(a, Term) and isinstance(b, Term):
        return compare_terms(op, a, b)
    ta, tb = term_text(a), term_text(b)
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    return {"<": ta < tb, "<=": ta <= tb, ">": ta > tb, ">=": ta >= tb}[op]


class _Flags:
    def __init__(self):
        self.limited = False


def _solve_goals(goals, binding, rb, view, depth, renamer, flags):
    if not goals:
        yield binding
        return
    if depth <= 0:
        flags.limited = True
        return
    goal, rest = goals[0], goals[1:]

    if isinstance(goal, Compare):
        left = resolve(goal.left, binding)
        right = resolve(goal.right, binding)
        if goal.op == "=":
            unified = unify(left, right, binding)
            if unified is not None:
                yield from _solve_goals(rest, unified, rb, view, depth, renamer, flags)
            return
        if not (is_ground(left) and is_ground(right)):
            return
        if _compare_rterms(goal.op, left, right):
            yield from _solve_goals(rest, binding, rb, view, depth, renamer, flags)
        return

    if isinstance(goal, Naf):
        sub = resolve(goal.goal, binding)
        if not is_ground(sub):
            raise NonGroundNegationError(f"negation of non-ground goal {term_text(sub)}")
        inner = _Flags()
        answers = list(_solve_goals([sub], {}, rb, view, depth - 1, renamer, inner))
        if inner.limited:
            flags.limited = True
        if not answers:
            yield from _solve_goals(rest, binding, rb, view, depth, renamer, flags)
        return

    struct = resolve(goal, binding)
    if not isinstance(struct, RStruct):
        return

    if struct.functor == "triple" and len(struct.args) == 3:
        parts = [_to_pattern_term(a) for a in struct.args]
        if any(p is None for p in parts):
            return
        pattern = TriplePattern(*parts)
        if isinstance(pattern.subject, Term) and not pattern.subject.is_iri:
            return
        if isinstance(pattern.predicate, Term) and not pattern.predicate.is_iri:
            return
        for row in view.match(pattern):
            extended = dict(binding)
            extended.update(row)
            yield from _solve_goals(rest, extended, rb, view, depth, renamer, flags)
        return

    for rule in rb.derivation:
        if rule.head.functor != struct.functor or len(rule.head.args) != len(struct.args):
            continue
        mapping = renamer.fresh(term_vars(rule.head) | _all_body_vars(rule.body))
        head = _rename(rule.head, mapping)
        unified = unify(struct, head, binding)
        if unified is None:
            continue
        body = [_rename(b, mapping) for b in rule.body]
        yield from _solve_goals(body + rest, unified, rb, view, depth - 1, renamer, flags)


def _all_body_vars(body) -> set[str]:
    out: set[str] = set()
    for literal in body:
        out |= term_vars(literal)
    return out


def solve(goal: RStruct, rulebase: RuleBase, view: StoreView,
          depth_limit: int = DEFAULT_DEPTH_LIMIT) -> SolveResult:
    """All answers for the goal by SLD backward chaining, deterministic order."""
    if depth_limit <= 0:
        raise RuleError("depth limit must be positive")
    renamer = _Renamer()
    flags = _Flags()
    goal_vars = sorted(term_vars(goal))
    seen = {}
    for binding in _solve_goals([goal], {}, rulebase, view, depth_limit, renamer, flags):
        answer = {v: resolve(RVar(v), binding) for v in goal_vars}
        key = tuple(term_text(answer[v]) for v in goal_vars)
        seen.setdefault(key, answer)
    return SolveResult([seen[k] for k in sorted(seen)], flags.limited)


def solve_conjunction(literals, seed_binding: dict, rulebase: RuleBase, view: StoreView,
                      depth_limit: int = DEFAULT_DEPTH_LIMIT) -> list[dict]:
    """Solutions of a body conjunction, sorted; used by ECA conditions and messaging."""
    renamer = _Renamer()
    flags = _Flags()
    answers = list(_solve_goals(list(literals), dict(seed_binding), rulebase, view,
                                depth_limit, renamer, flags))
    keyed = {}
    for binding in answers:
        vars_here = set()
        for lit in literals:
            vars_here |= term_vars(lit)
        resolved = {v: resolve(RVar(v), binding) for v in sorted(vars_here)}
        resolved.update({k: resolve(v, binding) for k, v in seed_binding.items()})
        key = tuple(sorted((k, term_text(v)) for k, v in resolved.items()))
        keyed.setdefault(key, binding)
    return [keyed[k] for k in sorted(keyed)]


# --- ECA dispatch --------------------------------------------------------------------

@dataclass(frozen=True)
class RuleEvent:
    """Event shape dispatched into the rule layer: functor plus argument terms."""

    functor: str
    args: tuple
    seq: int = 0

    def struct(self) -> RStruct:
        return RStruct(self.functor, tuple(self.args))


@dataclass
class ActionOutcome:
    rule_index: int
    action: str
    ok: bool
    detail: str = ""
    inserted: int = 0
    removed: int = 0


@dataclass
class DispatchReport:
    outcomes: list[ActionOutcome] = field(default_factory=list)
    selected_transition: str | None = None

    @property
    def inserted(self) -> int:
        return sum(o.inserted for o in self.outcomes)

    @property
    def removed(self) -> int:
        return sum(o.removed for o in self.outcomes)

    def matched_rules(self) -> set[int]:
        return {o.rule_index for o in self.outcomes}


class ActionExecutor:
    """Executes ECA actions against the store and the injected side-effect hooks.

    Hooks default to None: an action whose hook is missing fails (and is
    reported), without affecting other rules.
    """

    def __init__(self, store, send_message=None, mint_page=None, notify=None):
        self.store = store
        self.send_message = send_message
        self.mint_page = mint_page
        self.notify = notify

    def execute(self, action: RStruct, report: DispatchReport) -> tuple[int, int]:
        from .namespaces import PM_STATE
        from .store import Triple, TriplePattern

        name = action.functor
        args = action.args
        if name in ("insert", "delete"):
            terms = [self._store_term(a) for a in args]
            if name == "insert":
                before = self.store.revision
                after = self.store.insert(Triple(*terms))
                return (1 if after != before else 0, 0)
            removed = self.store.remove(TriplePattern(*terms))
            return (0, removed)
        if name == "setState":
            subject = self._store_term(args[0])
            state = self._store_term(args[1])
            removed = self.store.remove(TriplePattern(subject, Term("iri", PM_STATE), None))
            self.store.insert(Triple(subject, Term("iri", PM_STATE), state))
            return (1, removed)
        if name == "send":
            if self.send_message is None:
                raise RuleError("no message transport configured")
            self.send_message(args)
            return (0, 0)
        if name == "mintPage":
            if self.mint_page is None:
                raise RuleError("no page minting hook configured")
            self.mint_page(self._text_value(args[0]), self._text_value(args[1]))
            return (0, 0)
        if name == "notify":
            if self.notify is None:
                raise RuleError("no notifier configured")
            self.notify(self._store_term(args[0]), self._text_value(args[1]),
                        self._store_term(args[2]))
            return (0, 0)
        if name == "selectTransition":
            report.selected_transition = self._text_value(args[0])
            return (0, 0)
        raise RuleError(f"unknown action {name}")

    @staticmethod
    def _store_term(t) -> Term:
        if isinstance(t, Term):
            return t
        if isinstance(t, RAtom):
            return Term("literal", t.name)
        raise RuleError(f"action argument {term_text(t)} is not a store term")

    @staticmethod
    def _text_value(t) -> str:
        if isinstance(t, Term):
            return t.value
        if isinstance(t, RAtom):
            return t.name
        raise RuleError(f"expected a text argument, found {term_text(t)}")


def dispatch_event(event: RuleEvent, rulebase: RuleBase, view_source,
                   executor: ActionExecutor,
                   depth_limit: int = DEFAULT_DEPTH_LIMIT) -> DispatchReport:
    """Run every matching ECA rule in declaration order.

    The condition is solved against a snapshot taken when the rule fires, so
    actions of earlier rules are visible to later conditions. A failing action
    skips the rest of that rule's actions only.
    """
    report = DispatchReport()
    event_struct = event.struct()
    for rule in rulebase.eca:
        theta = unify(rule.event, event_struct, {})
        if theta is None:
            continue
        view = view_source.snapshot() if hasattr(view_source, "snapshot") else view_source
        if rule.condition:
            solutions = solve_conjunction(rule.condition, theta, rulebase, view, depth_limit)
            if not solutions:
                continue
            binding = solutions[0]
        else:
            binding = theta
        for action in rule.actions:
            resolved = resolve(action, binding)
            if not is_ground(resolved):
                unbound = sorted(term_vars(resolved))[0]
                report.outcomes.append(ActionOutcome(
                    rule.index, term_text(resolved), False,
                    f"unbound variable {unbound}"))
                break
            try:
                inserted, removed = executor.execute(resolved, report)
            except Exception as exc:  # noqa: BLE001 - isolate rule failures
                report.outcomes.append(ActionOutcome(
                    rule.index, term_text(resolved), False, str(exc)))
                break
            report.outcomes.append(ActionOutcome(
                rule.index, term_text(resolved), True, "",
                inserted=inserted, removed=removed))
    return report
