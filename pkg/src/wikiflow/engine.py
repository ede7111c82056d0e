"""Token-based process execution.

Walks a process graph with tokens, creates and assigns human tasks, picks
guarded transitions by ASK queries (first-true, else default, else a
rule-based override), and mirrors every lifecycle change into the triple
store through the decoration rulebase.

Engine events carry the eight public kinds; the rule layer additionally
receives synthetic dispatches (taskCreate, stateChange, taskUnassigned,
transitionSelection) so the shipped decoration rules can keep the store
complete even for tasks that never get assigned.
"""

from __future__ import annotations

import re
import threading
from dataclasses import dataclass, field
from importlib import resources

from .clock import SystemClock, isoformat
from .namespaces import DEFAULT_BASE_IRI, PM_ABOUT, PM_HAS_ROLE, RDF_TYPE
from .procdef import (
    DuplicateVersionError,
    Node,
    ProcessDefinition,
    Transition,
    mint_uris,
    parse_definition,
    register,
    validate,
)
from .rules import (
    ActionExecutor,
    DispatchReport,
    RuleBase,
    RuleEvent,
    dispatch_event,
    parse_rules,
)
from .sparql import RenderContext, evaluate_ask, evaluate_select, parse, substitute_context
from .store import StoreView, Term, Triple, TriplePattern, TripleStore, Var, iri, literal


class EngineError(Exception):
    pass


class UnknownDefinitionError(EngineError):
    pass


class DefinitionInvalidError(EngineError):
    def __init__(self, violations):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations


class UnknownTaskError(EngineError):
    pass


class NoEnabledTransitionError(EngineError):
    pass


class WrongUserError(EngineError):
    pass


class WrongStateError(EngineError):
    pass


class FormValidationError(EngineError):
    def __init__(self, fields: list[str], message: str = "form validation failed"):
        super().__init__(f"{message}: {', '.join(fields)}")
        self.fields = fields


EVENT_KINDS = (
    "process-start", "process-end", "task-start", "task-end", "task-assign",
    "transition-taken", "node-enter", "node-leave",
)


@dataclass(frozen=True)
class EngineEvent:
    seq: int
    kind: str
    instance_uri: Term
    subject_uri: Term
    timestamp: str

    def log_line(self) -> str:
        return "\t".join([str(self.seq), self.kind, self.instance_uri.value,
                          self.subject_uri.value, self.timestamp])


@dataclass
class Token:
    id: int
    node: str
    state: str = "active"  # active | waiting-on-task | consumed
    parent: int | None = None
    children: int = 0
    task_id: str | None = None


@dataclass
class TaskInstance:
    id: str
    uri: Term
    node: Node
    instance_id: str
    instance_uri: Term
    state: str = "created"  # created -> assigned -> started -> completed
    assignee: Term | None = None
    form_data: dict[str, Term] = field(default_factory=dict)
    note: str | None = None
    token_id: int | None = None
    created_pages: list[str] = field(default_factory=list)


@dataclass
class ProcessInstance:
    id: str
    uri: Term
    definition: ProcessDefinition
    initiator: Term
    state: str = "running"  # running | ended
    tokens: dict[int, Token] = field(default_factory=dict)
    variables: dict[str, Term] = field(default_factory=dict)
    task_ids: list[str] = field(default_factory=list)
    created: str = ""
    ended: str | None = None
    _token_seq: int = 0
    _task_seq: int = 0
    _join_arrivals: dict = field(default_factory=dict)
    _lock: threading.RLock = field(default_factory=threading.RLock)

    def live_tokens(self) -> list[Token]:
        return [t for t in self.tokens.values() if t.state != "consumed"]


def load_decoration_rulebase() -> RuleBase:
    text = resources.files("wikiflow").joinpath("fixtures/decoration.rules").read_text("utf-8")
    return parse_rules(text)


def _functor(kind: str) -> str:
    head, *rest = kind.split("-")
    return head + "".join(part.capitalize() for part in rest)


_VAR_EXPR_RE = re.compile(r"^\$\{([A-Za-z_][A-Za-z0-9_]*)\}$")
_VAR_INLINE_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")


def choose_transition(transitions: list[Transition], view: StoreView,
                      context: RenderContext, prefixes: dict[str, str]) -> Transition | None:
    """First transition whose ASK guard is true (declaration order); an
    unguarded non-default counts as true; falls back to the default
    transition; None means nothing was enabled."""
    ordered = sorted(transitions, key=lambda t: t.index)
    default = next((t for t in ordered if t.default), None)
    for t in ordered:
        if t.default:
            continue
        if t.guard is None:
            return t
        query = parse(substitute_context(t.guard, context), prefixes)
        if evaluate_ask(query, view):
            return t
    return default


class Engine:
    """One engine per deployment; per-instance steps are serialized."""

    def __init__(self, store: TripleStore, templates=None, rulebase: RuleBase | None = None,
                 clock=None, base_iri: str = DEFAULT_BASE_IRI,
                 grouping_root: Term | None = None, depth_limit: int = 512):
        self.store = store
        self.templates = templates
        self.clock = clock or SystemClock()
        self.base_iri = base_iri
        self.grouping_root = grouping_root
        self.depth_limit = depth_limit
        self.rulebase = load_decoration_rulebase()
        if rulebase is not None:
            self.rulebase = self.rulebase.merged_with(rulebase)
        self.executor = ActionExecutor(store)
        self._definitions: dict[tuple[str, int], ProcessDefinition] = {}
        self._def_instance_seq: dict[tuple[str, int], int] = {}
        self._instances: dict[str, ProcessInstance] = {}
        self._tasks: dict[str, TaskInstance] = {}
        self._events: list[EngineEvent] = []
        self._event_cond = threading.Condition()
        self._seq = 0
        self._dispatch_seq = 0
        self._instance_counter = 0
        self._listeners: list = []
        self._action_bindings: dict[str, object] = {}

    # --- wiring ------------------------------------------------------------

    def add_listener(self, fn) -> None:
        """fn(rule_event) is called for every dispatched lifecycle event."""
        self._listeners.append(fn)

    def bind_action(self, name: str, fn) -> None:
        """Register a completion-action binding: fn(engine, instance, task, params)."""
        self._action_bindings[name] = fn

    # --- deployment ----------------------------------------------------------

    def deploy(self, text: str) -> ProcessDefinition:
        d = parse_definition(text)
        violations = validate(d)
        if violations:
            raise DefinitionInvalidError(violations)
        d = mint_uris(d, self.base_iri)
        key = (d.name, d.version)
        if key in self._definitions:
            raise DuplicateVersionError(f"{d.name} version {d.version} already deployed")
        register(d, self.store)
        self._definitions[key] = d
        self._def_instance_seq[key] = 0
        return d

    def rehydrate(self, text: str) -> ProcessDefinition:
        """Re-load a previously registered definition without re-asserting triples."""
        d = mint_uris(parse_definition(text), self.base_iri)
        key = (d.name, d.version)
        if key in self._definitions:
            raise DuplicateVersionError(f"{d.name} version {d.version} already deployed")
        if not self.store.ask(TriplePattern(d.uri, iri(RDF_TYPE), None)):
            register(d, self.store)
        self._definitions[key] = d
        self._def_instance_seq[key] = 0
        return d

    def definitions(self) -> list[ProcessDefinition]:
        return [self._definitions[k] for k in sorted(self._definitions)]

    def definition(self, name: str, version: int) -> ProcessDefinition:
        try:
            return self._definitions[(name, version)]
        except KeyError:
            raise UnknownDefinitionError(f"{name} version {version}") from None

    # --- events ----------------------------------------------------------------

    def _fire(self, kind: str, inst: ProcessInstance, subject: Term, rule_args: tuple) -> EngineEvent:
        assert kind in EVENT_KINDS
        with self._event_cond:
            self._seq += 1
            event = EngineEvent(self._seq, kind, inst.uri, subject, isoformat(self.clock.now()))
            self._events.append(event)
            self._event_cond.notify_all()
        self._dispatch(_functor(kind), rule_args)
        return event

    def _signal(self, functor: str, args: tuple) -> DispatchReport:
        return self._dispatch(functor, args)

    def _dispatch(self, functor: str, args: tuple) -> DispatchReport:
        self._dispatch_seq += 1
        rule_event = RuleEvent(functor, tuple(args), self._dispatch_seq)
        try:
            report = dispatch_event(rule_event, self.rulebase, self.store, self.executor,
                                    self.depth_limit)
        except Exception as exc:  # noqa: BLE001 - decoration failures never abort the step
            report = DispatchReport()
            report.outcomes = []
            report.error = str(exc)  # type: ignore[attr-defined]
        for listener in self._listeners:
            try:
                listener(rule_event)
            except Exception:  # noqa: BLE001
                pass
        return report

    def decorate(self, event: EngineEvent) -> dict[str, int]:
        """Re-run the reaction rules bound to an already-fired event."""
        if event.kind == "process-start":
            inst = self._instance_by_uri(event.instance_uri)
            args = (event.instance_uri, inst.definition.uri)
        elif event.kind == "process-end":
            args = (event.instance_uri,)
        elif event.kind in ("task-assign", "task-start", "task-end"):
            task = self._task_by_uri(event.subject_uri)
            args = (event.subject_uri, task.assignee)
        else:
            args = (event.instance_uri, event.subject_uri)
        report = self._dispatch(_functor(event.kind), args)
        return {"inserted": report.inserted, "removed": report.removed}

    def _instance_by_uri(self, uri: Term) -> ProcessInstance:
        for inst in self._instances.values():
            if inst.uri == uri:
                return inst
        raise EngineError(f"unknown instance uri {uri.value}")

    def _task_by_uri(self, uri: Term) -> TaskInstance:
        for task in self._tasks.values():
            if task.uri == uri:
                return task
        raise EngineError(f"unknown task uri {uri.value}")

    def events_after(self, after: int, wait_seconds: float = 0.0) -> list[EngineEvent]:
        with self._event_cond:
            if wait_seconds > 0 and not any(e.seq > after for e in self._events):
                self._event_cond.wait(timeout=wait_seconds)
            return [e for e in self._events if e.seq > after]

    @property
    def events(self) -> list[EngineEvent]:
        with self._event_cond:
            return list(self._events)

    def export_event_log(self) -> str:
        return "\n".join(e.log_line() for e in self.events) + ("\n" if self._events else "")

    # --- instance lifecycle -------------------------------------------------------

    def start_process(self, name: str, version: int, initiator: Term,
                      form_data: dict[str, Term] | None = None) -> ProcessInstance:
        d = self.definition(name, version)
        key = (name, version)
        with self._event_cond:
            self._def_instance_seq[key] += 1
            def_seq = self._def_instance_seq[key]
            self._instance_counter += 1
            inst_id = f"i{self._instance_counter}"
        inst = ProcessInstance(
            id=inst_id,
            uri=iri(f"{d.uri.value}/instance/{def_seq}"),
            definition=d,
            initiator=initiator,
            created=isoformat(self.clock.now()),
        )
        inst.variables["initiator"] = initiator
        inst.variables["instanceSeq"] = literal(str(def_seq))
        for k, v in (form_data or {}).items():
            inst.variables[k] = v
        self._instances[inst.id] = inst
        with inst._lock:
            self._fire("process-start", inst, inst.uri, (inst.uri, d.uri))
            self._signal("stateChange", (inst.uri, literal("running")))
            start = d.start_nodes[0]
            token = self._new_token(inst, start.name)
            self._fire("node-enter", inst, start.uri, (inst.uri, start.uri))
            self._advance(inst, token)
        return inst

    def instances(self) -> list[ProcessInstance]:
        return [self._instances[k] for k in sorted(self._instances)]

    def instance(self, instance_id: str) -> ProcessInstance:
        try:
            return self._instances[instance_id]
        except KeyError:
            raise EngineError(f"unknown instance {instance_id}") from None

    def tasks(self) -> list[TaskInstance]:
        return [self._tasks[k] for k in sorted(self._tasks)]

    def task(self, task_id: str) -> TaskInstance:
        try:
            return self._tasks[task_id]
        except KeyError:
            raise UnknownTaskError(task_id) from None

    def _new_token(self, inst: ProcessInstance, node_name: str,
                   parent: int | None = None) -> Token:
        inst._token_seq += 1
        token = Token(inst._token_seq, node_name, parent=parent)
        inst.tokens[token.id] = token
        return token

    # --- graph walking ---------------------------------------------------------

    def advance(self, inst: ProcessInstance, token: Token) -> None:
        """Walk an active token until it blocks on a task, ends, or splits."""
        if token.state != "active":
            raise WrongStateError(f"token {token.id} is {token.state}, not active")
        self._advance(inst, token)

    def _advance(self, inst: ProcessInstance, token: Token, skip_arrival: bool = False) -> None:
        d = inst.definition
        while True:
            node = d.node(token.node)
            if not skip_arrival:
                if node.kind == "task":
                    task = self._create_task(inst, node, token)
                    token.state = "waiting-on-task"
                    token.task_id = task.id
                    return
                if node.kind == "end":
                    token.state = "consumed"
                    if not inst.live_tokens():
                        inst.state = "ended"
                        inst.ended = isoformat(self.clock.now())
                        self._fire("process-end", inst, inst.uri, (inst.uri,))
                        self._signal("stateChange", (inst.uri, literal("ended")))
                    return
                if node.kind == "fork":
                    self._fire("node-leave", inst, node.uri, (inst.uri, node.uri))
                    outgoing = sorted(d.outgoing(node.name), key=lambda t: t.index)
                    token.state = "consumed"
                    token.children = len(outgoing)
                    for transition in outgoing:
                        self._fire("transition-taken", inst, transition.uri,
                                   (inst.uri, transition.uri))
                        child = self._new_token(inst, transition.target, parent=token.id)
                        target = d.node(transition.target)
                        self._fire("node-enter", inst, target.uri, (inst.uri, target.uri))
                        self._advance(inst, child)
                    return
                if node.kind == "join":
                    arrived_parent = token.parent
                    token.state = "consumed"
                    key = (node.name, arrived_parent)
                    inst._join_arrivals[key] = inst._join_arrivals.get(key, 0) + 1
                    expected = (inst.tokens[arrived_parent].children
                                if arrived_parent is not None else 1)
                    if inst._join_arrivals[key] < expected:
                        return
                    grandparent = (inst.tokens[arrived_parent].parent
                                   if arrived_parent is not None else None)
                    token = self._new_token(inst, node.name, parent=grandparent)
                    # fall through: the merged token leaves the join normally
            skip_arrival = False
            self._fire("node-leave", inst, node.uri, (inst.uri, node.uri))
            transition = self._choose(inst, node)
            self._fire("transition-taken", inst, transition.uri, (inst.uri, transition.uri))
            token.node = transition.target
            target = d.node(transition.target)
            self._fire("node-enter", inst, target.uri, (inst.uri, target.uri))

    def _guard_context(self, inst: ProcessInstance) -> RenderContext:
        values = dict(inst.variables)
        values["processInstance"] = inst.uri
        return RenderContext(values)

    def _choose(self, inst: ProcessInstance, node: Node) -> Transition:
        outgoing = inst.definition.outgoing(node.name)
        chosen = choose_transition(outgoing, self.store.snapshot(),
                                   self._guard_context(inst), self.store.prefixes)
        if chosen is not None:
            return chosen
        # rule-based customization hook: a rule may claim the selection
        report = self._signal("transitionSelection", (inst.uri, node.uri))
        if report.selected_transition:
            for t in outgoing:
                if t.target == report.selected_transition:
                    return t
        raise NoEnabledTransitionError(
            f"no enabled transition out of {node.name} in {inst.uri.value}")

    # --- tasks ----------------------------------------------------------------------

    def _create_task(self, inst: ProcessInstance, node: Node, token: Token) -> TaskInstance:
        inst._task_seq += 1
        with self._event_cond:
            task_number = len(self._tasks) + 1
        task = TaskInstance(
            id=f"t{task_number}",
            uri=iri(f"{inst.uri.value}/task/{inst._task_seq}"),
            node=node,
            instance_id=inst.id,
            instance_uri=inst.uri,
            token_id=token.id,
        )
        self._tasks[task.id] = task
        inst.task_ids.append(task.id)
        self._signal("taskCreate", (task.uri, inst.uri, node.uri))
        self._signal("stateChange", (task.uri, literal("created")))
        subject = self._task_subject(inst, node)
        if subject is not None:
            self.store.insert(Triple(task.uri, iri(PM_ABOUT), subject))
        self.assign_task(task)
        return task

    def _task_subject(self, inst: ProcessInstance, node: Node) -> Term | None:
        if not node.subject_expr:
            return None
        m = _VAR_EXPR_RE.match(node.subject_expr)
        if not m:
            raise EngineError(f"bad subject expression {node.subject_expr!r}")
        return inst.variables.get(m.group(1))

    def assign_task(self, task: TaskInstance) -> Term | None:
        """Resolve the task's swimlane to an assignee; zero candidates leave the
        task in the unassigned pool, ties go to the smallest user IRI."""
        if task.state != "created":
            raise WrongStateError(f"task {task.id} is {task.state}, not created")
        inst = self._instances[task.instance_id]
        lane = inst.definition.lane(task.node.lane)
        view = self.store.snapshot()
        if lane.role is not None:
            role = self._resolve_iri(lane.role)
            rows = view.match(TriplePattern(Var("u"), iri(PM_HAS_ROLE), role))
            candidates = sorted({r["u"] for r in rows if r["u"].is_iri}, key=lambda t: t.value)
        else:
            ctx = RenderContext({**inst.variables,
                                 "task": task.uri, "processInstance": inst.uri})
            query = parse(substitute_context(lane.query, ctx), view.prefixes)
            result = evaluate_select(query, view)
            var = result.variables[0]
            candidates = sorted({row[var] for row in result.rows
                                 if var in row and row[var].is_iri},
                                key=lambda t: t.value)
        if not candidates:
            self._signal("taskUnassigned", (task.uri, inst.uri))
            return None
        if len(candidates) > 1:
            task.note = "multiple-candidates: " + ", ".join(c.value for c in candidates)
        task.assignee = candidates[0]
        task.state = "assigned"
        self._fire("task-assign", inst, task.uri, (task.uri, task.assignee))
        self._signal("stateChange", (task.uri, literal("assigned")))
        return task.assignee

    def reassign_task(self, task_id: str, user: Term) -> TaskInstance:
        """Administrative re-assignment; allowed before work starts."""
        task = self.task(task_id)
        if task.state not in ("created", "assigned"):
            raise WrongStateError(f"cannot reassign task in state {task.state}")
        inst = self._instances[task.instance_id]
        with inst._lock:
            task.assignee = user
            task.state = "assigned"
            self._fire("task-assign", inst, task.uri, (task.uri, user))
            self._signal("stateChange", (task.uri, literal("assigned")))
        return task

    def _resolve_iri(self, text: str) -> Term:
        if text.startswith("<") and text.endswith(">"):
            return iri(text[1:-1])
        if ":" in text:
            prefix = text.split(":", 1)[0]
            if prefix in self.store.prefixes:
                return iri(self.store.expand(text))
        return iri(text)

    def start_task(self, task_id: str, user: Term) -> TaskInstance:
        task = self.task(task_id)
        inst = self._instances[task.instance_id]
        with inst._lock:
            if task.state != "assigned":
                raise WrongStateError(f"task {task.id} is {task.state}, not assigned")
            if task.assignee != user:
                raise WrongUserError(f"task {task.id} is assigned to {task.assignee}")
            task.state = "started"
            self._fire("task-start", inst, task.uri, (task.uri, user))
            self._signal("stateChange", (task.uri, literal("started")))
        return task

    def complete_task(self, task_id: str, user: Term,
                      form_data: dict[str, Term] | None = None) -> TaskInstance:
        task = self.task(task_id)
        inst = self._instances[task.instance_id]
        with inst._lock:
            if task.state != "started":
                raise WrongStateError(f"task {task.id} is {task.state}, not started")
            if task.assignee != user:
                raise WrongUserError(f"task {task.id} is assigned to {task.assignee}")
            form = dict(form_data or {})
            template = self._template_for(task.node)
            if template is not None:
                self._validate_form(template, form)
            task.form_data = form
            for name, value in form.items():
                inst.variables[name] = value
                if template is not None and name in template.predicates:
                    self.store.insert(Triple(task.uri, iri(template.predicates[name]), value))
            task.state = "completed"
            self._fire("task-end", inst, task.uri, (task.uri, user))
            self._signal("stateChange", (task.uri, literal("completed")))
            for binding in task.node.actions:
                self._run_action(inst, task, binding, user)
            token = inst.tokens[task.token_id]
            token.state = "active"
            token.task_id = None
            self._advance(inst, token, skip_arrival=True)
        return task

    def _template_for(self, node: Node):
        if node.template is None or self.templates is None:
            return None
        template = self.templates.get(node.template)
        if template is None:
            raise EngineError(f"task references unknown template {node.template!r}")
        return template

    @staticmethod
    def _validate_form(template, form: dict[str, Term]) -> None:
        bad: list[str] = []
        for name in template.required_fields:
            if name not in form:
                bad.append(name)
        for name, value in form.items():
            ftype = template.field_types.get(name)
            if ftype in ("concept-iri", "resource-iri") and not value.is_iri:
                bad.append(name)
        if bad:
            raise FormValidationError(sorted(set(bad)))

    def _run_action(self, inst: ProcessInstance, task: TaskInstance, binding, user: Term) -> None:
        fn = self._action_bindings.get(binding.name)
        if fn is None:
            raise EngineError(f"no action binding registered for {binding.name!r}")
        params = {k: self._expand_params(inst, v) for k, v in binding.params.items()}
        fn(self, inst, task, params, user)

    def _expand_params(self, inst: ProcessInstance, value: str) -> str:
        def sub(m):
            term = inst.variables.get(m.group(1))
            if term is None:
                raise EngineError(f"action parameter references unset variable {m.group(1)!r}")
            return term.value

        return _VAR_INLINE_RE.sub(sub, value)

    # --- task lists --------------------------------------------------------------------

    def open_tasks(self, user: Term) -> list[TaskInstance]:
        return [t for t in self.tasks()
                if t.assignee == user and t.state in ("assigned", "started")]

    def list_tasks(self, user: Term, view: StoreView | None = None) -> list[tuple[Term | None, list[TaskInstance]]]:
        """Open tasks grouped by the task subject's class, generalized to the
        configured grouping level via the subclass closure."""
        view = view or self.store.snapshot()
        groups: dict[str, tuple[Term | None, list[TaskInstance]]] = {}
        for task in self.open_tasks(user):
            group = self._group_concept(task, view)
            key = group.value if group is not None else ""
            groups.setdefault(key, (group, []))[1].append(task)
        return [groups[k] for k in sorted(groups)]

    def _group_concept(self, task: TaskInstance, view: StoreView) -> Term | None:
        rows = view.match(TriplePattern(task.uri, iri(PM_ABOUT), Var("s")))
        if not rows:
            return None
        subject = rows[0]["s"]
        if not subject.is_iri:
            return None
        typed = view.match(TriplePattern(subject, iri(RDF_TYPE), Var("c")))
        cls = typed[0]["c"] if typed else subject
        if self.grouping_root is None:
            return cls
        sub = iri("http://www.w3.org/2000/01/rdf-schema#subClassOf")
        members = [m for m in view.subclass_closure(cls)
                   if Triple(m, sub, self.grouping_root) in view.triples]
        if not members:
            return cls
        return sorted(members, key=lambda t: t.value)[0]
