"""Message-driven choreography: conversation-stateful delivery of event
messages against messaging reaction rules.

Each conversation keeps its own pending continuations, saved variable
bindings, and a mailbox of not-yet-matched messages, so interleaving many
conversations never leaks state between them. Outbound messages go through
named transports (in-memory queues or HTTP endpoints) and never block on
the receiver.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

from .rules import (
    GoalStep,
    MessagingRule,
    MsgPattern,
    RAtom,
    ReceiveStep,
    RList,
    RStruct,
    RuleBase,
    RuleError,
    SendStep,
    _Renamer,
    _rename,
    is_ground,
    resolve,
    solve_conjunction,
    term_text,
    term_vars,
    unify,
)
from .store import Term, TripleStore


class ChoreographyError(RuleError):
    pass


class UnknownTransportError(ChoreographyError):
    def __init__(self, name: str):
        super().__init__(f"unknown transport {name!r}")
        self.transport = name


class UnreachableEndpointError(ChoreographyError):
    pass


@dataclass(frozen=True)
class EventMessage:
    """Ground message: conversation id, transport protocol, endpoints, payload."""

    cid: str
    protocol: str
    sender: str
    receiver: str
    performative: str
    payload: tuple = ()

    def __post_init__(self):
        if not self.cid:
            raise ChoreographyError("conversation id must be non-empty")
        for item in self.payload:
            if not is_ground(item):
                raise ChoreographyError(f"payload term {term_text(item)} is not ground")

    def fields(self):
        return (RAtom(self.cid), RAtom(self.protocol), RAtom(self.sender),
                RAtom(self.performative), RList(tuple(self.payload)))

    def to_json(self) -> dict:
        return {
            "cid": self.cid,
            "protocol": self.protocol,
            "sender": self.sender,
            "receiver": self.receiver,
            "performative": self.performative,
            "payload": [_term_json(t) for t in self.payload],
        }

    @classmethod
    def from_json(cls, data: dict) -> "EventMessage":
        return cls(
            cid=data["cid"],
            protocol=data["protocol"],
            sender=data["sender"],
            receiver=data["receiver"],
            performative=data["performative"],
            payload=tuple(_term_from_json(t) for t in data.get("payload", [])),
        )


def _term_json(t) -> dict:
    if isinstance(t, RAtom):
        return {"atom": t.name}
    if isinstance(t, Term):
        if t.is_iri:
            return {"iri": t.value}
        out: dict = {"literal": t.value}
        if t.datatype:
            out["datatype"] = t.datatype
        if t.lang:
            out["lang"] = t.lang
        return out
    if isinstance(t, RList):
        return {"list": [_term_json(x) for x in t.items]}
    raise ChoreographyError(f"cannot serialize payload term {term_text(t)}")


def _term_from_json(data: dict):
    if "atom" in data:
        return RAtom(data["atom"])
    if "iri" in data:
        return Term("iri", data["iri"])
    if "literal" in data:
        return Term("literal", data["literal"], datatype=data.get("datatype"),
                    lang=data.get("lang"))
    if "list" in data:
        return RList(tuple(_term_from_json(x) for x in data["list"]))
    raise ChoreographyError(f"unparseable payload term {data!r}")


@dataclass
class Receipt:
    transport: str
    seq: int
    detail: str = ""


class InMemoryTransport:
    """Ordered queue; the receiving side drains it explicitly."""

    def __init__(self, name: str):
        self.name = name
        self.queue: list[EventMessage] = []
        self._seq = 0
        self._lock = threading.Lock()

    def send(self, msg: EventMessage) -> Receipt:
        with self._lock:
            self._seq += 1
            self.queue.append(msg)
            return Receipt(self.name, self._seq)

    def drain(self) -> list[EventMessage]:
        with self._lock:
            out = self.queue[:]
            self.queue.clear()
            return out


class HttpTransport:
    """POSTs message JSON to a peer endpoint."""

    def __init__(self, name: str, url: str, timeout: float = 5.0):
        self.name = name
        self.url = url
        self.timeout = timeout
        self._seq = 0
        self._lock = threading.Lock()

    def send(self, msg: EventMessage) -> Receipt:
        import httpx

        try:
            response = httpx.post(self.url, json=msg.to_json(), timeout=self.timeout)
        except httpx.HTTPError as exc:
            raise UnreachableEndpointError(f"{self.url}: {exc}") from exc
        if response.status_code >= 400:
            raise UnreachableEndpointError(f"{self.url}: HTTP {response.status_code}")
        with self._lock:
            self._seq += 1
            return Receipt(self.name, self._seq, f"HTTP {response.status_code}")


@dataclass
class Continuation:
    pattern: MsgPattern
    bindings: dict
    remaining: tuple
    branch: int


@dataclass
class Conversation:
    id: str
    partners: set = field(default_factory=set)
    pending: list[Continuation] = field(default_factory=list)
    mailbox: list[EventMessage] = field(default_factory=list)
    started: bool = False

    @property
    def completed(self) -> bool:
        return self.started and not self.pending


class ChoreographyEngine:
    """Delivers messages to messaging rules, one conversation at a time."""

    def __init__(self, rulebase: RuleBase, store: TripleStore | None = None,
                 agent: str = "engine", depth_limit: int = 512):
        self.rulebase = rulebase
        self.store = store or TripleStore()
        self.agent = agent
        self.depth_limit = depth_limit
        self.transports: dict[str, object] = {"memory": InMemoryTransport("memory")}
        self.outbox: list[EventMessage] = []
        self.conversations: dict[str, Conversation] = {}
        self._renamer = _Renamer()
        self._branch_counter = 0
        self._registry_lock = threading.Lock()
        self._conv_locks: dict[str, threading.RLock] = {}

    def register_transport(self, name: str, transport) -> None:
        self.transports[name] = transport

    # --- sending -----------------------------------------------------------------

    def send_message(self, msg: EventMessage, transport: str | None = None) -> Receipt:
        """Enqueue on the named transport (default: the message's protocol tag)."""
        name = transport or msg.protocol
        if name not in self.transports:
            raise UnknownTransportError(name)
        receipt = self.transports[name].send(msg)
        with self._registry_lock:
            self.outbox.append(msg)
        return receipt

    def send_action(self, args: tuple) -> None:
        """ECA 'send' action hook: (cid, protocol, receiver, performative, payload)."""
        cid, protocol, receiver, performative, payload = args
        msg = EventMessage(
            cid=_text(cid), protocol=_text(protocol), sender=self.agent,
            receiver=_text(receiver), performative=_text(performative),
            payload=payload.items if isinstance(payload, RList) else (payload,),
        )
        self.send_message(msg)

    # --- delivery -------------------------------------------------------------------

    def _conversation(self, cid: str) -> tuple[Conversation, threading.RLock]:
        with self._registry_lock:
            conv = self.conversations.get(cid)
            if conv is None:
                conv = Conversation(cid)
                self.conversations[cid] = conv
                self._conv_locks[cid] = threading.RLock()
            return conv, self._conv_locks[cid]

    def deliver(self, msg: EventMessage) -> list[str]:
        """Match a message: pending continuations first (suspension order), then
        rule triggers; unmatched messages park in the conversation mailbox."""
        conv, lock = self._conversation(msg.cid)
        with lock:
            outcomes: list[str] = []
            conv.partners.add(msg.sender)
            if self._try_message(conv, msg, outcomes):
                self._drain_mailbox(conv, outcomes)
            else:
                conv.mailbox.append(msg)
                outcomes.append(f"parked {msg.performative} in {msg.cid}")
            return outcomes

    def _try_message(self, conv: Conversation, msg: EventMessage,
                     outcomes: list[str]) -> bool:
        fields_ = msg.fields()
        for cont in list(conv.pending):
            binding = _unify_pattern(cont.pattern, fields_, dict(cont.bindings))
            if binding is None:
                continue
            conv.pending.remove(cont)
            outcomes.append(f"resumed branch {cont.branch} on {msg.performative}")
            self._run_steps(conv, cont.remaining, binding, cont.branch, outcomes)
            return True
        for rule in self.rulebase.messaging:
            mapping = self._renamer.fresh(_rule_vars(rule))
            trigger = _rename_pattern(rule.trigger, mapping)
            binding = _unify_pattern(trigger, fields_, {})
            if binding is None:
                continue
            self._branch_counter += 1
            branch = self._branch_counter
            conv.started = True
            outcomes.append(f"started branch {branch} on {msg.performative}")
            steps = tuple(_rename_step(s, mapping) for s in rule.steps)
            self._run_steps(conv, steps, binding, branch, outcomes)
            return True
        return False

    def _run_steps(self, conv: Conversation, steps: tuple, binding: dict,
                   branch: int, outcomes: list[str]) -> None:
        if not steps:
            outcomes.append(f"branch {branch} completed")
            return
        step, rest = steps[0], steps[1:]
        if isinstance(step, GoalStep):
            solutions = solve_conjunction([step.literal], binding, self.rulebase,
                                          self.store.snapshot(), self.depth_limit)
            if not solutions:
                outcomes.append(
                    f"branch {branch} failed goal {term_text(resolve(step.literal, binding))}")
                return
            for solution in solutions:
                self._run_steps(conv, rest, solution, branch, outcomes)
            return
        if isinstance(step, SendStep):
            resolved = [resolve(f, binding) for f in step.pattern.fields()]
            if any(not is_ground(f) for f in resolved):
                outcomes.append(f"branch {branch} failed: non-ground send")
                return
            cid, protocol, receiver, performative, payload = resolved
            msg = EventMessage(
                cid=_text(cid), protocol=_text(protocol), sender=self.agent,
                receiver=_text(receiver), performative=_text(performative),
                payload=payload.items if isinstance(payload, RList) else (payload,),
            )
            try:
                self.send_message(msg)
            except ChoreographyError as exc:
                outcomes.append(f"branch {branch} failed send: {exc}")
                return
            outcomes.append(f"branch {branch} sent {msg.performative}")
            self._run_steps(conv, rest, binding, branch, outcomes)
            return
        if isinstance(step, ReceiveStep):
            conv.pending.append(Continuation(step.pattern, dict(binding), rest, branch))
            outcomes.append(f"branch {branch} suspended")
            return
        outcomes.append(f"branch {branch} skipped unknown step")

    def _drain_mailbox(self, conv: Conversation, outcomes: list[str]) -> None:
        progressed = True
        while progressed:
            progressed = False
            for msg in list(conv.mailbox):
                if self._try_message(conv, msg, outcomes):
                    conv.mailbox.remove(msg)
                    progressed = True
                    break

    # --- introspection -------------------------------------------------------------------

    def export_conversation_state(self) -> list[dict]:
        with self._registry_lock:
            ids = sorted(self.conversations)
        out = []
        for cid in ids:
            conv = self.conversations[cid]
            out.append({
                "id": cid,
                "pending": len(conv.pending),
                "mailbox": len(conv.mailbox),
                "completed": conv.completed,
                "partners": sorted(conv.partners),
            })
        return out

    def outbound_for(self, cid: str) -> list[EventMessage]:
        with self._registry_lock:
            return [m for m in self.outbox if m.cid == cid]


def _text(t) -> str:
    if isinstance(t, RAtom):
        return t.name
    if isinstance(t, Term):
        return t.value
    return term_text(t)


def _unify_pattern(pattern: MsgPattern, fields_: tuple, binding: dict) -> dict | None:
    for p, f in zip((pattern.cid, pattern.protocol, pattern.agent,
                     pattern.performative, pattern.payload), fields_):
        binding = unify(p, f, binding)
        if binding is None:
            return None
    return binding


def _rule_vars(rule: MessagingRule) -> set[str]:
    out = term_vars(rule.trigger)
    for step in rule.steps:
        if isinstance(step, (SendStep, ReceiveStep)):
            out |= term_vars(step.pattern)
        else:
            out |= term_vars(step.literal)
    return out


def _rename_pattern(pattern: MsgPattern, mapping: dict) -> MsgPattern:
    return MsgPattern(*(_rename(f, mapping) for f in pattern.fields()))


def _rename_step(step, mapping: dict):
    if isinstance(step, SendStep):
        return SendStep(_rename_pattern(step.pattern, mapping))
    if isinstance(step, ReceiveStep):
        return ReceiveStep(_rename_pattern(step.pattern, mapping))
    return GoalStep(_rename(step.literal, mapping))
