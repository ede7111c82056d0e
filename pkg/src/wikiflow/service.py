"""Service facade: configuration, sessions, notifications, app assembly, HTTP API.

Everything a deployment needs lives under one data directory:

    data/
      config.json        optional service settings
      users.json         login credentials (user -> iri + password)
      store.nt           persisted triple store
      pages/             wiki page versions
      templates/*.tpl    form templates
      definitions/*.wf   deployed process definitions
      rules.rules        optional user rulebase merged after the default one

Route map and JSON schemas are documented in docs/http-api.md.
"""

from __future__ import annotations

import json
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .choreography import ChoreographyEngine, EventMessage
from .clock import SystemClock, isoformat
from .engine import Engine, TaskInstance
from .namespaces import DEFAULT_BASE_IRI, PM_HAS_ROLE
from .rules import RuleBase, parse_rules
from .store import Term, TriplePattern, TripleStore, Var, iri, literal, nt_term
from .wiki import TemplateRegistry, WikiRepo, register_wiki_actions


class ServiceError(Exception):
    pass


class AuthenticationError(ServiceError):
    pass


@dataclass
class UserAccount:
    name: str
    iri: Term
    password: str


@dataclass
class ServiceConfig:
    base_iri: str = DEFAULT_BASE_IRI
    grouping_root: str | None = None
    session_ttl_seconds: int = 8 * 3600
    feed_wait_cap_seconds: float = 25.0
    agent: str = "engine"

    @classmethod
    def from_file(cls, path: Path) -> "ServiceConfig":
        data = json.loads(path.read_text("utf-8"))
        cfg = cls()
        for key in ("base_iri", "grouping_root", "agent"):
            if key in data:
                setattr(cfg, key, data[key])
        if "session_ttl_seconds" in data:
            cfg.session_ttl_seconds = int(data["session_ttl_seconds"])
        if "feed_wait_cap_seconds" in data:
            cfg.feed_wait_cap_seconds = float(data["feed_wait_cap_seconds"])
        return cfg


@dataclass
class Session:
    token: str
    user: Term
    user_name: str
    roles: list[str]
    expires_at: float


class SessionManager:
    """Bearer-token sessions backed by the users file; roles come from the store."""

    def __init__(self, store: TripleStore, clock=None, ttl_seconds: int = 8 * 3600):
        self.store = store
        self.clock = clock or SystemClock()
        self.ttl = ttl_seconds
        self.accounts: dict[str, UserAccount] = {}
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def load_users(self, path: Path) -> int:
        data = json.loads(path.read_text("utf-8"))
        for name, record in data.items():
            self.accounts[name] = UserAccount(name, iri(record["iri"]), record["password"])
        return len(self.accounts)

    def add_user(self, name: str, user_iri: str, password: str) -> None:
        self.accounts[name] = UserAccount(name, iri(user_iri), password)

    def login(self, name: str, password: str) -> Session:
        account = self.accounts.get(name)
        if account is None or account.password != password:
            raise AuthenticationError("unknown user or wrong password")
        roles = [r["r"].value for r in self.store.match(
            TriplePattern(account.iri, iri(PM_HAS_ROLE), Var("r")))]
        now = self.clock.now().timestamp()
        session = Session(secrets.token_urlsafe(32), account.iri, name, roles,
                          now + self.ttl)
        with self._lock:
            self._sessions[session.token] = session
        return session

    def authenticate(self, token: str | None) -> Session:
        if not token:
            raise AuthenticationError("missing bearer token")
        with self._lock:
            session = self._sessions.get(token)
        if session is None:
            raise AuthenticationError("unknown session")
        if self.clock.now().timestamp() > session.expires_at:
            with self._lock:
                self._sessions.pop(token, None)
            raise AuthenticationError("session expired")
        return session


@dataclass
class Notification:
    id: int
    recipient: Term
    kind: str  # task-assigned | task-unassigned-pool | process-ended
    subjects: tuple[Term, ...]
    created: str
    read: bool = False


class NotificationCenter:
    """In-app notifier fed by engine dispatches; replays are deduplicated by
    the dispatch sequence number. External transports can be plugged in via
    `sinks`."""

    def __init__(self, engine: Engine, clock=None, pool_recipient: Term | None = None):
        self.engine = engine
        self.clock = clock or SystemClock()
        self.pool_recipient = pool_recipient
        self.records: list[Notification] = []
        self.sinks: list = []
        self._seen: set[int] = set()
        self._counter = 0
        self._lock = threading.Lock()
        engine.add_listener(self.notify)

    def notify(self, rule_event) -> Notification | None:
        with self._lock:
            if rule_event.seq in self._seen:
                return None
        record = None
        if rule_event.functor == "taskAssign":
            task_uri, user = rule_event.args
            task = self._task_for(task_uri)
            if task is not None and task.node.notify:
                record = self._record(user, "task-assigned", (task_uri,))
        elif rule_event.functor == "taskUnassigned":
            task_uri, inst_uri = rule_event.args
            recipient = self.pool_recipient or self._initiator_for(inst_uri)
            if recipient is not None:
                record = self._record(recipient, "task-unassigned-pool", (task_uri,))
        elif rule_event.functor == "processEnd":
            inst_uri = rule_event.args[0]
            recipient = self._initiator_for(inst_uri)
            if recipient is not None:
                record = self._record(recipient, "process-ended", (inst_uri,))
        with self._lock:
            self._seen.add(rule_event.seq)
        return record

    def external(self, recipient: Term, kind: str, subject: Term) -> Notification:
        """Hook for the rule layer's notify action."""
        return self._record(recipient, kind, (subject,))

    def _record(self, recipient: Term, kind: str, subjects: tuple) -> Notification:
        with self._lock:
            self._counter += 1
            record = Notification(self._counter, recipient, kind, subjects,
                                  isoformat(self.clock.now()))
            self.records.append(record)
        for sink in self.sinks:
            try:
                sink(record)
            except Exception:  # noqa: BLE001 - notifier failures never block the engine
                pass
        return record

    def for_user(self, user: Term) -> list[Notification]:
        with self._lock:
            return [n for n in self.records if n.recipient == user]

    def _task_for(self, task_uri: Term) -> TaskInstance | None:
        for task in self.engine.tasks():
            if task.uri == task_uri:
                return task
        return None

    def _initiator_for(self, inst_uri: Term) -> Term | None:
        for inst in self.engine.instances():
            if inst.uri == inst_uri:
                return inst.initiator
        return None


@dataclass
class AppState:
    """Everything one deployment shares: the store and the modules around it."""

    config: ServiceConfig
    store: TripleStore
    templates: TemplateRegistry
    wiki: WikiRepo
    engine: Engine
    choreography: ChoreographyEngine
    sessions: SessionManager
    notifications: NotificationCenter
    data_dir: Path | None = None

    @classmethod
    def build(cls, data_dir=None, clock=None, config: ServiceConfig | None = None,
              user_rules: RuleBase | None = None) -> "AppState":
        clock = clock or SystemClock()
        data_dir = Path(data_dir) if data_dir else None
        if config is None:
            config = ServiceConfig()
            if data_dir and (data_dir / "config.json").exists():
                config = ServiceConfig.from_file(data_dir / "config.json")
        store = TripleStore()
        if data_dir and (data_dir / "store.nt").exists():
            store.load_text((data_dir / "store.nt").read_text("utf-8"))
        if user_rules is None and data_dir and (data_dir / "rules.rules").exists():
            user_rules = parse_rules((data_dir / "rules.rules").read_text("utf-8"),
                                     store.prefixes)
        templates = TemplateRegistry()
        if data_dir and (data_dir / "templates").exists():
            for path in sorted((data_dir / "templates").glob("*.tpl")):
                templates.load_file(path, store.prefixes)
        grouping_root = None
        if config.grouping_root:
            text = config.grouping_root
            grouping_root = iri(store.expand(text)) if (
                ":" in text and text.split(":", 1)[0] in store.prefixes) else iri(text)
        engine = Engine(store, templates=templates, rulebase=user_rules, clock=clock,
                        base_iri=config.base_iri, grouping_root=grouping_root)
        wiki = WikiRepo(store, config.base_iri, templates=templates,
                        pages_dir=data_dir / "pages" if data_dir else None, clock=clock)
        wiki.load_pages()
        register_wiki_actions(engine, wiki)
        choreography = ChoreographyEngine(engine.rulebase, store, agent=config.agent)
        sessions = SessionManager(store, clock, config.session_ttl_seconds)
        if data_dir and (data_dir / "users.json").exists():
            sessions.load_users(data_dir / "users.json")
        notifications = NotificationCenter(engine, clock)
        engine.executor.send_message = choreography.send_action
        engine.executor.notify = notifications.external
        engine.executor.mint_page = _mint_page_hook(wiki)
        state = cls(config, store, templates, wiki, engine, choreography,
                    sessions, notifications, data_dir)
        if data_dir and (data_dir / "definitions").exists():
            for path in sorted((data_dir / "definitions").glob("*.wf")):
                engine.rehydrate(path.read_text("utf-8"))
        return state

    def save(self) -> None:
        if self.data_dir is None:
            return
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.store.save(self.data_dir / "store.nt")

    def import_ontology(self, path) -> int:
        self.store.load_text(Path(path).read_text("utf-8"))
        return len(self.store)

    def deploy_file(self, path) -> None:
        text = Path(path).read_text("utf-8")
        d = self.engine.deploy(text)
        if self.data_dir is not None:
            target = self.data_dir / "definitions"
            target.mkdir(parents=True, exist_ok=True)
            (target / f"{d.name}-{d.version}.wf").write_text(text, "utf-8")

    def add_template_file(self, path) -> None:
        self.templates.load_file(path, self.store.prefixes)
        if self.data_dir is not None:
            target = self.data_dir / "templates"
            target.mkdir(parents=True, exist_ok=True)
            (target / Path(path).name).write_text(Path(path).read_text("utf-8"), "utf-8")


def _mint_page_hook(wiki: WikiRepo):
    def mint(name: str, markup: str) -> None:
        base = wiki.page(name).version if wiki.exists(name) else None
        wiki.save_page(name, markup, iri(wiki.base_iri + "agent/rules"), base_version=base)

    return mint


# --- term <-> JSON helpers shared by API and scenario runner ---------------------------

def parse_term_text(text: str, store: TripleStore) -> Term:
    """IRI when <wrapped>, a known CURIE, or absolute with ://; else a literal."""
    if text.startswith("<") and text.endswith(">"):
        return iri(text[1:-1])
    prefix, sep, _ = text.partition(":")
    if sep and prefix in store.prefixes:
        return iri(store.expand(text))
    if "://" in text:
        return iri(text)
    return literal(text)


def term_json(term: Term, wiki: WikiRepo | None = None) -> dict:
    if term.is_iri:
        out = {"type": "uri", "value": term.value}
        if wiki is not None:
            page = wiki.page_name_from_iri(term)
            if page is not None:
                out["page"] = page
            out["display"] = page if page is not None else wiki.compact_iri(term.value)
        return out
    out = {"type": "literal", "value": term.value}
    if term.datatype:
        out["datatype"] = term.datatype
    if term.lang:
        out["lang"] = term.lang
    return out


def resultset_json(rs, wiki: WikiRepo | None = None) -> dict:
    return {
        "vars": rs.variables,
        "rows": [{k: term_json(v, wiki) for k, v in row.items()} for row in rs.rows],
    }


def task_json(task: TaskInstance, state: AppState) -> dict:
    node = task.node
    template = state.templates.get(node.template) if node.template else None
    fields = []
    if template is not None:
        for f in template.fields:
            fields.append({"name": f.name, "type": f.type, "predicate": f.predicate,
                           "required": f.required})
    return {
        "id": task.id,
        "uri": task.uri.value,
        "node": node.name,
        "instance": task.instance_uri.value,
        "state": task.state,
        "assignee": task.assignee.value if task.assignee else None,
        "template": node.template,
        "fields": fields,
        "note": task.note,
        "form": {k: term_json(v) for k, v in task.form_data.items()},
    }
