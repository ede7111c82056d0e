"""HTTP/JSON API over one AppState (request/response schemas in docs/http-api.md)."""

from __future__ import annotations

import json
from pathlib import Path

from fastapi import Depends, FastAPI, Header, Query, Request, Response
from fastapi.responses import JSONResponse

from .choreography import ChoreographyError, EventMessage
from .engine import (
    EngineError,
    FormValidationError,
    UnknownDefinitionError,
    UnknownTaskError,
    WrongStateError,
    WrongUserError,
)
from .procdef import DefinitionError
from .sparql import (
    Query as SparqlQuery,
    QueryError,
    evaluate_ask,
    evaluate_select,
    parse as parse_query,
    serialize_boolean_xml,
    serialize_results_xml,
)
from .service import (
    AppState,
    AuthenticationError,
    Session,
    parse_term_text,
    resultset_json,
    task_json,
    term_json,
)
from .store import StoreError, nt_term
from .wiki import (
    MalformedMarkupError,
    PageConflictError,
    TemplateError,
    UnknownPageError,
    WikiError,
)


def create_app(state: AppState, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="wikiflow", docs_url=None, redoc_url=None)
    app.state.wikiflow = state
    if ui_dir and Path(ui_dir, "index.html").exists():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    def session_dep(authorization: str | None = Header(default=None)) -> Session:
        token = None
        if authorization and authorization.startswith("Bearer "):
            token = authorization[len("Bearer "):]
        return state.sessions.authenticate(token)

    def optional_session(authorization: str | None = Header(default=None)) -> Session | None:
        try:
            return session_dep(authorization)
        except AuthenticationError:
            return None

    @app.exception_handler(AuthenticationError)
    async def _auth_error(_, exc):
        return JSONResponse({"error": "unauthenticated", "detail": str(exc)}, status_code=401)

    @app.exception_handler(WrongUserError)
    async def _wrong_user(_, exc):
        return JSONResponse({"error": "wrong-user", "detail": str(exc)}, status_code=403)

    @app.exception_handler(UnknownTaskError)
    @app.exception_handler(UnknownDefinitionError)
    @app.exception_handler(UnknownPageError)
    async def _not_found(_, exc):
        return JSONResponse({"error": "not-found", "detail": str(exc)}, status_code=404)

    @app.exception_handler(PageConflictError)
    async def _conflict(_, exc):
        return JSONResponse({"error": "conflict", "detail": str(exc)}, status_code=409)

    @app.exception_handler(FormValidationError)
    async def _form_invalid(_, exc):
        return JSONResponse({"error": "form-validation", "fields": exc.fields,
                             "detail": str(exc)}, status_code=422)

    @app.exception_handler(WrongStateError)
    async def _wrong_state(_, exc):
        return JSONResponse({"error": "wrong-state", "detail": str(exc)}, status_code=422)

    @app.exception_handler(QueryError)
    @app.exception_handler(TemplateError)
    @app.exception_handler(MalformedMarkupError)
    @app.exception_handler(DefinitionError)
    @app.exception_handler(ChoreographyError)
    @app.exception_handler(StoreError)
    @app.exception_handler(WikiError)
    @app.exception_handler(EngineError)
    async def _validation(_, exc):
        return JSONResponse({"error": "validation", "detail": str(exc)}, status_code=422)

    # --- auth ---------------------------------------------------------------

    @app.get("/health")
    def health():
        return {"ok": True}

    @app.post("/login")
    async def login(request: Request):
        body = await request.json()
        session = state.sessions.login(body.get("user", ""), body.get("password", ""))
        return {"token": session.token, "user": session.user.value,
                "name": session.user_name, "roles": session.roles}

    # --- pages --------------------------------------------------------------

    @app.get("/pages")
    def list_pages(session: Session | None = Depends(optional_session)):
        return {"pages": state.wiki.page_names()}

    @app.get("/pages/{name}")
    def get_page(name: str, session: Session | None = Depends(optional_session)):
        page = state.wiki.page(name)
        latest = page.latest
        return {"name": page.name, "uri": page.uri.value, "version": latest.version,
                "author": latest.author.value, "timestamp": latest.timestamp,
                "markup": latest.markup,
                "history": [v.version for v in page.versions]}

    @app.get("/pages/{name}/html")
    def page_html(name: str, session: Session | None = Depends(optional_session)):
        from .sparql import RenderContext

        ctx = RenderContext.of(
            current_user=session.user if session else None,
            current_page=state.wiki.page_iri(name),
        )
        rendered = state.wiki.render(name, ctx)
        return {"name": rendered.name, "version": rendered.version, "html": rendered.html,
                "statements": [[nt_term(t.subject), nt_term(t.predicate), nt_term(t.object)]
                               for t in sorted(rendered.statements, key=repr)]}

    @app.put("/pages/{name}")
    async def put_page(name: str, request: Request,
                       session: Session = Depends(session_dep),
                       x_base_version: int | None = Header(default=None)):
        markup = (await request.body()).decode("utf-8")
        version = state.wiki.save_page(name, markup, session.user,
                                       base_version=x_base_version)
        return {"name": name, "version": version}

    # --- processes ------------------------------------------------------------

    @app.get("/processes")
    def processes(session: Session = Depends(session_dep)):
        return {"processes": [
            {"name": d.name, "version": d.version, "uri": d.uri.value,
             "nodes": [n.name for n in d.nodes]}
            for d in state.engine.definitions()
        ]}

    @app.post("/processes/{name}/{version}/start")
    async def start_process(name: str, version: int, request: Request,
                            session: Session = Depends(session_dep)):
        body = await request.json() if await request.body() else {}
        form = {k: parse_term_text(str(v), state.store)
                for k, v in (body.get("form") or {}).items()}
        inst = state.engine.start_process(name, version, session.user, form)
        return {"id": inst.id, "uri": inst.uri.value, "state": inst.state}

    @app.get("/instances")
    def instances(session: Session = Depends(session_dep)):
        return {"instances": [
            {"id": i.id, "uri": i.uri.value, "state": i.state,
             "definition": i.definition.name, "version": i.definition.version,
             "initiator": i.initiator.value}
            for i in state.engine.instances()
        ]}

    # --- tasks ------------------------------------------------------------------

    @app.get("/tasks")
    def tasks(user: str = Query(default="me"), session: Session = Depends(session_dep)):
        if user != "me":
            raise AuthenticationError("only user=me is supported")
        groups = state.engine.list_tasks(session.user)
        return {"groups": [
            {"group": g.value if g else None,
             "label": state.wiki.compact_iri(g.value) if g else "other",
             "tasks": [task_json(t, state) for t in tasks_]}
            for g, tasks_ in groups
        ]}

    @app.post("/tasks/{task_id}/start")
    def start_task(task_id: str, session: Session = Depends(session_dep)):
        task = state.engine.start_task(task_id, session.user)
        return task_json(task, state)

    @app.post("/tasks/{task_id}/complete")
    async def complete_task(task_id: str, request: Request,
                            session: Session = Depends(session_dep)):
        body = await request.json() if await request.body() else {}
        raw_form = body.get("form") or {}
        task = state.engine.task(task_id)
        form = _parse_form(state, task, raw_form)
        task = state.engine.complete_task(task_id, session.user, form)
        return {"task": task_json(task, state), "pagesCreated": task.created_pages}

    # --- search / query --------------------------------------------------------------

    @app.get("/search")
    def search(resource: str | None = None, facet: str = "subject",
               canned: str | None = None, arg: str | None = None,
               session: Session = Depends(session_dep)):
        if canned == "users-with-tasks-in-process":
            rs = state.wiki.users_with_tasks_in_process(parse_term_text(arg or "", state.store))
        elif canned == "specimens-identified-by":
            rs = state.wiki.specimens_identified_by(parse_term_text(arg or "", state.store))
        elif canned:
            raise WikiError(f"unknown canned search {canned!r}")
        else:
            rs = state.wiki.click_search(parse_term_text(resource or "", state.store), facet)
        return resultset_json(rs, state.wiki)

    @app.post("/query")
    async def query(request: Request, session: Session = Depends(session_dep)):
        text = (await request.body()).decode("utf-8")
        parsed = parse_query(text, state.store.prefixes)
        if not isinstance(parsed, SparqlQuery):
            raise QueryError("updates are not allowed over the query endpoint")
        view = state.store.snapshot()
        if parsed.form == "ask":
            xml = serialize_boolean_xml(evaluate_ask(parsed, view))
        else:
            xml = serialize_results_xml(evaluate_select(parsed, view))
        return Response(content=xml, media_type="application/sparql-results+xml")

    # --- notifications / events -------------------------------------------------------

    @app.get("/notifications")
    def notifications(session: Session = Depends(session_dep)):
        return {"notifications": [
            {"id": n.id, "kind": n.kind, "subjects": [s.value for s in n.subjects],
             "created": n.created, "read": n.read}
            for n in state.notifications.for_user(session.user)
        ]}

    @app.get("/events")
    def events(after: int = 0, wait: float = 0.0,
               session: Session = Depends(session_dep)):
        wait = min(wait, state.config.feed_wait_cap_seconds)
        found = state.engine.events_after(after, wait_seconds=wait)
        return {"events": [
            {"seq": e.seq, "kind": e.kind, "instance": e.instance_uri.value,
             "subject": e.subject_uri.value, "timestamp": e.timestamp}
            for e in found
        ]}

    # --- inter-agent messaging (rule layer transport peer) ------------------------------

    @app.post("/messages")
    async def messages(request: Request):
        body = await request.json()
        msg = EventMessage.from_json(body)
        outcomes = state.choreography.deliver(msg)
        return {"outcomes": outcomes}

    return app


def _parse_form(state: AppState, task, raw_form: dict) -> dict:
    template = state.templates.get(task.node.template) if task.node.template else None
    form = {}
    bad = []
    for key, value in raw_form.items():
        text = str(value)
        if template is not None and template.field_types.get(key) == "literal":
            from .store import literal as make_literal

            form[key] = make_literal(text)
            continue
        term = parse_term_text(text, state.store)
        if template is not None and \
                template.field_types.get(key) in ("concept-iri", "resource-iri") \
                and not term.is_iri:
            bad.append(key)
            continue
        form[key] = term
    if bad:
        raise FormValidationError(sorted(bad))
    return form
