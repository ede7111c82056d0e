"""Wiki core: versioned pages with embedded semantic statements, form
templates, click-searches, and table rendering of query results.

Markup (grammar in docs/markup.md):

    = Heading =            headings, one to three '='
    [Target|text]          plain link to a page or external IRI
    [ex:pred::Target|text] typed link: renders a hyperlink AND yields the
                           triple (pageIRI, pred, targetIRI)
    {ex:pred=value}        attribute statement on the current page
    <<<query ... >>>       fenced query block, evaluated at render time
    ~X                     escapes any markup character X

Statement ownership: saving a page replaces exactly the triples whose
subject is the page IRI with the set extracted from the new markup.
"""

from __future__ import annotations

import re
import threading
import urllib.parse
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape, quoteattr

from .clock import SystemClock, isoformat
from .namespaces import PM_ASSIGNEE, PM_OF_INSTANCE, PM_STATE, SPARQL_RESULTS_NS
from .sparql import (
    QueryError,
    RenderContext,
    ResultSet,
    UnknownContextKeyError,
    evaluate_select,
    parse,
    serialize_results_xml,
    substitute_context,
)
from .store import StoreView, Term, Triple, TriplePattern, TripleStore, Var, iri, literal


class WikiError(Exception):
    pass


class UnknownPageError(WikiError):
    pass


class PageConflictError(WikiError):
    pass


class MalformedMarkupError(WikiError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


class MalformedXmlError(WikiError):
    pass


class TemplateError(WikiError):
    pass


class MissingRequiredFieldError(TemplateError):
    def __init__(self, field_name: str):
        super().__init__(f"missing required field {field_name!r}")
        self.field = field_name


class InvalidIriFieldError(TemplateError):
    def __init__(self, field_name: str):
        super().__init__(f"field {field_name!r} requires an IRI value")
        self.field = field_name


FIELD_TYPES = ("literal", "concept-iri", "resource-iri")


@dataclass(frozen=True)
class TemplateField:
    name: str
    type: str
    predicate: str  # full predicate IRI
    required: bool = False


@dataclass
class Template:
    name: str
    fields: list[TemplateField]
    markup: str

    @property
    def required_fields(self) -> list[str]:
        return [f.name for f in self.fields if f.required]

    @property
    def field_types(self) -> dict[str, str]:
        return {f.name: f.type for f in self.fields}

    @property
    def predicates(self) -> dict[str, str]:
        return {f.name: f.predicate for f in self.fields}

    def field(self, name: str) -> TemplateField:
        for f in self.fields:
            if f.name == name:
                return f
        raise TemplateError(f"template {self.name} has no field {name!r}")


_PLACEHOLDER = re.compile(r"\{\{field:([A-Za-z_][A-Za-z0-9_]*)\|(literal|concept-iri|resource-iri)\}\}")


def parse_template(text: str, prefixes: dict[str, str]) -> Template:
    """Template files: field declarations, a '---' separator, then markup."""
    header, sep, markup = text.partition("\n---\n")
    if not sep:
        raise TemplateError("template file needs a '---' separator line")
    name = None
    fields: list[TemplateField] = []
    for lineno, raw in enumerate(header.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        words = line.split()
        if words[0] == "template" and len(words) == 2:
            name = words[1]
        elif words[0] == "field" and len(words) in (4, 5):
            fname, ftype, pred = words[1], words[2], words[3]
            if ftype not in FIELD_TYPES:
                raise TemplateError(f"line {lineno}: unknown field type {ftype!r}")
            required = len(words) == 5
            if required and words[4] != "required":
                raise TemplateError(f"line {lineno}: expected 'required'")
            fields.append(TemplateField(fname, ftype, _expand(pred, prefixes), required))
        else:
            raise TemplateError(f"line {lineno}: unparseable template line {line!r}")
    if name is None:
        raise TemplateError("template file missing 'template <name>' line")
    declared = {f.name: f.type for f in fields}
    for m in _PLACEHOLDER.finditer(markup):
        if m.group(1) not in declared:
            raise TemplateError(f"placeholder references undeclared field {m.group(1)!r}")
        if declared[m.group(1)] != m.group(2):
            raise TemplateError(f"placeholder type mismatch for field {m.group(1)!r}")
    return Template(name, fields, markup.strip("\n") + "\n")


def _expand(text: str, prefixes: dict[str, str]) -> str:
    if text.startswith("<") and text.endswith(">"):
        return text[1:-1]
    prefix, sep, local = text.partition(":")
    if sep and prefix in prefixes:
        return prefixes[prefix] + local
    raise TemplateError(f"predicate {text!r} does not resolve against a registered prefix")


class TemplateRegistry:
    def __init__(self):
        self._templates: dict[str, Template] = {}

    def add(self, template: Template) -> None:
        self._templates[template.name] = template

    def get(self, name: str) -> Template | None:
        return self._templates.get(name)

    def names(self) -> list[str]:
        return sorted(self._templates)

    def load_file(self, path, prefixes: dict[str, str]) -> Template:
        template = parse_template(Path(path).read_text("utf-8"), prefixes)
        self.add(template)
        return template


# --- markup ------------------------------------------------------------------------

@dataclass(frozen=True)
class TypedLink:
    predicate: str  # full IRI
    target: Term    # page IRI or external IRI
    display: str


@dataclass
class PageVersion:
    version: int
    markup: str
    author: Term
    timestamp: str


@dataclass
class WikiPage:
    name: str
    uri: Term
    versions: list[PageVersion] = field(default_factory=list)

    @property
    def latest(self) -> PageVersion:
        return self.versions[-1]

    @property
    def version(self) -> int:
        return self.versions[-1].version if self.versions else 0


@dataclass
class RenderedPage:
    name: str
    version: int
    html: str
    statements: set[Triple]


_ESCAPABLE = set("[]{}~=<>")


def _scan_inline(text: str, lineno: int):
    """Yields ("text", chunk) | ("link", content) | ("attr", content) tokens."""
    out = []
    buf = []
    i = 0
    while i < len(text):
        ch = text[i]
        if ch == "~" and i + 1 < len(text) and text[i + 1] in _ESCAPABLE:
            buf.append(text[i + 1])
            i += 2
            continue
        if ch in "[{":
            closer = "]" if ch == "[" else "}"
            j = i + 1
            content = []
            while True:
                if j >= len(text):
                    raise MalformedMarkupError(f"unterminated {ch!r}", lineno, i + 1)
                if text[j] == "~" and j + 1 < len(text) and text[j + 1] in _ESCAPABLE:
                    content.append(text[j + 1])
                    j += 2
                    continue
                if text[j] == closer:
                    break
                content.append(text[j])
                j += 1
            if buf:
                out.append(("text", "".join(buf)))
                buf = []
            out.append(("link" if ch == "[" else "attr", "".join(content)))
            i = j + 1
            continue
        buf.append(ch)
        i += 1
    if buf:
        out.append(("text", "".join(buf)))
    return out


def _escape_markup_value(value: str) -> str:
    return "".join(f"~{c}" if c in _ESCAPABLE else c for c in value)


class WikiRepo:
    """Versioned pages bound to a triple store; optionally persisted as files."""

    def __init__(self, store: TripleStore, base_iri: str, templates: TemplateRegistry | None = None,
                 pages_dir=None, clock=None):
        self.store = store
        self.base_iri = base_iri
        self.templates = templates or TemplateRegistry()
        self.pages_dir = Path(pages_dir) if pages_dir else None
        self.clock = clock or SystemClock()
        self._pages: dict[str, WikiPage] = {}
        self._lock = threading.RLock()

    # --- identity -----------------------------------------------------------

    def page_iri(self, name: str) -> Term:
        return iri(self.base_iri + "page/" + urllib.parse.quote(name, safe=""))

    def page_name_from_iri(self, term: Term) -> str | None:
        prefix = self.base_iri + "page/"
        if term.is_iri and term.value.startswith(prefix):
            return urllib.parse.unquote(term.value[len(prefix):])
        return None

    def exists(self, name: str) -> bool:
        return name in self._pages

    def page(self, name: str) -> WikiPage:
        try:
            return self._pages[name]
        except KeyError:
            raise UnknownPageError(name) from None

    def page_names(self) -> list[str]:
        return sorted(self._pages)

    # --- statement extraction --------------------------------------------------

    def extract_statements(self, name: str, markup: str) -> set[Triple]:
        """Deterministic extraction of the page-subject triples from markup."""
        subject = self.page_iri(name)
        prefixes = self.store.prefixes
        statements: set[Triple] = set()
        in_fence = False
        for lineno, line in enumerate(markup.splitlines(), start=1):
            stripped = line.strip()
            if in_fence:
                if stripped == ">>>":
                    in_fence = False
                continue
            if stripped.startswith("<<<"):
                in_fence = True
                continue
            for kind, content in _scan_inline(line, lineno):
                if kind == "link" and "::" in content:
                    link = self._parse_typed_link(content, prefixes)
                    statements.add(Triple(subject, iri(link.predicate), link.target))
                elif kind == "attr":
                    pred, value = self._parse_attribute(content, prefixes, lineno)
                    statements.add(Triple(subject, iri(pred), value))
        return statements

    def _parse_typed_link(self, content: str, prefixes: dict[str, str]) -> TypedLink:
        pred_text, _, rest = content.partition("::")
        target_text, sep, display = rest.partition("|")
        predicate = _expand(pred_text.strip(), prefixes)
        target = self._resolve_target(target_text.strip(), prefixes)
        return TypedLink(predicate, target, display if sep else target_text.strip())

    def _parse_attribute(self, content: str, prefixes: dict[str, str], lineno: int):
        pred_text, sep, value_text = content.partition("=")
        if not sep:
            raise MalformedMarkupError("attribute needs '='", lineno, 1)
        predicate = _expand(pred_text.strip(), prefixes)
        value = value_text.strip()
        if value.startswith("<") and value.endswith(">"):
            return predicate, iri(value[1:-1])
        prefix, psep, _ = value.partition(":")
        if psep and prefix in prefixes:
            return predicate, iri(prefixes[prefix] + value.split(":", 1)[1])
        return predicate, literal(value)

    def _resolve_target(self, text: str, prefixes: dict[str, str]) -> Term:
        if text.startswith("<") and text.endswith(">"):
            return iri(text[1:-1])
        prefix, sep, local = text.partition(":")
        if sep and prefix in prefixes:
            return iri(prefixes[prefix] + local)
        if re.match(r"^[A-Za-z][A-Za-z0-9+.-]*://", text):
            return iri(text)
        return self.page_iri(text)

    # --- rendering -----------------------------------------------------------------

    def render(self, name: str, ctx: RenderContext | None = None,
               view: StoreView | None = None) -> RenderedPage:
        page = self.page(name)
        return self.render_markup(name, page.latest.markup, ctx, view, page.version)

    def render_markup(self, name: str, markup: str, ctx: RenderContext | None = None,
                      view: StoreView | None = None, version: int = 0) -> RenderedPage:
        view = view or self.store.snapshot()
        ctx = ctx or RenderContext.of(current_page=self.page_iri(name))
        html: list[str] = []
        paragraph: list[str] = []
        lines = markup.splitlines()
        i = 0

        def flush():
            if paragraph:
                html.append("<p>" + "\n".join(paragraph) + "</p>")
                paragraph.clear()

        while i < len(lines):
            line = lines[i]
            stripped = line.strip()
            if stripped.startswith("<<<"):
                flush()
                block_name = stripped[3:].strip()
                body: list[str] = []
                i += 1
                start_line = i
                while i < len(lines) and lines[i].strip() != ">>>":
                    body.append(lines[i])
                    i += 1
                if i >= len(lines):
                    raise MalformedMarkupError("unterminated fenced block", start_line, 1)
                i += 1
                html.append(self._render_block(block_name, "\n".join(body), ctx, view))
                continue
            if not stripped:
                flush()
                i += 1
                continue
            if stripped.startswith("="):
                flush()
                level = min(len(stripped) - len(stripped.lstrip("=")), 3)
                title = stripped.strip("=").strip()
                html.append(f"<h{level}>{escape(title)}</h{level}>")
                i += 1
                continue
            paragraph.append(self._render_inline(line, i + 1))
            i += 1
        flush()
        return RenderedPage(name, version, "\n".join(html) + ("\n" if html else ""),
                            self.extract_statements(name, markup))

    def _render_block(self, block_name: str, body: str, ctx: RenderContext,
                      view: StoreView) -> str:
        if block_name != "query":
            return f'<div class="query-error">unknown block {escape(block_name)}</div>'
        try:
            text = substitute_context(body, ctx)
            query = parse(text, view.prefixes)
            if getattr(query, "form", None) != "select":
                raise QueryError("only SELECT blocks can be embedded")
            rs = evaluate_select(query, view)
        except (QueryError, UnknownContextKeyError) as exc:
            return f'<div class="query-error">{escape(str(exc))}</div>'
        return self.results_table_html(rs)

    def _render_inline(self, line: str, lineno: int) -> str:
        prefixes = self.store.prefixes
        out = []
        for kind, content in _scan_inline(line, lineno):
            if kind == "text":
                out.append(escape(content))
            elif kind == "attr":
                pred, value = self._parse_attribute(content, prefixes, lineno)
                if value.is_iri:
                    out.append(self._resource_html(value))
                else:
                    out.append(f'<span class="attribute" data-predicate={quoteattr(pred)}>'
                               f"{escape(value.value)}</span>")
            elif "::" in content:
                link = self._parse_typed_link(content, prefixes)
                out.append(self._link_html(link.target, link.display, link.predicate))
            else:
                target_text, sep, display = content.partition("|")
                target = self._resolve_target(target_text.strip(), prefixes)
                out.append(self._link_html(target, display if sep else target_text.strip()))
        return "".join(out)

    def _link_html(self, target: Term, display: str, predicate: str | None = None) -> str:
        pred_attr = f" data-predicate={quoteattr(predicate)}" if predicate else ""
        page_name = self.page_name_from_iri(target)
        if page_name is not None:
            return (f'<a class="wiki-link" href="/pages/{urllib.parse.quote(page_name, safe="")}"'
                    f" data-page={quoteattr(page_name)}{pred_attr}>{escape(display)}</a>")
        return self._resource_html(target, display, pred_attr)

    def _resource_html(self, term: Term, display: str | None = None, extra: str = "") -> str:
        label = display or self.compact_iri(term.value)
        return (f'<a class="resource" href="#" data-iri={quoteattr(term.value)}{extra}>'
                f"{escape(label)}</a>")

    def compact_iri(self, iri_text: str) -> str:
        best = ""
        best_prefix = None
        for prefix, ns in self.store.prefixes.items():
            if iri_text.startswith(ns) and len(ns) > len(best):
                best = ns
                best_prefix = prefix
        if best_prefix is not None:
            return f"{best_prefix}:{iri_text[len(best):]}"
        return iri_text

    # --- saving ----------------------------------------------------------------------

    def save_page(self, name: str, markup: str, author: Term,
                  base_version: int | None = None) -> int:
        """Save a new version; optimistic concurrency against base_version."""
        with self._lock:
            current = self._pages.get(name)
            current_version = current.version if current else 0
            if base_version is not None and base_version != current_version:
                raise PageConflictError(
                    f"page {name!r} is at version {current_version}, not {base_version}")
            if base_version is None and current_version:
                raise PageConflictError(
                    f"page {name!r} already exists at version {current_version}")
            statements = self.extract_statements(name, markup)  # parses before mutating
            if current is None:
                current = WikiPage(name, self.page_iri(name))
                self._pages[name] = current
            version = PageVersion(current_version + 1, markup, author,
                                  isoformat(self.clock.now()))
            current.versions.append(version)
            self._sync_statements(current.uri, statements)
            self._persist(current, version)
            return version.version

    def _sync_statements(self, subject: Term, statements: set[Triple]) -> None:
        self.store.remove(TriplePattern(subject, None, None))
        self.store.insert_all(sorted(statements, key=repr))

    def _persist(self, page: WikiPage, version: PageVersion) -> None:
        if self.pages_dir is None:
            return
        safe = urllib.parse.quote(page.name, safe="")
        directory = self.pages_dir / safe
        directory.mkdir(parents=True, exist_ok=True)
        header = (f"name: {page.name}\nversion: {version.version}\n"
                  f"author: {version.author.value}\ntimestamp: {version.timestamp}\n\n")
        (directory / f"{version.version}.page").write_text(header + version.markup, "utf-8")

    def load_pages(self) -> int:
        """Hydrate pages from pages_dir and re-sync their statements."""
        if self.pages_dir is None or not self.pages_dir.exists():
            return 0
        count = 0
        for directory in sorted(self.pages_dir.iterdir()):
            if not directory.is_dir():
                continue
            versions = sorted(directory.glob("*.page"),
                              key=lambda p: int(p.stem))
            if not versions:
                continue
            page = None
            for path in versions:
                text = path.read_text("utf-8")
                header, _, markup = text.partition("\n\n")
                meta = dict(line.split(": ", 1) for line in header.splitlines())
                if page is None:
                    page = WikiPage(meta["name"], self.page_iri(meta["name"]))
                    self._pages[meta["name"]] = page
                page.versions.append(PageVersion(
                    int(meta["version"]), markup, iri(meta["author"]), meta["timestamp"]))
            self._sync_statements(page.uri, self.extract_statements(page.name,
                                                                    page.latest.markup))
            count += 1
        return count

    # --- template instantiation ----------------------------------------------------

    def instantiate_template(self, template: Template, inputs: dict[str, Term],
                             subject_page_name: str, author: Term) -> RenderedPage:
        """Create a page from a template; one statement per filled field."""
        for fname in template.required_fields:
            if fname not in inputs:
                raise MissingRequiredFieldError(fname)
        for fname, value in inputs.items():
            ftype = template.field_types.get(fname)
            if ftype in ("concept-iri", "resource-iri") and not value.is_iri:
                raise InvalidIriFieldError(fname)

        def fill(m: re.Match) -> str:
            fname = m.group(1)
            if fname not in inputs:
                return ""
            value = inputs[fname]
            pred = f"<{template.predicates[fname]}>"
            if m.group(2) == "literal":
                return "{" + pred + "=" + _escape_markup_value(value.value) + "}"
            display = _escape_markup_value(self.compact_iri(value.value))
            return f"[{pred}::<{value.value}>|{display}]"

        markup = _PLACEHOLDER.sub(fill, template.markup)
        self.save_page(subject_page_name, markup, author, base_version=None)
        return self.render(subject_page_name)

    def insert_typed_link(self, page_name: str, predicate: str, target_page: str,
                          author: Term, display: str | None = None) -> int:
        """Append a typed link to an existing page; both pages must exist."""
        if not self.exists(page_name):
            raise UnknownPageError(page_name)
        if not self.exists(target_page):
            raise UnknownPageError(target_page)
        pred = _expand(predicate, self.store.prefixes)
        page = self.page(page_name)
        label = display or target_page
        link = f"[<{pred}>::{_escape_markup_value(target_page)}|{_escape_markup_value(label)}]"
        markup = page.latest.markup.rstrip("\n") + "\n\n" + link + "\n"
        return self.save_page(page_name, markup, author, base_version=page.version)

    # --- click-search ------------------------------------------------------------------

    def click_search(self, resource: Term, facet: str,
                     view: StoreView | None = None) -> ResultSet:
        """All triples with the resource in the given position."""
        view = view or self.store.snapshot()
        if facet == "subject":
            variables = ["p", "o"]
            pattern = TriplePattern(resource, Var("p"), Var("o"))
        elif facet == "predicate":
            variables = ["s", "o"]
            pattern = TriplePattern(Var("s"), resource, Var("o"))
        elif facet == "object":
            variables = ["s", "p"]
            pattern = TriplePattern(Var("s"), Var("p"), resource)
        else:
            raise WikiError(f"unknown facet {facet!r}")
        if facet != "object" and not resource.is_iri:
            return ResultSet(variables)  # literals never occur in those positions
        rows = view.match(pattern)
        return ResultSet(variables, [{v: r[v] for v in variables if v in r} for r in rows])

    def users_with_tasks_in_process(self, instance: Term,
                                    view: StoreView | None = None) -> ResultSet:
        view = view or self.store.snapshot()
        text = (f"SELECT ?u WHERE {{ ?t <{PM_OF_INSTANCE}> <{instance.value}> . "
                f"?t <{PM_ASSIGNEE}> ?u . ?t <{PM_STATE}> ?s . "
                f'FILTER(?s != "completed") }}')
        return evaluate_select(parse(text, view.prefixes), view)

    def specimens_identified_by(self, user: Term, view: StoreView | None = None,
                                identified_as: str = "http://example.org/ns#identifiedAs",
                                identified_by: str = "http://example.org/ns#identifiedBy") -> ResultSet:
        view = view or self.store.snapshot()
        text = (f"SELECT ?spec WHERE {{ ?spec <{identified_as}> ?ident . "
                f"?ident <{identified_by}> <{user.value}> }}")
        return evaluate_select(parse(text, view.prefixes), view)

    # --- results tables ------------------------------------------------------------------

    def results_table_html(self, rs: ResultSet, columns: list[str] | None = None) -> str:
        columns = columns or rs.variables
        out = ['<table class="query-results">', "<tr>"]
        for c in columns:
            out.append(f"<th>{escape(c)}</th>")
        out.append("</tr>")
        for row in rs.rows:
            out.append("<tr>")
            for c in columns:
                term = row.get(c)
                if term is None:
                    out.append("<td></td>")
                elif term.is_iri:
                    out.append(f"<td>{self._link_html(term, self._display_for(term))}</td>")
                else:
                    out.append(f"<td>{escape(term.value)}</td>")
            out.append("</tr>")
        out.append("</table>")
        return "".join(out)

    def _display_for(self, term: Term) -> str:
        page_name = self.page_name_from_iri(term)
        return page_name if page_name is not None else self.compact_iri(term.value)

    def render_results_table(self, results_xml: str, columns: list[str] | None = None) -> str:
        """HTML table from results XML; page IRIs become page links."""
        try:
            root = ET.fromstring(results_xml)
        except ET.ParseError as exc:
            raise MalformedXmlError(str(exc)) from exc
        ns = {"sr": SPARQL_RESULTS_NS}
        variables = [v.get("name") for v in root.findall("sr:head/sr:variable", ns)]
        rs = ResultSet(variables)
        for result in root.findall("sr:results/sr:result", ns):
            row: dict[str, Term] = {}
            for binding in result.findall("sr:binding", ns):
                name = binding.get("name")
                uri_el = binding.find("sr:uri", ns)
                if uri_el is not None:
                    row[name] = iri(uri_el.text or "")
                else:
                    lit = binding.find("sr:literal", ns)
                    if lit is None:
                        raise MalformedXmlError(f"binding {name!r} has no uri or literal child")
                    lang = lit.get("{http://www.w3.org/XML/1998/namespace}lang")
                    row[name] = Term("literal", lit.text or "",
                                     datatype=lit.get("datatype"), lang=lang)
            rs.rows.append(row)
        return self.results_table_html(rs, columns)


def results_xml(rs: ResultSet) -> str:
    return serialize_results_xml(rs)


def register_wiki_actions(engine, repo: WikiRepo) -> None:
    """Standard completion-action bindings backed by wiki operations.

    create-page: template=<name> name=<page name, ${var} expanded>
                 [store-as=<instance variable receiving the page name>]
    typed-link:  from=<page> predicate=<curie-or-iri> to=<page>
    """

    def create_page(eng, inst, task, params, user):
        template = repo.templates.get(params["template"])
        if template is None:
            raise WikiError(f"unknown template {params['template']!r}")
        name = params["name"]
        repo.instantiate_template(template, task.form_data, name, user)
        task.created_pages.append(name)
        if "store-as" in params:
            inst.variables[params["store-as"]] = literal(name)

    def typed_link(eng, inst, task, params, user):
        repo.insert_typed_link(params["from"], params["predicate"], params["to"], user)

    engine.bind_action("create-page", create_page)
    engine.bind_action("typed-link", typed_link)
