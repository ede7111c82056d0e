import pytest

from wikiflow.sparql import RenderContext
from wikiflow.store import Term, Triple, TriplePattern, TripleStore, iri, literal
from wikiflow.wiki import (
    InvalidIriFieldError,
    MalformedMarkupError,
    MalformedXmlError,
    MissingRequiredFieldError,
    PageConflictError,
    TemplateRegistry,
    UnknownPageError,
    WikiRepo,
    parse_template,
)

EX = "http://example.org/ns#"
BASE = "http://wiki.example/"
ALICE = iri(EX + "alice")


@pytest.fixture
def repo():
    store = TripleStore()
    store.bind_prefix("ex", EX)
    return WikiRepo(store, BASE)


def test_render_empty_markup(repo):
    repo.save_page("Empty", "", ALICE)
    rendered = repo.render("Empty")
    assert rendered.html == ""
    assert rendered.statements == set()


def test_typed_link_statement(repo):
    repo.save_page("Discovery1", "[ex:identifiedAs::Identification1]", ALICE)
    rendered = repo.render("Discovery1")
    assert rendered.statements == {
        Triple(repo.page_iri("Discovery1"), iri(EX + "identifiedAs"),
               repo.page_iri("Identification1"))
    }
    assert 'data-page="Identification1"' in rendered.html
    assert 'data-predicate' in rendered.html


def test_attribute_statement_literal_and_iri(repo):
    repo.save_page("P", "{ex:locality=Grunewald forest} and {ex:taxonHint=ex:Fungi}", ALICE)
    rendered = repo.render("P")
    assert Triple(repo.page_iri("P"), iri(EX + "locality"),
                  literal("Grunewald forest")) in rendered.statements
    assert Triple(repo.page_iri("P"), iri(EX + "taxonHint"),
                  iri(EX + "Fungi")) in rendered.statements


def test_headings_paragraphs_and_escape(repo):
    repo.save_page("H", "= Title =\n\nSome <text> & stuff\nsecond line\n\n== Sub ==", ALICE)
    html = repo.render("H").html
    assert "<h1>Title</h1>" in html
    assert "<h2>Sub</h2>" in html
    assert "<p>Some &lt;text&gt; &amp; stuff\nsecond line</p>" in html


def test_tilde_escapes_markup(repo):
    repo.save_page("E", "literal bracket ~[ not a link ~]", ALICE)
    rendered = repo.render("E")
    assert rendered.statements == set()
    assert "[ not a link ]" in rendered.html


def test_malformed_markup_position(repo):
    with pytest.raises(MalformedMarkupError) as err:
        repo.save_page("Bad", "fine line\nbroken [ex:p::unclosed", ALICE)
    assert err.value.line == 2


def test_embedded_query_block_renders_table(repo):
    store = repo.store
    store.insert(Triple(iri(EX + "a"), iri(EX + "p"), iri(EX + "x")))
    store.insert(Triple(iri(EX + "b"), iri(EX + "p"), iri(EX + "x")))
    repo.save_page("Q", "<<<query\nSELECT ?s WHERE { ?s ex:p ex:x }\n>>>", ALICE)
    html = repo.render("Q").html
    assert html.count("<tr>") == 3  # header + 2 rows
    # row count equals the evaluated result set size
    from wikiflow.sparql import evaluate_select, parse

    rs = evaluate_select(parse("SELECT ?s WHERE { ?s ex:p ex:x }", store.prefixes),
                         store.snapshot())
    assert html.count("<tr>") == 1 + len(rs.rows)


def test_query_error_renders_inline_box(repo):
    repo.save_page("QE", "before\n<<<query\nSELECT ?s WHERE { broken\n>>>\nafter", ALICE)
    html = repo.render("QE").html
    assert 'class="query-error"' in html
    assert "<p>before</p>" in html
    assert "<p>after</p>" in html


def test_query_block_context_substitution(repo):
    repo.store.insert(Triple(iri(EX + "t1"), iri(EX + "assignee"), iri(EX + "bob")))
    repo.save_page("Mine", "<<<query\nSELECT ?t WHERE { ?t ex:assignee ${currentUser} }\n>>>", ALICE)
    html_bob = repo.render("Mine", RenderContext.of(current_user=iri(EX + "bob"))).html
    html_alice = repo.render("Mine", RenderContext.of(current_user=ALICE)).html
    assert html_bob.count("<tr>") == 2
    assert html_alice.count("<tr>") == 1


def test_save_page_versioning_and_history(repo):
    assert repo.save_page("V", "one", ALICE) == 1
    assert repo.save_page("V", "two", ALICE, base_version=1) == 2
    page = repo.page("V")
    assert [v.version for v in page.versions] == [1, 2]
    assert page.versions[0].markup == "one"


def test_save_conflict_on_stale_base(repo):
    repo.save_page("C", "one", ALICE)
    repo.save_page("C", "two", ALICE, base_version=1)
    with pytest.raises(PageConflictError):
        repo.save_page("C", "three", ALICE, base_version=1)


def test_save_removes_stale_statements(repo):
    repo.save_page("S", "[ex:identifiedAs::Other]", ALICE)
    subject = repo.page_iri("S")
    assert repo.store.ask(TriplePattern(subject, None, None))
    repo.save_page("S", "no more links", ALICE, base_version=1)
    assert not repo.store.ask(TriplePattern(subject, None, None))


def test_store_equals_extraction_after_save(repo):
    repo.save_page("X", "{ex:a=1} [ex:b::T] {ex:c=ex:Fungi}", ALICE)
    subject = repo.page_iri("X")
    in_store = {t for t in repo.store.snapshot().triples if t.subject == subject}
    assert in_store == repo.render("X").statements


TPL = """template discovery-form
field locality literal ex:locality required
field taxonHint concept-iri ex:taxonHint
---
= Discovery =
Found at: {{field:locality|literal}}
Group: {{field:taxonHint|concept-iri}}
"""


def test_parse_template():
    tpl = parse_template(TPL, {"ex": EX})
    assert tpl.name == "discovery-form"
    assert tpl.required_fields == ["locality"]
    assert tpl.field_types == {"locality": "literal", "taxonHint": "concept-iri"}
    assert tpl.predicates["locality"] == EX + "locality"


def test_instantiate_template_statements(repo):
    tpl = parse_template(TPL, {"ex": EX})
    rendered = repo.instantiate_template(
        tpl, {"locality": literal("fixture text"), "taxonHint": iri(EX + "Fungi")},
        "Discovery1", ALICE)
    assert rendered.statements == {
        Triple(repo.page_iri("Discovery1"), iri(EX + "locality"), literal("fixture text")),
        Triple(repo.page_iri("Discovery1"), iri(EX + "taxonHint"), iri(EX + "Fungi")),
    }


def test_instantiate_missing_required(repo):
    tpl = parse_template(TPL, {"ex": EX})
    with pytest.raises(MissingRequiredFieldError) as err:
        repo.instantiate_template(tpl, {}, "D", ALICE)
    assert err.value.field == "locality"


def test_instantiate_literal_for_iri_slot(repo):
    tpl = parse_template(TPL, {"ex": EX})
    with pytest.raises(InvalidIriFieldError):
        repo.instantiate_template(
            tpl, {"locality": literal("x"), "taxonHint": literal("not-an-iri")}, "D", ALICE)


def test_instantiate_exotic_literal_round_trips(repo):
    tpl = parse_template(TPL, {"ex": EX})
    tricky = "braces } and ] brackets [ plus ~tilde"
    rendered = repo.instantiate_template(
        tpl, {"locality": literal(tricky)}, "Tricky", ALICE)
    assert Triple(repo.page_iri("Tricky"), iri(EX + "locality"), literal(tricky)) \
        in rendered.statements


def test_insert_typed_link(repo):
    repo.save_page("Discovery1", "the discovery", ALICE)
    repo.save_page("Identification1", "the identification", ALICE)
    repo.insert_typed_link("Discovery1", "ex:identifiedAs", "Identification1", ALICE)
    assert repo.store.ask(TriplePattern(
        repo.page_iri("Discovery1"), iri(EX + "identifiedAs"), repo.page_iri("Identification1")))


def test_insert_typed_link_unknown_target(repo):
    repo.save_page("Discovery1", "x", ALICE)
    with pytest.raises(UnknownPageError):
        repo.insert_typed_link("Discovery1", "ex:identifiedAs", "Nope", ALICE)


def test_insert_same_link_twice_set_semantics(repo):
    repo.save_page("A", "x", ALICE)
    repo.save_page("B", "y", ALICE)
    repo.insert_typed_link("A", "ex:identifiedAs", "B", ALICE)
    repo.insert_typed_link("A", "ex:identifiedAs", "B", ALICE)
    markup = repo.page("A").latest.markup
    assert markup.count("::") == 2
    rows = repo.store.match(TriplePattern(repo.page_iri("A"), iri(EX + "identifiedAs"), None))
    assert len(rows) == 1


def test_click_search_subject_facet(repo):
    s = iri(EX + "thing")
    repo.store.insert(Triple(s, iri(EX + "p"), literal("v")))
    repo.store.insert(Triple(s, iri(EX + "q"), iri(EX + "o")))
    rs = repo.click_search(s, "subject")
    assert rs.variables == ["p", "o"]
    assert len(rs.rows) == 2


def test_click_search_absent_resource(repo):
    rs = repo.click_search(iri(EX + "ghost"), "subject")
    assert rs.rows == []


def test_render_results_table_from_xml(repo):
    from wikiflow.sparql import ResultSet, serialize_results_xml

    repo.save_page("Target", "x", ALICE)
    rs = ResultSet(["a", "b"], [{"a": repo.page_iri("Target"), "b": literal("val")}])
    html = repo.render_results_table(serialize_results_xml(rs))
    assert html.count("<tr>") == 2
    assert 'href="/pages/Target"' in html
    assert "val" in html


def test_render_results_table_empty(repo):
    from wikiflow.sparql import ResultSet, serialize_results_xml

    html = repo.render_results_table(serialize_results_xml(ResultSet(["s"])))
    assert html.count("<tr>") == 1


def test_render_results_table_malformed():
    repo = WikiRepo(TripleStore(), BASE)
    with pytest.raises(MalformedXmlError):
        repo.render_results_table("this is not xml <")


def test_render_determinism(repo):
    repo.store.insert(Triple(iri(EX + "a"), iri(EX + "p"), iri(EX + "x")))
    repo.save_page("D", "= T =\n[ex:identifiedAs::Z]\n<<<query\nSELECT ?s WHERE { ?s ex:p ex:x }\n>>>", ALICE)
    r1 = repo.render("D")
    r2 = repo.render("D")
    assert r1.html == r2.html
    assert r1.statements == r2.statements


def test_pages_persist_and_reload(tmp_path):
    store = TripleStore()
    store.bind_prefix("ex", EX)
    repo = WikiRepo(store, BASE, pages_dir=tmp_path / "pages")
    repo.save_page("P", "v1 {ex:a=first}", ALICE)
    repo.save_page("P", "v2 {ex:a=second}", ALICE, base_version=1)

    store2 = TripleStore()
    store2.bind_prefix("ex", EX)
    repo2 = WikiRepo(store2, BASE, pages_dir=tmp_path / "pages")
    assert repo2.load_pages() == 1
    page = repo2.page("P")
    assert page.version == 2
    assert page.versions[0].markup == "v1 {ex:a=first}"
    assert store2.ask(TriplePattern(repo2.page_iri("P"), iri(EX + "a"), literal("second")))
    assert not store2.ask(TriplePattern(repo2.page_iri("P"), iri(EX + "a"), literal("first")))
