import random
import xml.etree.ElementTree as ET

import pytest

from wikiflow.namespaces import RDFS_SUBCLASSOF, SPARQL_RESULTS_NS, XSD
from wikiflow.sparql import (
    FilterExpr,
    Query,
    RenderContext,
    ResultSet,
    UnboundTemplateVariableError,
    UnknownContextKeyError,
    UnknownPrefixError,
    UpdateRequest,
    QueryError,
    QuerySyntaxError,
    evaluate_ask,
    evaluate_select,
    execute_update,
    parse,
    serialize_results_xml,
    substitute_context,
)
from wikiflow.store import Term, Triple, TriplePattern, TripleStore, Var, iri, literal

from oracles import enumerate_select, materialize_subclass_entailment

EX = "http://example.org/ns#"
PREFIXES = {"ex": EX, "rdfs": "http://www.w3.org/2000/01/rdf-schema#"}
SUB = iri(RDFS_SUBCLASSOF)


def ex(local):
    return iri(EX + local)


# --- parsing -------------------------------------------------------------------

def test_parse_minimal_select():
    q = parse("SELECT ?s WHERE { ?s ?p ?o }", PREFIXES)
    assert isinstance(q, Query)
    assert q.form == "select"
    assert q.projected == ("s",)
    assert len(q.where) == 1
    assert q.entailment == "none"


def test_parse_unknown_prefix():
    with pytest.raises(UnknownPrefixError):
        parse("ASK { zz:t1 zz:guard true }", PREFIXES)


def test_parse_two_pattern_join_structure():
    q = parse(
        "SELECT ?u WHERE { ?u ex:responsibleFor ?c . ?spec ex:identifiedAs ?c }",
        PREFIXES,
    )
    expected = Query(
        "select",
        ("u",),
        (
            TriplePattern(Var("u"), ex("responsibleFor"), Var("c")),
            TriplePattern(Var("spec"), ex("identifiedAs"), Var("c")),
        ),
    )
    assert q == expected


def test_parse_with_inference_flag():
    q = parse("ASK { ?a rdfs:subClassOf ?b } WITH INFERENCE", PREFIXES)
    assert q.entailment == "rdfs-subclass"


def test_parse_filter_and_literals():
    q = parse('SELECT ?s WHERE { ?s ex:p ?v . FILTER(?v != "done") }', PREFIXES)
    assert q.filters == (FilterExpr("!=", Var("v"), literal("done")),)


def test_parse_typed_and_tagged_literals():
    q = parse('ASK { ex:s ex:p "x"@en . ex:s ex:q "3"^^<http://www.w3.org/2001/XMLSchema#integer> }', PREFIXES)
    assert q.where[0].object == literal("x", lang="en")
    assert q.where[1].object == literal("3", datatype=XSD + "integer")


def test_parse_boolean_and_number():
    q = parse("ASK { ex:t ex:guard true . ex:t ex:n 42 }", PREFIXES)
    assert q.where[0].object == literal("true", datatype=XSD + "boolean")
    assert q.where[1].object == literal("42", datatype=XSD + "integer")


def test_parse_syntax_error_has_position():
    with pytest.raises(QuerySyntaxError) as err:
        parse("SELECT ?s WHERE { ?s ?p }", PREFIXES)
    assert err.value.position > 0


def test_parse_projected_var_must_occur():
    with pytest.raises(QueryError):
        parse("SELECT ?nope WHERE { ?s ?p ?o }", PREFIXES)


def test_parse_updates():
    u = parse('INSERT DATA { ex:a ex:p "v" . ex:b ex:p "w" }', PREFIXES)
    assert isinstance(u, UpdateRequest)
    assert u.kind == "insert-data"
    assert len(u.insert_templates) == 2

    u2 = parse('DELETE { ?t ex:state "assigned" } INSERT { ?t ex:state "started" } WHERE { ?t ex:state "assigned" }', PREFIXES)
    assert u2.kind == "modify"


def test_parse_modify_unbound_template_var():
    with pytest.raises(UnboundTemplateVariableError):
        parse("DELETE { ?x ex:p ?y } WHERE { ?x ex:p ex:o }", PREFIXES)


# --- context substitution --------------------------------------------------------

def test_substitute_no_placeholder_is_identity():
    ctx = RenderContext.of(current_user=ex("bob"))
    text = "SELECT ?s WHERE { ?s ?p ?o }"
    assert substitute_context(text, ctx) == text


def test_substitute_current_user():
    ctx = RenderContext.of(current_user=ex("bob"))
    out = substitute_context("SELECT ?t WHERE { ?t ex:assignee ${currentUser} }", ctx)
    assert out == f"SELECT ?t WHERE {{ ?t ex:assignee <{EX}bob> }}"


def test_substitute_unknown_key():
    with pytest.raises(UnknownContextKeyError) as err:
        substitute_context("${nope}", RenderContext.of())
    assert err.value.key == "nope"


def test_substitute_idempotent_on_placeholder_free_output():
    ctx = RenderContext.of(current_user=ex("bob"), task=ex("t1"))
    out = substitute_context("ASK { ${task} ex:assignee ${currentUser} }", ctx)
    assert substitute_context(out, ctx) == out


# --- evaluation -------------------------------------------------------------------

def _store(*triples):
    s = TripleStore()
    s.bind_prefix("ex", EX)
    for t in triples:
        s.insert(t)
    return s


def test_select_empty_store():
    rs = evaluate_select(parse("SELECT ?s WHERE { ?s ?p ?o }", PREFIXES), _store().snapshot())
    assert rs.rows == []


def test_select_join_hand_oracle():
    # nested-loop by hand: the only ?u with responsibleFor matching the
    # identifiedAs class of any specimen is carol
    store = _store(
        Triple(ex("s1"), ex("identifiedAs"), ex("Morchella")),
        Triple(ex("carol"), ex("responsibleFor"), ex("Morchella")),
        Triple(ex("dana"), ex("responsibleFor"), ex("Boletus")),
    )
    q = parse("SELECT ?u WHERE { ?spec ex:identifiedAs ?c . ?u ex:responsibleFor ?c }", PREFIXES)
    rs = evaluate_select(q, store.snapshot())
    assert [row["u"] for row in rs.rows] == [ex("carol")]


def test_ask_empty_and_present():
    store = _store(Triple(ex("a"), ex("p"), ex("b")))
    assert evaluate_ask(parse("ASK { ex:a ex:p ex:b }", PREFIXES), store.snapshot())
    assert not evaluate_ask(parse("ASK { ex:a ex:p ex:missing }", PREFIXES), store.snapshot())
    assert not evaluate_ask(parse("ASK { ?s ?p ?o }", PREFIXES), _store().snapshot())


def _random_graph(rng):
    subjects = [ex(f"s{i}") for i in range(6)]
    predicates = [ex(f"p{i}") for i in range(3)] + [SUB]
    objects = subjects + [literal(f"v{i}") for i in range(3)]
    triples = set()
    for _ in range(rng.randint(1, 60)):
        p = rng.choice(predicates)
        o = rng.choice(subjects) if p == SUB else rng.choice(objects)
        triples.add(Triple(rng.choice(subjects), p, o))
    return triples


def _random_query(rng, triples):
    pool_terms = sorted({t for trip in triples for t in trip}, key=repr)
    var_names = ["a", "b", "c"]
    patterns = []
    used_vars = set()
    for _ in range(rng.randint(1, 3)):
        def pick(position):
            if rng.random() < 0.5:
                v = rng.choice(var_names)
                used_vars.add(v)
                return Var(v)
            candidates = [t for t in pool_terms if position == "o" or t.kind == "iri"]
            return rng.choice(candidates) if candidates else Var("a")
        patterns.append(TriplePattern(pick("s"), pick("p"), pick("o")))
    all_vars = sorted({v for p in patterns for v in p.variables()})
    if not all_vars:
        patterns[0] = TriplePattern(Var("a"), patterns[0].predicate, patterns[0].object)
        all_vars = ["a"]
    k = rng.randint(1, len(all_vars))
    projected = sorted(rng.sample(all_vars, k))
    return patterns, projected


def test_select_matches_exhaustive_enumeration_sample():
    rng = random.Random(42)
    for _ in range(40):
        triples = _random_graph(rng)
        patterns, projected = _random_query(rng, triples)
        store = _store(*triples)
        q = Query("select", tuple(projected), tuple(patterns))
        rs = evaluate_select(q, store.snapshot())
        got = {tuple(repr(row[v]) for v in projected) for row in rs.rows}
        want = enumerate_select(triples, patterns, projected)
        assert got == want


def test_select_with_inference_matches_materialized_enumeration():
    rng = random.Random(43)
    for _ in range(20):
        triples = _random_graph(rng)
        patterns, projected = _random_query(rng, triples)
        store = _store(*triples)
        q = Query("select", tuple(projected), tuple(patterns), entailment="rdfs-subclass")
        rs = evaluate_select(q, store.snapshot())
        got = {tuple(repr(row[v]) for v in projected) for row in rs.rows}
        closed = materialize_subclass_entailment(triples)
        want = enumerate_select(closed, patterns, projected)
        assert got == want


def test_ask_equals_select_nonempty():
    rng = random.Random(44)
    for _ in range(25):
        triples = _random_graph(rng)
        patterns, projected = _random_query(rng, triples)
        store = _store(*triples)
        sel = Query("select", tuple(projected), tuple(patterns))
        ask = Query("ask", (), tuple(patterns))
        assert evaluate_ask(ask, store.snapshot()) == bool(evaluate_select(sel, store.snapshot()).rows)


def test_filter_never_adds_rows():
    rng = random.Random(45)
    for _ in range(20):
        triples = _random_graph(rng)
        patterns, projected = _random_query(rng, triples)
        store = _store(*triples)
        base = Query("select", tuple(projected), tuple(patterns))
        filtered = Query("select", tuple(projected), tuple(patterns),
                         (FilterExpr("!=", Var(projected[0]), ex("s0")),))
        base_rows = {tuple(repr(r.get(v)) for v in projected)
                     for r in evaluate_select(base, store.snapshot()).rows}
        filt_rows = {tuple(repr(r.get(v)) for v in projected)
                     for r in evaluate_select(filtered, store.snapshot()).rows}
        assert filt_rows <= base_rows


def test_filter_comparisons():
    store = _store(
        Triple(ex("a"), ex("n"), literal("3", datatype=XSD + "integer")),
        Triple(ex("b"), ex("n"), literal("12", datatype=XSD + "integer")),
    )
    q = parse("SELECT ?s WHERE { ?s ex:n ?v . FILTER(?v > 5) }", PREFIXES)
    rs = evaluate_select(q, store.snapshot())
    assert [r["s"] for r in rs.rows] == [ex("b")]  # numeric, not lexicographic


def test_deterministic_row_order_and_bytes():
    store = _store(
        Triple(ex("b"), ex("p"), ex("x")),
        Triple(ex("a"), ex("p"), ex("x")),
        Triple(ex("c"), ex("p"), ex("x")),
    )
    q = parse("SELECT ?s WHERE { ?s ex:p ex:x }", PREFIXES)
    xml1 = serialize_results_xml(evaluate_select(q, store.snapshot()))
    xml2 = serialize_results_xml(evaluate_select(q, store.snapshot()))
    assert xml1 == xml2
    assert [r["s"] for r in evaluate_select(q, store.snapshot()).rows] == [ex("a"), ex("b"), ex("c")]


# --- updates ----------------------------------------------------------------------

def test_insert_data_counts():
    store = _store()
    result = execute_update(parse('INSERT DATA { ex:a ex:p "v" . ex:b ex:p "w" }', PREFIXES), store)
    assert result == {"inserted": 2, "removed": 0}
    assert len(store) == 2


def test_modify_no_solutions_is_noop():
    store = _store(Triple(ex("t"), ex("state"), literal("created")))
    before = store.snapshot().triples
    result = execute_update(
        parse('DELETE { ?t ex:state "assigned" } INSERT { ?t ex:state "started" } WHERE { ?t ex:state "assigned" }', PREFIXES),
        store,
    )
    assert result == {"inserted": 0, "removed": 0}
    assert store.snapshot().triples == before


def test_modify_rewrites_state():
    store = _store(
        Triple(ex("t1"), ex("state"), literal("assigned")),
        Triple(ex("t2"), ex("state"), literal("created")),
    )
    before = store.snapshot().triples
    result = execute_update(
        parse('DELETE { ?t ex:state "assigned" } INSERT { ?t ex:state "started" } WHERE { ?t ex:state "assigned" }', PREFIXES),
        store,
    )
    after = store.snapshot().triples
    assert result == {"inserted": 1, "removed": 1}
    assert after - before == {Triple(ex("t1"), ex("state"), literal("started"))}
    assert before - after == {Triple(ex("t1"), ex("state"), literal("assigned"))}


# --- results XML --------------------------------------------------------------------

def test_empty_resultset_xml():
    xml = serialize_results_xml(ResultSet(["s"]))
    root = ET.fromstring(xml)
    ns = {"sr": SPARQL_RESULTS_NS}
    assert len(root.findall("sr:head/sr:variable", ns)) == 1
    assert root.find("sr:head/sr:variable", ns).get("name") == "s"
    assert len(root.findall("sr:results/sr:result", ns)) == 0


def test_single_row_uri_binding_xml():
    xml = serialize_results_xml(ResultSet(["s"], [{"s": ex("a")}]))
    root = ET.fromstring(xml)
    ns = {"sr": SPARQL_RESULTS_NS}
    uri = root.find("sr:results/sr:result/sr:binding/sr:uri", ns)
    assert uri.text == EX + "a"


def _parse_results_xml(xml_text: str) -> ResultSet:
    """Test-only XML reader for the round-trip oracle."""
    root = ET.fromstring(xml_text)
    ns = {"sr": SPARQL_RESULTS_NS}
    rs = ResultSet([v.get("name") for v in root.findall("sr:head/sr:variable", ns)])
    for result in root.findall("sr:results/sr:result", ns):
        row = {}
        for binding in result.findall("sr:binding", ns):
            name = binding.get("name")
            uri = binding.find("sr:uri", ns)
            if uri is not None:
                row[name] = iri(uri.text or "")
            else:
                lit = binding.find("sr:literal", ns)
                lang = lit.get("{http://www.w3.org/XML/1998/namespace}lang")
                row[name] = Term("literal", lit.text or "", datatype=lit.get("datatype"), lang=lang)
        rs.rows.append(row)
    return rs


def test_results_xml_round_trip_random():
    rng = random.Random(46)
    for _ in range(25):
        variables = [f"v{i}" for i in range(rng.randint(1, 3))]
        rows = []
        for _ in range(rng.randint(0, 5)):
            row = {}
            for v in variables:
                choice = rng.random()
                if choice < 0.3:
                    row[v] = ex(f"r{rng.randint(0, 9)}")
                elif choice < 0.6:
                    row[v] = literal(f"text {rng.randint(0, 9)} <&>\"")
                elif choice < 0.8:
                    row[v] = literal("tagged", lang="en")
                else:
                    row[v] = literal(str(rng.randint(0, 99)), datatype=XSD + "integer")
            rows.append(row)
        rs = ResultSet(variables, rows)
        back = _parse_results_xml(serialize_results_xml(rs))
        assert back.variables == rs.variables
        assert back.rows == rs.rows
