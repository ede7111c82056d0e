import pytest

from wikiflow.clock import FixedClock
from wikiflow.engine import (
    Engine,
    FormValidationError,
    NoEnabledTransitionError,
    UnknownDefinitionError,
    WrongStateError,
    WrongUserError,
    choose_transition,
)
from wikiflow.namespaces import PM, RDF_TYPE
from wikiflow.procdef import Transition
from wikiflow.rules import parse_rules
from wikiflow.sparql import RenderContext, evaluate_select, parse
from wikiflow.store import Term, Triple, TriplePattern, TripleStore, Var, iri, literal
from wikiflow.wiki import TemplateRegistry, WikiRepo, register_wiki_actions

from conftest import TAXONOMY_LINES
from oracles import closure_by_fixpoint

EX = "http://example.org/ns#"
BASE = "http://wikiflow.example/"

ALICE = iri(EX + "alice")
BOB = iri(EX + "bob")
CAROL = iri(EX + "carol")

MINIMAL = "process tiny version 1\nstart begin\n  -> finish\nend finish\n"

ONE_TASK = """
process work version 1
swimlane Taxonomist
  role ex:TaxonomistRole
start begin
  -> review
task review
  lane Taxonomist
  subject ${taxon}
  -> finish
end finish
"""

FORK_JOIN = """
process par version 1
swimlane Taxonomist
  role ex:TaxonomistRole
start begin
  -> split
fork split
  -> left
  -> right
task left
  lane Taxonomist
  -> merge
task right
  lane Taxonomist
  -> merge
join merge
  -> finish
end finish
"""


def build_engine(rulebase=None, grouping_root=None, templates=None):
    store = TripleStore()
    store.load_text(TAXONOMY_LINES)
    engine = Engine(store, templates=templates, rulebase=rulebase,
                    clock=FixedClock(), base_iri=BASE, grouping_root=grouping_root)
    return store, engine


def kinds(engine):
    return [e.kind for e in engine.events]


# --- start / trivial runs -----------------------------------------------------------

def test_start_unknown_definition():
    _, engine = build_engine()
    with pytest.raises(UnknownDefinitionError):
        engine.start_process("ghost", 1, ALICE)


def test_no_task_definition_runs_to_end():
    _, engine = build_engine()
    engine.deploy(MINIMAL)
    inst = engine.start_process("tiny", 1, ALICE)
    assert inst.state == "ended"
    assert kinds(engine) == [
        "process-start", "node-enter", "node-leave", "transition-taken",
        "node-enter", "process-end",
    ]
    assert inst.live_tokens() == []


def test_linear_task_blocks_token():
    _, engine = build_engine()
    engine.deploy(ONE_TASK)
    inst = engine.start_process("work", 1, ALICE)
    assert inst.state == "running"
    tokens = inst.live_tokens()
    assert len(tokens) == 1
    assert tokens[0].state == "waiting-on-task"
    task = engine.task(tokens[0].task_id)
    assert task.state == "assigned"
    assert task.assignee == BOB  # only TaxonomistRole holder
    assert kinds(engine)[-1] == "task-assign"


def test_full_task_lifecycle_events_and_token_conservation():
    _, engine = build_engine()
    engine.deploy(ONE_TASK)
    inst = engine.start_process("work", 1, ALICE)
    task = engine.tasks()[0]
    engine.start_task(task.id, BOB)
    engine.complete_task(task.id, BOB, {})
    assert inst.state == "ended"
    assert kinds(engine) == [
        "process-start", "node-enter", "node-leave", "transition-taken", "node-enter",
        "task-assign", "task-start", "task-end",
        "node-leave", "transition-taken", "node-enter", "process-end",
    ]
    created = len(inst.tokens)
    consumed = sum(1 for t in inst.tokens.values() if t.state == "consumed")
    assert created == consumed


def test_event_sequence_strictly_increasing():
    _, engine = build_engine()
    engine.deploy(ONE_TASK)
    engine.start_process("work", 1, ALICE)
    seqs = [e.seq for e in engine.events]
    assert seqs == sorted(seqs)
    assert len(set(seqs)) == len(seqs)


# --- choose_transition ----------------------------------------------------------------

def guard(flag):
    return f"ASK {{ ex:g{flag} ex:flag true }}"


def _guard_store(true_flags):
    from wikiflow.namespaces import XSD

    store = TripleStore()
    store.bind_prefix("ex", EX)
    for f in true_flags:
        store.insert(Triple(iri(EX + f"g{f}"), iri(EX + "flag"),
                            literal("true", datatype=XSD + "boolean")))
    return store


def test_first_true_guard_wins():
    store = _guard_store([1, 2])
    # guards: [false, true, true]
    transitions = [
        Transition("d", "a", guard(0), False, 1),
        Transition("d", "b", guard(1), False, 2),
        Transition("d", "c", guard(2), False, 3),
    ]
    chosen = choose_transition(transitions, store.snapshot(), RenderContext({}), store.prefixes)
    assert chosen.target == "b"


def test_default_when_all_false():
    store = _guard_store([])
    transitions = [
        Transition("d", "a", guard(0), False, 1),
        Transition("d", "b", guard(1), False, 2),
        Transition("d", "dflt", None, True, 3),
    ]
    chosen = choose_transition(transitions, store.snapshot(), RenderContext({}), store.prefixes)
    assert chosen.target == "dflt"


def test_single_unguarded_taken():
    store = _guard_store([])
    transitions = [Transition("d", "next", None, False, 1)]
    chosen = choose_transition(transitions, store.snapshot(), RenderContext({}), store.prefixes)
    assert chosen.target == "next"


def test_no_enabled_transition_raises_in_engine():
    _, engine = build_engine()
    engine.deploy(
        'process dead version 1\nstart begin\n  -> dec\ndecision dec\n'
        f'  -> finish if "{guard(9)}"\nend finish\n'
    )
    with pytest.raises(NoEnabledTransitionError):
        engine.start_process("dead", 1, ALICE)


def test_override_rule_claims_selection():
    rb = parse_rules('on(transitionSelection(Inst, Node)) do selectTransition("finish").')
    _, engine = build_engine(rulebase=rb)
    engine.deploy(
        'process saved version 1\nstart begin\n  -> dec\ndecision dec\n'
        f'  -> finish if "{guard(9)}"\nend finish\n'
    )
    inst = engine.start_process("saved", 1, ALICE)
    assert inst.state == "ended"


# --- assignment ---------------------------------------------------------------------

SEMANTIC_LANE = """
process assign version 1
swimlane Curator
  query "SELECT ?u WHERE { ?spec ex:identifiedAs ?c . ?c rdfs:subClassOf ?anc . ?u ex:responsibleFor ?anc } WITH INFERENCE"
start begin
  -> curate
task curate
  lane Curator
  -> finish
end finish
"""


def test_semantic_assignment_via_subclass_closure():
    store, engine = build_engine()
    store.insert(Triple(iri(EX + "spec1"), iri(EX + "identifiedAs"), iri(EX + "Morchella")))
    engine.deploy(SEMANTIC_LANE)
    engine.start_process("assign", 1, ALICE)
    task = engine.tasks()[0]
    # oracle: subclass closure of Morchella joined with responsibleFor by hand
    closure = closure_by_fixpoint(store.snapshot().triples, iri(EX + "Morchella"))
    holders = sorted(
        r["u"].value
        for r in store.match(TriplePattern(Var("u"), iri(EX + "responsibleFor"), Var("c")))
        if r["c"] in closure
    )
    assert holders == [CAROL.value]
    assert task.assignee == CAROL
    assert task.state == "assigned"


def test_zero_candidates_leaves_unassigned_pool():
    store, engine = build_engine()
    # no identifiedAs fact: the curator query has no solutions
    engine.deploy(SEMANTIC_LANE)
    engine.start_process("assign", 1, ALICE)
    task = engine.tasks()[0]
    assert task.state == "created"
    assert task.assignee is None
    assert "task-assign" not in kinds(engine)


def test_multiple_candidates_lexicographic_tiebreak():
    store, engine = build_engine()
    store.insert(Triple(iri(EX + "spec1"), iri(EX + "identifiedAs"), iri(EX + "Morchella")))
    # second responsible person for the same family
    store.insert(Triple(iri(EX + "zoe"), iri(EX + "responsibleFor"), iri(EX + "Ascomycota")))
    engine.deploy(SEMANTIC_LANE)
    engine.start_process("assign", 1, ALICE)
    task = engine.tasks()[0]
    assert task.assignee == CAROL  # ex:carol < ex:zoe
    assert "multiple-candidates" in (task.note or "")


def test_reassign_task_admin_op():
    _, engine = build_engine()
    engine.deploy(ONE_TASK)
    engine.start_process("work", 1, ALICE)
    task = engine.tasks()[0]
    engine.reassign_task(task.id, CAROL)
    assert task.assignee == CAROL
    engine.start_task(task.id, CAROL)
    with pytest.raises(WrongStateError):
        engine.reassign_task(task.id, BOB)


# --- task guards -----------------------------------------------------------------------

def test_wrong_user_and_wrong_state():
    _, engine = build_engine()
    engine.deploy(ONE_TASK)
    engine.start_process("work", 1, ALICE)
    task = engine.tasks()[0]
    with pytest.raises(WrongUserError):
        engine.start_task(task.id, ALICE)
    with pytest.raises(WrongStateError):
        engine.complete_task(task.id, BOB, {})
    engine.start_task(task.id, BOB)
    with pytest.raises(WrongUserError):
        engine.complete_task(task.id, CAROL, {})


def test_form_validation_missing_required():
    registry = TemplateRegistry()
    store = TripleStore()
    store.load_text(TAXONOMY_LINES)
    registry.load_file("src/wikiflow/fixtures/templates/curation-form.tpl", store.prefixes)
    engine = Engine(store, templates=registry, clock=FixedClock(), base_iri=BASE)
    engine.deploy(
        "process f version 1\nswimlane T\n  role ex:TaxonomistRole\n"
        "start begin\n  -> fill\ntask fill\n  lane T\n  template curation-form\n"
        "  -> finish\nend finish\n"
    )
    engine.start_process("f", 1, ALICE)
    task = engine.tasks()[0]
    engine.start_task(task.id, BOB)
    with pytest.raises(FormValidationError) as err:
        engine.complete_task(task.id, BOB, {})
    assert err.value.fields == ["verdict"]
    engine.complete_task(task.id, BOB, {"verdict": literal("fine")})
    assert task.state == "completed"


# --- fork / join --------------------------------------------------------------------------

def test_fork_creates_independent_children():
    _, engine = build_engine()
    engine.deploy(FORK_JOIN)
    inst = engine.start_process("par", 1, ALICE)
    waiting = [t for t in inst.live_tokens() if t.state == "waiting-on-task"]
    assert len(waiting) == 2
    assert len(engine.tasks()) == 2


def test_join_waits_for_all_siblings():
    _, engine = build_engine()
    engine.deploy(FORK_JOIN)
    inst = engine.start_process("par", 1, ALICE)
    first, second = engine.tasks()
    engine.start_task(first.id, BOB)
    engine.complete_task(first.id, BOB, {})
    assert inst.state == "running"  # one branch still active
    engine.start_task(second.id, BOB)
    engine.complete_task(second.id, BOB, {})
    assert inst.state == "ended"
    assert kinds(engine).count("process-end") == 1


# --- decoration -------------------------------------------------------------------------

def test_decoration_process_start_type_triple():
    store, engine = build_engine()
    engine.deploy(MINIMAL)
    inst = engine.start_process("tiny", 1, ALICE)
    assert store.ask(TriplePattern(inst.uri, iri(RDF_TYPE), iri(PM + "ProcessInstance")))
    assert store.ask(TriplePattern(inst.uri, iri(PM + "state"), literal("ended")))


def test_decoration_assignee_queryable():
    store, engine = build_engine()
    engine.deploy(ONE_TASK)
    engine.start_process("work", 1, ALICE)
    task = engine.tasks()[0]
    rows = store.match(TriplePattern(task.uri, iri(PM + "assignee"), Var("u")))
    assert [r["u"] for r in rows] == [BOB]


def _decoration_matches_registry(store, engine):
    view = store.snapshot()
    typed_instances = {r["s"] for r in view.match(
        TriplePattern(Var("s"), iri(RDF_TYPE), iri(PM + "ProcessInstance")))}
    assert typed_instances == {i.uri for i in engine.instances()}
    typed_tasks = {r["s"] for r in view.match(
        TriplePattern(Var("s"), iri(RDF_TYPE), iri(PM + "TaskInstance")))}
    assert typed_tasks == {t.uri for t in engine.tasks()}
    for inst in engine.instances():
        rows = view.match(TriplePattern(inst.uri, iri(PM + "state"), Var("s")))
        assert [r["s"].value for r in rows] == [inst.state if inst.state == "running" else "ended"]
    assignee_rows = view.match(TriplePattern(Var("t"), iri(PM + "assignee"), Var("u")))
    engine_assignees = {(t.uri, t.assignee) for t in engine.tasks() if t.assignee}
    assert {(r["t"], r["u"]) for r in assignee_rows} == engine_assignees


def test_decoration_counts_equal_registry_after_full_run():
    store, engine = build_engine()
    engine.deploy(FORK_JOIN)
    engine.start_process("par", 1, ALICE)
    for task in engine.tasks():
        engine.start_task(task.id, BOB)
        engine.complete_task(task.id, BOB, {})
    _decoration_matches_registry(store, engine)


def test_decorate_is_replayable():
    store, engine = build_engine()
    engine.deploy(MINIMAL)
    engine.start_process("tiny", 1, ALICE)
    event = engine.events[0]
    counts = engine.decorate(event)
    assert counts["inserted"] == 0  # already asserted; set semantics


# --- grouped task lists -----------------------------------------------------------------

def test_list_tasks_empty():
    _, engine = build_engine()
    assert engine.list_tasks(BOB) == []


def test_list_tasks_grouped_by_taxonomy_level():
    store, engine = build_engine(grouping_root=iri(EX + "Fungi"))
    engine.deploy(ONE_TASK)
    engine.start_process("work", 1, ALICE, {"taxon": iri(EX + "Morchella")})
    engine.start_process("work", 1, ALICE, {"taxon": iri(EX + "Boletus")})
    groups = engine.list_tasks(BOB)
    labels = [g.value for g, _ in groups]
    assert labels == [EX + "Ascomycota", EX + "Basidiomycota"]
    # oracle: manual closure lookup on the fixture
    closure = closure_by_fixpoint(store.snapshot().triples, iri(EX + "Morchella"))
    assert iri(EX + "Ascomycota") in closure
    by_label = {g.value: tasks for g, tasks in groups}
    assert len(by_label[EX + "Ascomycota"]) == 1
    assert len(by_label[EX + "Basidiomycota"]) == 1


def test_list_tasks_equals_store_query():
    store, engine = build_engine(grouping_root=iri(EX + "Fungi"))
    engine.deploy(ONE_TASK)
    engine.start_process("work", 1, ALICE, {"taxon": iri(EX + "Morchella")})
    engine.start_process("work", 1, ALICE, {"taxon": iri(EX + "Boletus")})
    flat = sorted(t.uri.value for _, tasks in engine.list_tasks(BOB) for t in tasks)
    q = parse(
        f"SELECT ?t WHERE {{ ?t pm:assignee <{BOB.value}> . ?t pm:state ?s . "
        f'FILTER(?s != "completed") }}',
        store.prefixes,
    )
    from_store = sorted(r["t"].value for r in evaluate_select(q, store.snapshot()).rows)
    assert flat == from_store


# --- determinism ----------------------------------------------------------------------------

def _run_scripted(seed_store_lines=""):
    store, engine = build_engine()
    if seed_store_lines:
        store.load_text(seed_store_lines)
    engine.deploy(ONE_TASK)
    engine.start_process("work", 1, ALICE, {"taxon": iri(EX + "Morchella")})
    task = engine.tasks()[0]
    engine.start_task(task.id, BOB)
    engine.complete_task(task.id, BOB, {})
    return [(e.kind, e.subject_uri.value) for e in engine.events]


def test_identical_runs_identical_event_streams():
    assert _run_scripted() == _run_scripted()


# --- wiki-bound completion actions ------------------------------------------------------

def test_completion_actions_create_page_and_typed_link():
    store = TripleStore()
    store.load_text(TAXONOMY_LINES)
    registry = TemplateRegistry()
    for name in ("discovery-form", "identification-form"):
        registry.load_file(f"src/wikiflow/fixtures/templates/{name}.tpl", store.prefixes)
    engine = Engine(store, templates=registry, clock=FixedClock(), base_iri=BASE)
    repo = WikiRepo(store, BASE, templates=registry, clock=FixedClock())
    register_wiki_actions(engine, repo)
    engine.deploy(
        "process pages version 1\n"
        "swimlane F\n  role ex:FieldWorkParticipantRole\n"
        "swimlane T\n  role ex:TaxonomistRole\n"
        "start begin\n  -> describe\n"
        "task describe\n  lane F\n  template discovery-form\n"
        "  action create-page template=discovery-form name=Discovery${instanceSeq} store-as=discoveryPage\n"
        "  -> identify\n"
        "task identify\n  lane T\n  template identification-form\n"
        "  action create-page template=identification-form name=Identification${instanceSeq} store-as=identificationPage\n"
        "  action typed-link from=${discoveryPage} predicate=ex:identifiedAs to=${identificationPage}\n"
        "  -> finish\n"
        "end finish\n"
    )
    engine.start_process("pages", 1, ALICE)
    describe = engine.tasks()[0]
    engine.start_task(describe.id, ALICE)
    engine.complete_task(describe.id, ALICE, {
        "locality": literal("forest floor"), "taxonHint": iri(EX + "Fungi")})
    assert repo.exists("Discovery1")
    identify = engine.tasks()[1]
    engine.start_task(identify.id, BOB)
    engine.complete_task(identify.id, BOB, {
        "taxon": iri(EX + "Morchella"), "identifiedBy": BOB})
    assert repo.exists("Identification1")
    assert store.ask(TriplePattern(
        repo.page_iri("Discovery1"), iri(EX + "identifiedAs"), repo.page_iri("Identification1")))
    # form data decorated on the task itself
    assert store.ask(TriplePattern(identify.uri, iri(EX + "taxon"), iri(EX + "Morchella")))


def test_event_ordering_invariants_per_task():
    _, engine = build_engine()
    engine.deploy(FORK_JOIN)
    engine.start_process("par", 1, ALICE)
    for task in engine.tasks():
        engine.start_task(task.id, BOB)
        engine.complete_task(task.id, BOB, {})
    events = engine.events
    assert events[0].kind == "process-start"
    assert events[-1].kind == "process-end"
    assert sum(1 for e in events if e.kind == "process-end") == 1
    for task in engine.tasks():
        per_task = {e.kind: e.seq for e in events if e.subject_uri == task.uri}
        assert per_task["task-assign"] < per_task["task-start"] < per_task["task-end"]


def test_events_after_long_poll_wakes_on_new_event():
    import threading
    import time

    _, engine = build_engine()
    engine.deploy(MINIMAL)

    results = {}

    def waiter():
        results["events"] = engine.events_after(0, wait_seconds=5.0)

    thread = threading.Thread(target=waiter)
    thread.start()
    time.sleep(0.1)
    started = time.monotonic()
    engine.start_process("tiny", 1, ALICE)
    thread.join(timeout=5)
    assert not thread.is_alive()
    assert time.monotonic() - started < 2.0  # woke early, not at the timeout
    assert results["events"]


def test_public_advance_requires_active_token():
    _, engine = build_engine()
    engine.deploy(ONE_TASK)
    inst = engine.start_process("work", 1, ALICE)
    waiting = inst.live_tokens()[0]
    with pytest.raises(WrongStateError):
        engine.advance(inst, waiting)  # waiting-on-task, not active


def test_list_tasks_without_grouping_root_groups_by_class():
    _, engine = build_engine()  # no grouping_root configured
    engine.deploy(ONE_TASK)
    engine.start_process("work", 1, ALICE, {"taxon": iri(EX + "Morchella")})
    groups = engine.list_tasks(BOB)
    assert [g.value for g, _ in groups] == [EX + "Morchella"]
