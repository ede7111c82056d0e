"""Independent brute-force oracles used to freeze expected values.

Everything here deliberately avoids the library's evaluation paths: plain
fixpoint loops and exhaustive enumeration only.
"""

from __future__ import annotations

import itertools

from wikiflow.namespaces import RDF_TYPE, RDFS_SUBCLASSOF
from wikiflow.store import Term, Triple, TriplePattern, Var

SUB = Term("iri", RDFS_SUBCLASSOF)
TYP = Term("iri", RDF_TYPE)


def brute_match(triples, pattern: TriplePattern) -> set[tuple]:
    """Per-triple unification scan; bindings as sorted (name, nt) tuples."""
    out = set()
    for t in triples:
        binding = {}
        ok = True
        for pos, val in zip(pattern.positions(), (t.subject, t.predicate, t.object)):
            if pos is None:
                continue
            if isinstance(pos, Var):
                if pos.name in binding and binding[pos.name] != val:
                    ok = False
                    break
                binding[pos.name] = val
            elif pos != val:
                ok = False
                break
        if ok:
            out.add(tuple(sorted((k, repr(v)) for k, v in binding.items())))
    return out


def materialize_subclass_entailment(triples) -> set[Triple]:
    """Naive fixpoint: reflexive+transitive subClassOf plus rdf:type propagation."""
    closed = set(triples)
    classes = set()
    for t in closed:
        if t.predicate == SUB:
            classes.add(t.subject)
            if t.object.kind == "iri":
                classes.add(t.object)
        elif t.predicate == TYP and t.object.kind == "iri":
            classes.add(t.object)
    for c in classes:
        closed.add(Triple(c, SUB, c))
    changed = True
    while changed:
        changed = False
        sub_pairs = [(t.subject, t.object) for t in closed if t.predicate == SUB]
        for (a, b) in sub_pairs:
            for (c, d) in sub_pairs:
                if b == c:
                    t = Triple(a, SUB, d)
                    if t not in closed:
                        closed.add(t)
                        changed = True
        for t in list(closed):
            if t.predicate == TYP:
                for (c, d) in sub_pairs:
                    if t.object == c:
                        t2 = Triple(t.subject, TYP, d)
                        if t2 not in closed:
                            closed.add(t2)
                            changed = True
    return closed


def closure_by_fixpoint(triples, cls: Term) -> set[Term]:
    """Ancestors of cls including itself, by repeated edge application."""
    out = {cls}
    changed = True
    while changed:
        changed = False
        for t in triples:
            if t.predicate == SUB and t.subject in out and t.object not in out:
                out.add(t.object)
                changed = True
    return out


def enumerate_select(triples, patterns: list[TriplePattern], projected: list[str]) -> set[tuple]:
    """Exhaustive assignment enumeration over the term universe of the graph.

    Tries every assignment of every variable to every term appearing in the
    graph, keeps assignments under which all patterns are asserted triples,
    and projects. Only feasible for small universes.
    """
    triple_set = set(triples)
    universe = sorted({term for t in triple_set for term in t}, key=repr)
    variables = sorted({v for p in patterns for v in p.variables()})
    rows = set()
    for combo in itertools.product(universe, repeat=len(variables)):
        assignment = dict(zip(variables, combo))
        ok = True
        for p in patterns:
            parts = []
            for pos in p.positions():
                if isinstance(pos, Var):
                    parts.append(assignment[pos.name])
                elif pos is None:
                    parts.append(None)
                else:
                    parts.append(pos)
            if None in parts:
                # wildcard: satisfied if any triple matches fixed positions
                if not any(all(q is None or q == w for q, w in zip(parts, t)) for t in triple_set):
                    ok = False
                    break
            else:
                if parts[0].kind != "iri" or parts[1].kind != "iri":
                    ok = False
                    break
                if Triple(parts[0], parts[1], parts[2]) not in triple_set:
                    ok = False
                    break
        if ok:
            rows.add(tuple(repr(assignment[v]) for v in projected))
    return rows


def forward_chain(rules: list[tuple[tuple, list[tuple]]], facts: set[tuple]) -> set[tuple]:
    """Naive bottom-up Datalog evaluation.

    Rules are (head, body) where head/body atoms are tuples
    (functor, arg1, ...) and arguments are either ('var', name) or
    ('const', value). Facts are ground (functor, v1, ...) tuples.
    """
    known = set(facts)

    def match_atom(atom, fact, binding):
        if atom[0] != fact[0] or len(atom) != len(fact):
            return None
        b = dict(binding)
        for a, f in zip(atom[1:], fact[1:]):
            if a[0] == "const":
                if a[1] != f:
                    return None
            else:
                if a[1] in b and b[a[1]] != f:
                    return None
                b[a[1]] = f
        return b

    changed = True
    while changed:
        changed = False
        for head, body in rules:
            bindings = [{}]
            for atom in body:
                nxt = []
                for b in bindings:
                    for fact in known:
                        b2 = match_atom(atom, fact, b)
                        if b2 is not None:
                            nxt.append(b2)
                bindings = nxt
            for b in bindings:
                new_fact = (head[0],) + tuple(
                    a[1] if a[0] == "const" else b[a[1]] for a in head[1:]
                )
                if new_fact not in known:
                    known.add(new_fact)
                    changed = True
    return known
