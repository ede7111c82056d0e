"""Platform-independent XML interchange of rulebases.

Rule-markup-inspired element vocabulary (<atom>, <var>, <ind>, <data>, ...)
under a fixed artifact namespace; the structural schema ships as
schema/interchange-schema.json and import validates against it before
rebuilding the internal rules, re-checking range restriction on the way in.
"""

from __future__ import annotations

import json
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from importlib import resources
from xml.sax.saxutils import escape, quoteattr

from .rules import (
    ACTION_ARITIES,
    Compare,
    DerivationRule,
    ECARule,
    GoalStep,
    MessagingRule,
    MsgPattern,
    Naf,
    RAtom,
    ReceiveStep,
    RList,
    RStruct,
    RuleBase,
    RVar,
    SendStep,
    _check_derivation_range,
    _check_eca_range,
    _check_messaging,
)
from .store import Term


NAMESPACE = "http://wikiflow.example/interchange#"

_CMP_TOKENS = {"=": "eq", "!=": "ne", "<": "lt", "<=": "le", ">": "gt", ">=": "ge"}
_CMP_OPS = {v: k for k, v in _CMP_TOKENS.items()}


class InterchangeError(Exception):
    pass


class SchemaViolationError(InterchangeError):
    def __init__(self, message: str, path: str):
        super().__init__(f"{path}: {message}")
        self.path = path


# --- export -----------------------------------------------------------------------

def export_rules(rulebase: RuleBase) -> str:
    """Deterministic, schema-valid serialization of all three rule kinds."""
    out = ['<?xml version="1.0" encoding="UTF-8"?>', f'<rulebase xmlns="{NAMESPACE}">']
    for rule in rulebase.all_rules():
        if isinstance(rule, DerivationRule):
            out.append(f'  <derivation id="r{rule.index}">')
            out.append("    <head>")
            out.append("      " + _term_xml(rule.head))
            out.append("    </head>")
            if rule.body:
                out.append("    <body>")
                for literal_ in rule.body:
                    out.append("      " + _term_xml(literal_))
                out.append("    </body>")
            out.append("  </derivation>")
        elif isinstance(rule, ECARule):
            out.append(f'  <reaction id="r{rule.index}">')
            out.append("    <event>")
            out.append("      " + _term_xml(rule.event))
            out.append("    </event>")
            if rule.condition:
                out.append("    <condition>")
                for literal_ in rule.condition:
                    out.append("      " + _term_xml(literal_))
                out.append("    </condition>")
            out.append("    <actions>")
            for action in rule.actions:
                out.append("      " + _term_xml(action))
            out.append("    </actions>")
            out.append("  </reaction>")
        else:
            out.append(f'  <messaging id="r{rule.index}">')
            out.append("    <receive>" + _pattern_xml(rule.trigger) + "</receive>")
            out.append("    <steps>")
            for step in rule.steps:
                if isinstance(step, SendStep):
                    out.append("      <send>" + _pattern_xml(step.pattern) + "</send>")
                elif isinstance(step, ReceiveStep):
                    out.append("      <receive>" + _pattern_xml(step.pattern) + "</receive>")
                else:
                    out.append("      <goal>" + _term_xml(step.literal) + "</goal>")
            out.append("    </steps>")
            out.append("  </messaging>")
    out.append("</rulebase>")
    return "\n".join(out) + "\n"


def _pattern_xml(pattern: MsgPattern) -> str:
    return "".join(_term_xml(f) for f in pattern.fields())


def _term_xml(t) -> str:
    if isinstance(t, RVar):
        return f"<var name={quoteattr(t.name)}/>"
    if isinstance(t, RAtom):
        return f"<ind>{escape(t.name)}</ind>"
    if isinstance(t, Term):
        if t.is_iri:
            return f"<iri>{escape(t.value)}</iri>"
        attrs = ""
        if t.datatype:
            attrs += f" datatype={quoteattr(t.datatype)}"
        if t.lang:
            attrs += f" lang={quoteattr(t.lang)}"
        return f"<data{attrs}>{escape(t.value)}</data>"
    if isinstance(t, RList):
        return "<list>" + "".join(_term_xml(x) for x in t.items) + "</list>"
    if isinstance(t, RStruct):
        return (f"<atom functor={quoteattr(t.functor)}>"
                + "".join(_term_xml(a) for a in t.args) + "</atom>")
    if isinstance(t, Compare):
        return (f'<compare op="{_CMP_TOKENS[t.op]}">'
                + _term_xml(t.left) + _term_xml(t.right) + "</compare>")
    if isinstance(t, Naf):
        return "<naf>" + _term_xml(t.goal) + "</naf>"
    raise InterchangeError(f"cannot serialize {t!r}")


# --- schema validation ----------------------------------------------------------

def _load_schema() -> dict:
    text = resources.files("wikiflow").joinpath("schema/interchange-schema.json").read_text("utf-8")
    return json.loads(text)


def _local(tag: str) -> str:
    return tag.rsplit("}", 1)[-1]


def validate_document(root: ET.Element) -> None:
    schema = _load_schema()
    expected_ns = "{" + schema["namespace"] + "}"
    if not root.tag.startswith(expected_ns):
        raise SchemaViolationError(
            f"root element not in namespace {schema['namespace']}", f"/{_local(root.tag)}")
    if _local(root.tag) != schema["root"]:
        raise SchemaViolationError(f"root must be {schema['root']}", f"/{_local(root.tag)}")
    _validate_element(root, schema, f"/{schema['root']}")


def _validate_element(el: ET.Element, schema: dict, path: str) -> None:
    name = _local(el.tag)
    spec = schema["elements"].get(name)
    if spec is None:
        raise SchemaViolationError(f"unknown element {name}", path)
    for attr in el.attrib:
        if attr not in spec.get("attrs", []):
            raise SchemaViolationError(f"unexpected attribute {attr!r}", path)
    for attr in spec.get("required_attrs", []):
        if attr not in el.attrib:
            raise SchemaViolationError(f"missing attribute {attr!r}", path)
    counts: dict[str, int] = {}
    for i, child in enumerate(el):
        child_name = _local(child.tag)
        child_path = f"{path}/{child_name}[{counts.get(child_name, 0)}]"
        counts[child_name] = counts.get(child_name, 0) + 1
        if child_name not in spec.get("children", []):
            raise SchemaViolationError(f"element {child_name} not allowed here", child_path)
        _validate_element(child, schema, child_path)
    for required in spec.get("required", []):
        if counts.get(required, 0) == 0:
            raise SchemaViolationError(f"missing required child {required}", path)


# --- import -----------------------------------------------------------------------

def import_rules(text: str) -> RuleBase:
    """Parse, schema-validate and rebuild the internal rulebase."""
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise InterchangeError(f"not well-formed XML: {exc}") from exc
    validate_document(root)
    rb = RuleBase()
    index = 0
    for child in root:
        name = _local(child.tag)
        path = f"/rulebase/{name}[{index}]"
        if name == "derivation":
            rb.derivation.append(_import_derivation(child, index, path))
        elif name == "reaction":
            rb.eca.append(_import_reaction(child, index, path))
        else:
            rb.messaging.append(_import_messaging(child, index, path))
        index += 1
    return rb


def _child(el: ET.Element, name: str) -> ET.Element | None:
    for c in el:
        if _local(c.tag) == name:
            return c
    return None


def _import_derivation(el: ET.Element, index: int, path: str) -> DerivationRule:
    head = _import_term(_child(el, "head")[0], path + "/head")
    body_el = _child(el, "body")
    body = tuple(_import_term(c, path + "/body") for c in body_el) if body_el is not None else ()
    rule = DerivationRule(head, body, index)
    _check_derivation_range(rule)
    return rule


def _import_reaction(el: ET.Element, index: int, path: str) -> ECARule:
    event = _import_term(_child(el, "event")[0], path + "/event")
    cond_el = _child(el, "condition")
    condition = tuple(_import_term(c, path + "/condition") for c in cond_el) \
        if cond_el is not None else ()
    actions = []
    for action_el in _child(el, "actions"):
        action = _import_term(action_el, path + "/actions")
        if not isinstance(action, RStruct) or action.functor not in ACTION_ARITIES:
            raise SchemaViolationError("not a known action", path + "/actions")
        if len(action.args) != ACTION_ARITIES[action.functor]:
            raise SchemaViolationError(
                f"action {action.functor} takes {ACTION_ARITIES[action.functor]} arguments",
                path + "/actions")
        actions.append(action)
    rule = ECARule(event, condition, tuple(actions), index)
    _check_eca_range(rule)
    return rule


def _import_messaging(el: ET.Element, index: int, path: str) -> MessagingRule:
    trigger = _import_pattern(_child(el, "receive"), path + "/receive")
    steps = []
    for step_el in _child(el, "steps"):
        name = _local(step_el.tag)
        step_path = f"{path}/steps/{name}"
        if name == "send":
            steps.append(SendStep(_import_pattern(step_el, step_path)))
        elif name == "receive":
            steps.append(ReceiveStep(_import_pattern(step_el, step_path)))
        else:
            children = list(step_el)
            if len(children) != 1:
                raise SchemaViolationError("goal takes exactly one literal", step_path)
            steps.append(GoalStep(_import_term(children[0], step_path)))
    rule = MessagingRule(trigger, tuple(steps), index)
    _check_messaging(rule)
    return rule


def _import_pattern(el: ET.Element, path: str) -> MsgPattern:
    fields = [_import_term(c, path) for c in el]
    if len(fields) != 5:
        raise SchemaViolationError("message pattern takes exactly 5 terms", path)
    return MsgPattern(*fields)


def _import_term(el: ET.Element, path: str):
    name = _local(el.tag)
    if name == "var":
        return RVar(el.get("name"))
    if name == "ind":
        return RAtom(el.text or "")
    if name == "iri":
        return Term("iri", el.text or "")
    if name == "data":
        return Term("literal", el.text or "", datatype=el.get("datatype"), lang=el.get("lang"))
    if name == "list":
        return RList(tuple(_import_term(c, path + "/list") for c in el))
    if name == "atom":
        return RStruct(el.get("functor"),
                       tuple(_import_term(c, path + "/atom") for c in el))
    if name == "compare":
        children = list(el)
        if len(children) != 2:
            raise SchemaViolationError("compare takes exactly 2 terms", path + "/compare")
        op = _CMP_OPS.get(el.get("op"))
        if op is None:
            raise SchemaViolationError(f"unknown comparison {el.get('op')!r}", path + "/compare")
        return Compare(op, _import_term(children[0], path), _import_term(children[1], path))
    if name == "naf":
        children = list(el)
        if len(children) != 1:
            raise SchemaViolationError("naf takes exactly one atom", path + "/naf")
        return Naf(_import_term(children[0], path))
    raise SchemaViolationError(f"unexpected element {name}", path)


# --- audit -------------------------------------------------------------------------

@dataclass(frozen=True)
class TranslationRecord:
    interchange_id: str
    kind: str
    text: str


def translate_report(rulebase: RuleBase) -> list[TranslationRecord]:
    """Per-rule mapping between interchange element ids and internal rules."""
    records = []
    for rule in rulebase.all_rules():
        kind = {DerivationRule: "derivation", ECARule: "reaction",
                MessagingRule: "messaging"}[type(rule)]
        records.append(TranslationRecord(f"r{rule.index}", kind, rule.text()))
    return records
