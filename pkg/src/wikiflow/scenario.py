"""Headless scenario runner: scripted API calls with inline assertions.

Format (one directive per line, '#' comments):

    SETUP config <file>            copied into the data dir before startup
    SETUP users <file>
    SETUP import-ontology <file>   applied after startup
    SETUP template <file>
    SETUP deploy <file>
    <METHOD> <path> [json-body]    API call; POST /login switches the session
    LET <name> <json-pointer>      capture a value from the last response
    EXPECT <status>                status of the last response
    EXPECT event <kind>            an event of this kind occurred since the
                                   previous event assertion (cursor advances)
    EXPECT body <pointer> <text>   stringified value at pointer equals text

``${name}`` interpolates captured values into paths and bodies. SETUP file
paths resolve relative to the scenario file.
"""

from __future__ import annotations

import json
import re
import shutil
from pathlib import Path

from .service import AppState


class ScenarioError(Exception):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


_VAR_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)\}")
_METHODS = ("GET", "POST", "PUT", "DELETE")


def json_pointer(document, pointer: str, line: int):
    if pointer in ("", "/"):
        return document
    node = document
    for raw in pointer.lstrip("/").split("/"):
        key = raw.replace("~1", "/").replace("~0", "~")
        if isinstance(node, list):
            try:
                node = node[int(key)]
            except (ValueError, IndexError) as exc:
                raise ScenarioError(f"pointer {pointer!r}: bad index {key!r}", line) from exc
        elif isinstance(node, dict):
            if key not in node:
                raise ScenarioError(f"pointer {pointer!r}: missing key {key!r}", line)
            node = node[key]
        else:
            raise ScenarioError(f"pointer {pointer!r}: hit a leaf at {key!r}", line)
    return node


class ScenarioRunner:
    def __init__(self, data_dir, out_path=None, clock=None):
        self.data_dir = Path(data_dir)
        self.out_path = Path(out_path) if out_path else self.data_dir / "events.log"
        self.clock = clock
        self.state: AppState | None = None

    def run(self, scenario_path) -> AppState:
        scenario_path = Path(scenario_path)
        lines = scenario_path.read_text("utf-8").splitlines()
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self._apply_pre_setup(lines, scenario_path.parent)
        self.state = AppState.build(self.data_dir, clock=self.clock)
        self._apply_post_setup(lines, scenario_path.parent)
        self._run_api_lines(lines)
        self.state.save()
        self.out_path.parent.mkdir(parents=True, exist_ok=True)
        self.out_path.write_text(self.state.engine.export_event_log(), "utf-8")
        return self.state

    def _apply_pre_setup(self, lines, base: Path) -> None:
        for lineno, line in self._directives(lines):
            words = line.split()
            if words[0] != "SETUP":
                continue
            if words[1] in ("config", "users"):
                source = base / words[2]
                if not source.exists():
                    raise ScenarioError(f"setup file {source} missing", lineno)
                shutil.copy(source, self.data_dir / f"{words[1]}.json")

    def _apply_post_setup(self, lines, base: Path) -> None:
        for lineno, line in self._directives(lines):
            words = line.split()
            if words[0] != "SETUP" or words[1] in ("config", "users"):
                continue
            source = base / words[2]
            if not source.exists():
                raise ScenarioError(f"setup file {source} missing", lineno)
            if words[1] == "import-ontology":
                self.state.import_ontology(source)
            elif words[1] == "template":
                self.state.add_template_file(source)
            elif words[1] == "deploy":
                self.state.deploy_file(source)
            else:
                raise ScenarioError(f"unknown SETUP directive {words[1]!r}", lineno)

    @staticmethod
    def _directives(lines):
        for lineno, raw in enumerate(lines, start=1):
            line = raw.strip()
            if line and not line.startswith("#"):
                yield lineno, line

    def _run_api_lines(self, lines) -> None:
        from fastapi.testclient import TestClient

        from .api import create_app

        client = TestClient(create_app(self.state))
        variables: dict[str, str] = {}
        token: str | None = None
        last_response = None
        event_cursor = 0

        def interpolate(text: str, lineno: int) -> str:
            def sub(m):
                if m.group(1) not in variables:
                    raise ScenarioError(f"unset scenario variable {m.group(1)!r}", lineno)
                return variables[m.group(1)]

            return _VAR_RE.sub(sub, text)

        for lineno, line in self._directives(lines):
            words = line.split(maxsplit=2)
            head = words[0]
            if head == "SETUP":
                continue
            if head == "LET":
                if last_response is None:
                    raise ScenarioError("LET before any API call", lineno)
                value = json_pointer(last_response.json(), words[2], lineno)
                variables[words[1]] = str(value)
                continue
            if head == "EXPECT":
                if words[1] == "event":
                    kind = words[2]
                    found = [e for e in self.state.engine.events
                             if e.seq > event_cursor and e.kind == kind]
                    if not found:
                        raise ScenarioError(f"no {kind!r} event after seq {event_cursor}", lineno)
                    event_cursor = found[0].seq
                    continue
                if words[1] == "body":
                    pointer, _, expected = words[2].partition(" ")
                    if last_response is None:
                        raise ScenarioError("EXPECT body before any API call", lineno)
                    actual = json_pointer(last_response.json(), pointer, lineno)
                    if str(actual) != expected:
                        raise ScenarioError(
                            f"body {pointer} is {actual!r}, expected {expected!r}", lineno)
                    continue
                expected_status = int(words[1])
                if last_response is None:
                    raise ScenarioError("EXPECT before any API call", lineno)
                if last_response.status_code != expected_status:
                    raise ScenarioError(
                        f"status {last_response.status_code}, expected {expected_status}"
                        f" ({last_response.text[:200]})", lineno)
                continue
            if head in _METHODS:
                path = interpolate(words[1], lineno)
                body = interpolate(words[2], lineno) if len(words) > 2 else None
                headers = {"Authorization": f"Bearer {token}"} if token else {}
                if head == "PUT":
                    last_response = client.put(path, content=(body or "").encode("utf-8"),
                                               headers=headers)
                elif head == "GET":
                    last_response = client.get(path, headers=headers)
                elif head == "DELETE":
                    last_response = client.delete(path, headers=headers)
                else:
                    payload = json.loads(body) if body else {}
                    last_response = client.post(path, json=payload, headers=headers)
                if path == "/login" and last_response.status_code == 200:
                    token = last_response.json()["token"]
                continue
            raise ScenarioError(f"unparseable scenario line {line!r}", lineno)
