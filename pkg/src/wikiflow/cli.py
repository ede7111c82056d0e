"""Operator CLI: serve the API, manage a data directory, run headless scenarios."""

from __future__ import annotations

import sys
from pathlib import Path

import click

from .service import AppState


@click.group()
def main():
    """Semantic workflow wiki."""


@main.command()
@click.option("--data-dir", default="data", show_default=True)
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--base-iri", default=None, help="override the configured base IRI")
@click.option("--rules", "rules_file", default=None, type=click.Path(exists=True),
              help="user rulebase merged after the default decoration rules")
@click.option("--ui", "ui_dir", default="frontend", show_default=True,
              help="directory with the built SPA; mounted at /ui when present")
def serve(data_dir, host, port, base_iri, rules_file, ui_dir):
    """Start the HTTP service."""
    import uvicorn

    from .api import create_app
    from .rules import parse_rules

    user_rules = None
    state_probe = AppState.build(data_dir)
    if rules_file:
        user_rules = parse_rules(Path(rules_file).read_text("utf-8"),
                                 state_probe.store.prefixes)
        state = AppState.build(data_dir, user_rules=user_rules)
    else:
        state = state_probe
    if base_iri:
        state.config.base_iri = base_iri
    app = create_app(state, ui_dir=ui_dir)
    try:
        uvicorn.run(app, host=host, port=port, log_level="warning")
    finally:
        state.save()


@main.command("init-fixtures")
@click.option("--data-dir", default="data", show_default=True)
def init_fixtures(data_dir):
    """Populate a data directory with the bundled specimen fixtures."""
    from importlib import resources
    import shutil

    target = Path(data_dir)
    target.mkdir(parents=True, exist_ok=True)
    fixtures = resources.files("wikiflow").joinpath("fixtures")
    for name in ("config.json", "users.json"):
        shutil.copy(str(fixtures / name), target / name)
    state = AppState.build(target)
    state.import_ontology(str(fixtures / "taxonomy.nt"))
    for tpl in sorted(Path(str(fixtures / "templates")).glob("*.tpl")):
        state.add_template_file(tpl)
    for wf in ("specimen.wf", "coordination.wf"):
        state.deploy_file(str(fixtures / wf))
    state.save()
    click.echo(f"fixtures installed into {target}")


@main.command("import-ontology")
@click.argument("file", type=click.Path(exists=True))
@click.option("--data-dir", default="data", show_default=True)
def import_ontology(file, data_dir):
    """Load statements from FILE into the store."""
    try:
        state = AppState.build(data_dir)
        size = state.import_ontology(file)
        state.save()
    except Exception as exc:  # noqa: BLE001
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"store now holds {size} triples")


@main.command()
@click.argument("file", type=click.Path(exists=True))
@click.option("--data-dir", default="data", show_default=True)
def deploy(file, data_dir):
    """Validate and register the process definition in FILE."""
    try:
        state = AppState.build(data_dir)
        state.deploy_file(file)
        state.save()
    except Exception as exc:  # noqa: BLE001
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"deployed {file}")


@main.command("run-scenario")
@click.argument("file", type=click.Path(exists=True))
@click.option("--data-dir", default="data", show_default=True)
@click.option("--out", default=None, help="event log output path (default: <data-dir>/events.log)")
def run_scenario(file, data_dir, out):
    """Run a scripted API scenario headlessly and export the event log."""
    from .scenario import ScenarioError, ScenarioRunner

    runner = ScenarioRunner(data_dir, out_path=out)
    try:
        state = runner.run(file)
    except ScenarioError as exc:
        click.echo(f"scenario failed: {exc}", err=True)
        sys.exit(1)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"scenario ok: {len(state.engine.events)} events -> {runner.out_path}")


@main.command("export-rules")
@click.argument("out", type=click.Path())
@click.option("--data-dir", default="data", show_default=True)
def export_rules_cmd(out, data_dir):
    """Write the engine's rulebase as interchange XML."""
    from .interchange import export_rules

    try:
        state = AppState.build(data_dir)
        Path(out).write_text(export_rules(state.engine.rulebase), "utf-8")
    except Exception as exc:  # noqa: BLE001
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"rules exported to {out}")


@main.command("dump-store")
@click.argument("out", type=click.Path())
@click.option("--data-dir", default="data", show_default=True)
def dump_store(out, data_dir):
    """Write the store as one statement per line."""
    try:
        state = AppState.build(data_dir)
        state.store.save(out)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)
    click.echo(f"store dumped to {out}")


if __name__ == "__main__":
    main()
