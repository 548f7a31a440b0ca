"""Command-line entry point: validate, generate, scaffold, registry, serve.

Exit codes are a machine-stable contract: 0 success, 1 validation errors,
2 usage or document/parse errors, 3 I/O failures.
"""

from __future__ import annotations

import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

import click

from . import api
from .diagnostics import Diagnostic, Severity, ValidationReport, dumps_canonical
from .documents import ParseError
from .exprs import ExprError
from .model import FORMAT_VERSION, SchemaError
from .registry import (
    RegistryError,
    publish as registry_publish,
    resolve as registry_resolve,
    vendor as registry_vendor,
)
from .shapes import ShapeLanguageError
from .storage import ProjectIOError, read_payload, write_file_atomic

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_USAGE = 2
EXIT_IO = 3


def _fail(code: int, message: str) -> None:
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _read_payload_or_fail(project_dir: str) -> dict:
    try:
        return read_payload(Path(project_dir))
    except ProjectIOError as exc:
        _fail(EXIT_IO, str(exc))
    except ParseError as exc:
        _fail(EXIT_USAGE, str(exc))


def _render_report_doc(report_doc: dict) -> str:
    report = ValidationReport()
    for d in report_doc.get("diagnostics", []):
        report.diagnostics.append(Diagnostic(
            severity=Severity(d["severity"]), code=d["code"], message=d["message"],
            block=d.get("block"), node=d.get("node"), port=d.get("port"),
            param=d.get("param"), path=d.get("path"),
        ))
    report.shapes = report_doc.get("shapes", {})
    return report.render()


@click.group()
@click.version_option(package_name="protoml")
def main() -> None:
    """Compile component graphs to PyTorch modules."""


@main.command()
@click.argument("project_dir", type=click.Path(exists=False))
@click.option("--json", "as_json", is_flag=True, help="Print the structured report (same bytes as the service).")
def validate(project_dir: str, as_json: bool) -> None:
    """Validate a project tree and print the report."""
    payload = _read_payload_or_fail(project_dir)
    status, envelope = api.validate_documents(payload)
    if as_json:
        click.echo(dumps_canonical(envelope), nl=False)
    elif "error" in envelope:
        _fail(EXIT_USAGE, f"{envelope['error']['code']}: {envelope['error']['message']}")
    else:
        click.echo(_render_report_doc(envelope["payload"]["report"]), err=(status != 200))
    if status == 200:
        sys.exit(EXIT_OK)
    sys.exit(EXIT_VALIDATION if status in (409, 422) else EXIT_USAGE)


def _replace_dir(tmp: Path, target: Path) -> None:
    if target.exists():
        trash = target.with_name(f".{target.name}.old-{os.getpid()}")
        os.rename(target, trash)
        os.rename(tmp, target)
        shutil.rmtree(trash)
    else:
        os.rename(tmp, target)


@main.command()
@click.argument("project_dir", type=click.Path(exists=False))
@click.option("-o", "--out", "out_dir", required=True, type=click.Path(), help="Output directory for generated sources.")
@click.option("--force", is_flag=True, help="Generate even when validation fails (files carry a warning header).")
def generate(project_dir: str, out_dir: str, force: bool) -> None:
    """Generate one module file per block into OUT (atomically replaced)."""
    payload = _read_payload_or_fail(project_dir)
    status, envelope = api.generate_documents(payload, force=force)
    if status != 200:
        if "error" in envelope:
            _fail(EXIT_USAGE, f"{envelope['error']['code']}: {envelope['error']['message']}")
        click.echo(_render_report_doc(envelope["payload"]["report"]), err=True)
        sys.exit(EXIT_VALIDATION)
    target = Path(out_dir)
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp = Path(tempfile.mkdtemp(dir=target.parent, prefix=f".{target.name}.new-"))
        for entry in envelope["payload"]["files"]:
            path = tmp / entry["path"]
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(entry["content"], encoding="utf-8")
        _replace_dir(tmp, target)
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    for entry in envelope["payload"]["files"]:
        click.echo(f"wrote {target / entry['path']}")
    sys.exit(EXIT_OK)


@main.command()
@click.argument("name")
@click.option("--dir", "parent_dir", type=click.Path(), default=".", help="Directory to create the project in.")
def new(name: str, parent_dir: str) -> None:
    """Scaffold a fresh project with an identity entry block."""
    import re as _re

    if not _re.match(r"^[A-Za-z0-9_\-]+$", name):
        _fail(EXIT_USAGE, f"bad project name {name!r}")
    root = Path(parent_dir) / name
    if root.exists():
        _fail(EXIT_IO, f"{root} already exists")
    manifest = {
        "format_version": FORMAT_VERSION,
        "name": name,
        "entry_block": f"{name}/Main",
        "requires": {},
    }
    block = {
        "format_version": FORMAT_VERSION,
        "kind": "block",
        "id": f"{name}/Main",
        "input_count": 1,
        "output_count": 1,
        "input_patterns": None,
        "output_exprs": None,
        "params": [],
        "local_vars": [],
        "nodes": [],
        "edges": [{"from": ["Input", 0], "to": ["Output", 0]}],
        "joins": [],
    }
    try:
        write_file_atomic(root / "project.json", dumps_canonical(manifest))
        write_file_atomic(root / "blocks" / f"{name}__Main.json", dumps_canonical(block))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"created {root}")


@main.group()
def pkg() -> None:
    """Registry operations: publish packages and add them to projects."""


@pkg.command("publish")
@click.argument("package_dir", type=click.Path(exists=False))
@click.option("--registry", "registry_root", envvar="PROTOML_REGISTRY", default="./registry", type=click.Path())
def pkg_publish(package_dir: str, registry_root: str) -> None:
    """Publish PACKAGE_DIR as an immutable registry version."""
    try:
        record = registry_publish(Path(package_dir), Path(registry_root))
    except RegistryError as exc:
        _fail(EXIT_USAGE, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    click.echo(f"published {record.name} {record.version} ({record.hash})")


@pkg.command("add")
@click.argument("spec")
@click.option("--project", "project_dir", default=".", type=click.Path())
@click.option("--registry", "registry_root", envvar="PROTOML_REGISTRY", default="./registry", type=click.Path())
def pkg_add(spec: str, project_dir: str, registry_root: str) -> None:
    """Add NAME@REQUIREMENT to the project, resolve and vendor it."""
    if "@" not in spec:
        _fail(EXIT_USAGE, f"expected NAME@REQUIREMENT, got {spec!r}")
    name, requirement = spec.split("@", 1)
    project_path = Path(project_dir)
    manifest_path = project_path / "project.json"
    if not manifest_path.is_file():
        _fail(EXIT_IO, f"missing manifest {manifest_path}")
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        requires = dict(manifest.get("requires", {}))
        requires[name] = requirement
        resolution = registry_resolve(requires, Path(registry_root))
        manifest["requires"] = dict(sorted(requires.items()))
        write_file_atomic(manifest_path, dumps_canonical(manifest))
        registry_vendor(project_path, resolution, Path(registry_root))
    except RegistryError as exc:
        _fail(EXIT_USAGE, str(exc))
    except (ParseError, SchemaError, ExprError, ShapeLanguageError, json.JSONDecodeError) as exc:
        _fail(EXIT_USAGE, str(exc))
    except OSError as exc:
        _fail(EXIT_IO, str(exc))
    for pkg_name in sorted(resolution):
        click.echo(f"vendored {pkg_name} {resolution[pkg_name]}")


@main.command()
@click.option("--addr", envvar="PROTOML_ADDR", default="127.0.0.1:8799", help="host:port to listen on")
@click.option("--workspace", envvar="PROTOML_WORKSPACE", default="./workspace", type=click.Path())
@click.option("--registry", "registry_root", envvar="PROTOML_REGISTRY", default="./registry", type=click.Path())
@click.option("--cors-origin", "cors_origins", envvar="PROTOML_CORS_ORIGIN", multiple=True, help="Allowed editor origin (repeatable; default any)")
def serve(addr: str, workspace: str, registry_root: str, cors_origins: tuple[str, ...]) -> None:
    """Run the HTTP service for the editor UI."""
    import uvicorn

    from .service import create_app

    host, _, port_text = addr.rpartition(":")
    if not host or not port_text.isdigit():
        _fail(EXIT_USAGE, f"bad --addr {addr!r}; expected host:port")
    app = create_app(Path(workspace), Path(registry_root), list(cors_origins) or None)
    uvicorn.run(app, host=host, port=int(port_text), log_level="warning")


if __name__ == "__main__":
    main()
