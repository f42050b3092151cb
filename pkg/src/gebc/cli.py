"""Command-line front end: a thin HTTP client over the service.

Without --server the app is mounted in-process (no socket); with --server
the same requests go to a remote instance. Config files are parsed locally
and sent inline so remote servers never need client-side paths, except the
literal name "desk" which selects the bundled desk-scale profile.
"""

from __future__ import annotations

import asyncio
import json
import sys
from pathlib import Path
from typing import Any

import click
import httpx
import yaml

from .errors import ConfigError, GebcError, exit_code_for

DESK_PROFILE_NAME = "desk"


def _config_payload(config: str, seed: int | None, deterministic: bool | None,
                    output: str | None) -> dict[str, Any]:
    try:
        return _build_config_payload(config, seed, deterministic, output)
    except GebcError as e:
        click.echo(f"error [{type(e).__name__}]: {e}", err=True)
        sys.exit(e.exit_code)


def _build_config_payload(config: str, seed: int | None,
                          deterministic: bool | None,
                          output: str | None) -> dict[str, Any]:
    overrides: dict[str, Any] = {}
    if seed is not None:
        overrides["seed"] = seed
    if deterministic is not None:
        overrides["deterministic"] = deterministic
    if output is not None:
        overrides["output_dir"] = output
    payload: dict[str, Any] = {"overrides": overrides or None}
    if config == DESK_PROFILE_NAME:
        payload["config_path"] = DESK_PROFILE_NAME
        return payload
    path = Path(config)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    except yaml.YAMLError as e:
        raise ConfigError(f"config {path} is not valid YAML/JSON: {e}") from e
    if not isinstance(doc, dict):
        raise ConfigError(f"config {path} must hold a mapping")
    payload["config"] = doc
    return payload


async def _request_async(server: str | None, method: str, path: str,
                         payload: dict | None) -> tuple[int, Any]:
    if server is None:
        from .service import create_app

        transport = httpx.ASGITransport(app=create_app())
        base = "http://gebc.internal"
    else:
        transport = None
        base = server
    async with httpx.AsyncClient(transport=transport, base_url=base,
                                 timeout=None) as client:
        resp = await client.request(method, path, json=payload)
        try:
            return resp.status_code, resp.json()
        except json.JSONDecodeError:
            return resp.status_code, {"error": "GebcError",
                                      "detail": resp.text}


def call_service(server: str | None, method: str, path: str,
                 payload: dict | None = None) -> Any:
    """Send one request; on error print detail and exit with the class code."""
    status, body = asyncio.run(_request_async(server, method, path, payload))
    if 200 <= status < 300:
        return body
    if isinstance(body, dict) and "error" in body:
        name = body["error"]
        detail = body.get("detail", "")
    elif isinstance(body, dict) and "detail" in body:
        # request-schema validation failure from the framework
        name = "ConfigError"
        detail = json.dumps(body["detail"])
    else:
        name = "GebcError"
        detail = str(body)
    click.echo(f"error [{name}]: {detail}", err=True)
    sys.exit(exit_code_for(name))


def _emit(body: Any) -> None:
    click.echo(json.dumps(body, indent=2, sort_keys=True))


def _common_options(fn):
    fn = click.option("--server", default=None, metavar="URL",
                      help="Remote service URL; default runs in-process.")(fn)
    fn = click.option("--output", default=None, metavar="DIR",
                      help="Override the config output_dir.")(fn)
    fn = click.option("--deterministic/--no-deterministic", default=None,
                      help="Override the config deterministic flag.")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="Override the config seed.")(fn)
    fn = click.option("--split", type=click.Choice(["train", "val", "test"]),
                      default=None, help="Annotation split to use.")(fn)
    fn = click.option("--config", required=True, metavar="PATH|desk",
                      help="Run config file, or 'desk' for the bundled profile.")(fn)
    return fn


@click.group()
def main() -> None:
    """Boundary captioning pipeline: extract, train, caption, evaluate."""


@main.command()
@_common_options
@click.option("--overwrite", is_flag=True, help="Re-extract existing cache files.")
def extract(config, split, seed, deterministic, output, server, overwrite):
    """Write one feature-cache file per (video, extractor)."""
    payload = _config_payload(config, seed, deterministic, output)
    payload.update({"split": split, "overwrite": overwrite})
    _emit(call_service(server, "POST", "/extract", payload))


@main.command()
@_common_options
@click.option("--resume", default=None, metavar="PATH",
              help="Checkpoint to continue from.")
def train(config, split, seed, deterministic, output, server, resume):
    """Train the adapter stack; writes checkpoints and a metrics log."""
    payload = _config_payload(config, seed, deterministic, output)
    payload.update({"split": split, "resume": resume})
    _emit(call_service(server, "POST", "/train", payload))


@main.command()
@_common_options
@click.option("--checkpoint", default=None, metavar="PATH",
              help="Checkpoint with trained adapter weights.")
@click.option("--force", is_flag=True,
              help="Load a checkpoint whose config hash mismatches.")
@click.option("--predictions-out", default=None, metavar="PATH",
              help="Where to write the predictions file.")
def caption(config, split, seed, deterministic, output, server, checkpoint,
            force, predictions_out):
    """Generate captions for every boundary in the split."""
    payload = _config_payload(config, seed, deterministic, output)
    payload.update({"split": split, "checkpoint": checkpoint,
                    "force": force, "output": predictions_out})
    _emit(call_service(server, "POST", "/caption", payload))


@main.command()
@_common_options
@click.argument("predictions", metavar="PREDICTIONS")
@click.option("--spice", default=None, metavar="PATH",
              help="Precomputed SPICE scores (JSON, 0-100 scale).")
def evaluate(config, split, seed, deterministic, output, server, predictions,
             spice):
    """Score a predictions file against the split's annotations."""
    payload = _config_payload(config, seed, deterministic, output)
    payload.update({"split": split, "predictions": predictions, "spice": spice})
    _emit(call_service(server, "POST", "/evaluate", payload))


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
def serve(host: str, port: int) -> None:
    """Run the HTTP service."""
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=host, port=port)


@main.command()
@click.option("--server", default=None, metavar="URL")
def health(server):
    """Check that the service responds."""
    _emit(call_service(server, "GET", "/health"))


if __name__ == "__main__":
    main()
