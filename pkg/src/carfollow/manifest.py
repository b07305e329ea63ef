"""Run manifests: every CLI run records what produced its output directory."""
from __future__ import annotations

import hashlib
import json
from datetime import datetime, timezone
from pathlib import Path

__all__ = ["file_digest", "write_manifest"]


def file_digest(path) -> str:
    """SHA-256 hex digest of a file's contents."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(
    out_dir,
    subcommand: str,
    config: dict,
    root_seed,
    inputs: dict,
    runtime_seconds: float,
    warning_count: int = 0,
) -> Path:
    """Write ``manifest.json`` into ``out_dir``.

    ``inputs`` maps a role name to a file path; each entry is stored with its
    SHA-256 digest so runs can be traced back to exact input bytes.
    """
    from . import __version__

    out_dir = Path(out_dir)
    manifest = {
        "tool": "carfollow",
        "version": __version__,
        "subcommand": subcommand,
        "created_utc": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "root_seed": root_seed,
        "config": config,
        "inputs": {
            name: {"path": str(path), "sha256": file_digest(path)}
            for name, path in inputs.items()
        },
        "runtime_seconds": round(float(runtime_seconds), 3),
        "warnings": warning_count,
    }
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
