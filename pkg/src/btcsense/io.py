"""Deterministic result files and run manifests.

CSV files carry '#'-prefixed metadata lines before the header row and format
floats with a fixed '%.12g', so re-running a config reproduces byte-identical
outputs.  Each run directory gets a ``manifest.json`` recording the config,
tool version, wall-clock and a sha256 per output file; writes are serialized
through a lock file so concurrent subcommands can share a directory.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
import time
from pathlib import Path

from filelock import FileLock

from . import __version__

__all__ = ["format_value", "write_csv", "sha256_of", "write_manifest", "build_stamp"]


def format_value(v) -> str:
    if isinstance(v, bool):
        return str(int(v))
    if isinstance(v, (int,)):
        return str(v)
    if isinstance(v, float):
        return f"{v:.12g}"
    if isinstance(v, complex):
        return f"{v.real:.12g}{v.imag:+.12g}j"
    return str(v)


def write_csv(path, columns, rows, metadata=None) -> Path:
    """Comma-separated file with metadata comments and a header row."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for key, val in (metadata or {}).items():
        lines.append(f"# {key} = {format_value(val)}")
    lines.append(",".join(columns))
    for row in rows:
        lines.append(",".join(format_value(v) for v in row))
    path.write_text("\n".join(lines) + "\n")
    return path


def sha256_of(path) -> str:
    h = hashlib.sha256()
    h.update(Path(path).read_bytes())
    return h.hexdigest()


def build_stamp() -> str:
    """Package version plus git describe when available."""
    try:
        desc = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
            cwd=Path(__file__).parent,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        desc = ""
    return f"{__version__}+{desc}" if desc else __version__


def write_manifest(out_dir, config: dict, outputs, elapsed: float) -> Path:
    """Record config snapshot, build stamp, wall-clock and output checksums."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest_path = out_dir / "manifest.json"
    payload = {
        "tool": "btcsense",
        "version": build_stamp(),
        "config": config,
        "wall_clock_seconds": round(elapsed, 3),
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "outputs": {
            str(Path(p).name): sha256_of(p) for p in outputs
        },
    }
    with FileLock(str(manifest_path) + ".lock"):
        existing = {}
        if manifest_path.exists():
            try:
                existing = json.loads(manifest_path.read_text())
            except json.JSONDecodeError:
                existing = {}
        if existing.get("outputs"):
            merged = dict(existing["outputs"])
            merged.update(payload["outputs"])
            payload["outputs"] = merged
        manifest_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    return manifest_path
