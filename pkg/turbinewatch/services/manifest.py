from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Iterable, Optional

from .. import __version__
from ..config import Settings
from ..models import ManifestFile, RunManifest


def file_digest(path: Path) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _entries(paths: Iterable[Path]) -> list:
    # basenames only so manifests compare equal across output directories
    return [ManifestFile(name=Path(p).name, sha256=file_digest(p)) for p in sorted(paths, key=lambda p: Path(p).name)]


def build_manifest(
    command: str,
    settings: Settings,
    inputs: Iterable[Path],
    outputs: Iterable[Path],
    summary: Optional[Dict[str, Any]] = None,
) -> RunManifest:
    return RunManifest(
        command=command,
        toolkit_version=__version__,
        seed=settings.seed,
        config=settings.model_dump(mode="json", exclude={"n_jobs"}),
        inputs=_entries(inputs),
        outputs=_entries(outputs),
        summary=summary or {},
    )


def write_manifest(manifest: RunManifest, out_dir: Path) -> Path:
    path = Path(out_dir) / f"{manifest.command}.manifest.json"
    payload = manifest.model_dump(mode="json")
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path
