"""Run manifests: what was run, with which parameters, on which inputs, from which revision."""

from __future__ import annotations

import hashlib
import logging
from collections.abc import Iterable
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import yaml
from git import InvalidGitRepositoryError, NoSuchPathError, Repo

from lidar_proposals import __version__
from lidar_proposals.config import RUNS_DIR, PipelineParams, to_flat

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.yaml"


@dataclass
class RunManifest:
    command: str
    seed: int
    params: dict[str, Any]
    inputs_digest: str
    inputs: list[str] = field(default_factory=list)
    revision: str | None = None
    version: str = __version__
    created: str = field(default_factory=lambda: datetime.now(timezone.utc).isoformat(timespec="seconds"))
    extra: dict[str, Any] = field(default_factory=dict)


def source_revision(path: Path | None = None) -> str | None:
    """Commit of the checkout this package runs from, with a `-dirty` suffix; None outside git."""
    try:
        repo = Repo(path or Path(__file__).resolve().parent, search_parent_directories=True)
        sha = repo.head.commit.hexsha
        return f"{sha}-dirty" if repo.is_dirty() else sha
    except (InvalidGitRepositoryError, NoSuchPathError, ValueError):
        return None


def digest_inputs(paths: Iterable[Path]) -> str:
    """sha256 over file names and contents, in sorted order."""
    h = hashlib.sha256()
    for path in sorted(Path(p) for p in paths):
        h.update(path.name.encode("utf-8"))
        if path.is_file():
            with path.open("rb") as fh:
                for chunk in iter(lambda: fh.read(1 << 20), b""):
                    h.update(chunk)
    return h.hexdigest()


def default_output_dir(command: str) -> Path:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%S")
    return RUNS_DIR / f"{command}-{stamp}"


def write_manifest(
    output_dir: Path,
    command: str,
    params: PipelineParams,
    seed: int,
    inputs: Iterable[Path] = (),
    **extra: Any,
) -> RunManifest:
    inputs = [Path(p) for p in inputs]
    manifest = RunManifest(
        command=command,
        seed=seed,
        params=to_flat(params),
        inputs_digest=digest_inputs(inputs),
        inputs=[str(p) for p in inputs],
        revision=source_revision(),
        extra={k: str(v) if isinstance(v, Path) else v for k, v in extra.items()},
    )
    output_dir.mkdir(parents=True, exist_ok=True)
    (output_dir / MANIFEST_NAME).write_text(yaml.safe_dump(asdict(manifest), sort_keys=False), encoding="utf-8")
    logger.info("manifest written to %s", output_dir / MANIFEST_NAME)
    return manifest
