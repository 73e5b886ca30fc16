import json
import logging
import os
import subprocess
import uuid
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

from src.errors import RunDirectoryError

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
PathLike = Union[str, Path]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def code_revision() -> str:
    """Current git commit of the working tree, or 'unknown' outside a checkout"""
    try:
        result = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            cwd=Path(__file__).resolve().parent, capture_output=True, text=True, timeout=5, check=True,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return result.stdout.strip() or "unknown"


@dataclass
class RunManifest:
    command: str
    config: Dict[str, Any]
    seed: int
    run_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])
    code_revision: str = field(default_factory=code_revision)
    started_at: str = field(default_factory=_now)
    finished_at: Optional[str] = None
    status: str = "running"
    artifacts: Dict[str, str] = field(default_factory=dict)
    parent: Optional[Dict[str, Any]] = None
    timings: Dict[str, float] = field(default_factory=dict)

    def finish(self, status: str = "completed") -> None:
        self.status = status
        self.finished_at = _now()

    def write(self, run_dir: PathLike) -> Path:
        path = Path(run_dir) / MANIFEST_NAME
        tmp_path = path.with_name(MANIFEST_NAME + ".tmp")
        try:
            tmp_path.write_text(json.dumps(asdict(self), indent=2, default=str), encoding="utf-8")
            os.replace(tmp_path, path)
        except OSError as e:
            raise RunDirectoryError(path, f"cannot write manifest ({e})") from e
        return path

    @classmethod
    def read(cls, run_dir: PathLike) -> "RunManifest":
        path = Path(run_dir) / MANIFEST_NAME
        try:
            return cls(**json.loads(path.read_text(encoding="utf-8")))
        except (OSError, ValueError, TypeError) as e:
            raise RunDirectoryError(path, f"cannot read manifest ({e})") from e


def prepare_run_directory(run_dir: PathLike, force: bool = False) -> Path:
    """Create the output directory, refusing to reuse one that already holds a manifest"""
    run_dir = Path(run_dir)
    if (run_dir / MANIFEST_NAME).exists() and not force:
        raise RunDirectoryError(run_dir, "output directory already contains a run manifest (use --force)")
    try:
        run_dir.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise RunDirectoryError(run_dir, f"cannot create output directory ({e})") from e
    return run_dir


def lineage(init_checkpoint: Optional[PathLike]) -> Optional[Dict[str, Any]]:
    """Parent record for a run initialised from another run's checkpoint"""
    if init_checkpoint is None:
        return None
    checkpoint = Path(init_checkpoint)
    parent = {"checkpoint": str(checkpoint), "run_id": None}
    if (checkpoint.parent / MANIFEST_NAME).exists():
        try:
            parent["run_id"] = RunManifest.read(checkpoint.parent).run_id
        except RunDirectoryError:
            logger.warning("Parent manifest next to %s is unreadable", checkpoint)
    return parent
