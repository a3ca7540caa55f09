"""
Run manifest module for bimmsbm.

This module records what a command read, how it was configured and what it
wrote, so that any output set can be traced back to its inputs.
"""

import hashlib
import json
import logging
import os
import tempfile
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime
from typing import Any, Dict, List, Optional

from .exceptions import ConfigError

logger = logging.getLogger("bimmsbm.manifest")

MANIFEST_NAME = "manifest.json"


def file_digest(path: str) -> str:
    """SHA-256 hex digest of a file's bytes"""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


@dataclass
class RunManifest:
    """Provenance of one command invocation."""

    command: str
    config: Dict[str, Any] = field(default_factory=dict)
    inputs: Dict[str, str] = field(default_factory=dict)
    seed: Optional[int] = None
    version: str = "unknown"
    started_at: str = field(default_factory=lambda: datetime.now().isoformat())
    wall_clock_seconds: float = 0.0
    outputs: List[str] = field(default_factory=list)
    _started: float = field(default_factory=time.perf_counter, repr=False, compare=False)

    def add_input(self, path: Optional[str]) -> None:
        """Record the digest of an input file (None is ignored)"""
        if path is None:
            return
        self.inputs[path] = file_digest(path)

    def add_output(self, path: str) -> None:
        self.outputs.append(os.path.basename(path))

    def finish(self) -> None:
        self.wall_clock_seconds = round(time.perf_counter() - self._started, 6)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data.pop("_started")
        return data

    def save(self, out_dir: str) -> str:
        """Write manifest.json atomically (temporary file, then rename)"""
        self.finish()
        os.makedirs(out_dir, exist_ok=True)
        target = os.path.join(out_dir, MANIFEST_NAME)
        handle, tmp_path = tempfile.mkstemp(prefix=".manifest.", suffix=".json", dir=out_dir)
        try:
            with os.fdopen(handle, "w", encoding="utf-8") as f:
                json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            os.replace(tmp_path, target)
        except BaseException:
            if os.path.exists(tmp_path):
                os.remove(tmp_path)
            raise
        logger.debug(f"Manifest saved to {target}")
        return target

    @classmethod
    def load(cls, path: str) -> "RunManifest":
        """Read a manifest written by :meth:`save`"""
        try:
            with open(path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except FileNotFoundError:
            raise ConfigError(f"manifest not found: {path}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"invalid JSON in {path}: {e}")
        return cls(**data)

    def verify_inputs(self) -> Dict[str, bool]:
        """Whether each recorded input still has the recorded digest"""
        return {path: os.path.exists(path) and file_digest(path) == digest for path, digest in self.inputs.items()}

    def summary(self) -> str:
        """Generate a readable ASCII summary of the run."""
        lines = [f"bimmsbm run: {self.command}", "=" * 40,
                 f"Version: {self.version}", f"Seed: {self.seed}", f"Started: {self.started_at}",
                 f"Wall clock: {self.wall_clock_seconds:.3f}s"]
        if self.inputs:
            lines.append("Inputs:")
            for path, digest in self.inputs.items():
                lines.append(f"  {path}: {digest[:12]}")
        if self.outputs:
            lines.append("Outputs:")
            lines.extend(f"  {name}" for name in self.outputs)
        return "\n".join(lines)
