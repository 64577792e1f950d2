"""Run manifest tracking."""

import hashlib
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Optional

from laborstat.models import RunManifest

logger = logging.getLogger(__name__)


class ManifestTracker:

    def __init__(
        self,
        run_id: str,
        tool_version: str,
        subcommand: str,
        config: Dict[str, Any],
        seed: Optional[int] = None
    ):
        self.manifest = RunManifest(
            run_id=run_id,
            tool_version=tool_version,
            subcommand=subcommand,
            start_time=datetime.utcnow(),
            config=config,
            seed=seed
        )

        logger.info(f"Started tracking run: {run_id} ({subcommand})")

    def add_input(self, path: Path) -> str:
        digest = file_digest(path)
        self.manifest.input_digests[str(path)] = digest
        return digest

    def add_output(self, path: Path) -> None:
        self.manifest.outputs.append(str(path))

    def set_summary(self, **values: Any) -> None:
        self.manifest.summary.update(values)

    def add_error(self, error_type: str, message: str) -> None:
        self.manifest.add_error(error_type, message)

    def finalize(self) -> RunManifest:
        self.manifest.end_time = datetime.utcnow()
        self.manifest.calculate_duration()

        logger.info(
            f"Run {self.manifest.run_id} completed: "
            f"{len(self.manifest.outputs)} outputs, "
            f"{self.manifest.duration_seconds:.2f}s"
        )

        return self.manifest


def generate_run_id(subcommand: str) -> str:
    return f"{subcommand}_{datetime.now().strftime('%Y%m%d_%H%M%S_%f')}"


def file_digest(path: Path) -> str:
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 16), b""):
            sha.update(block)
    return sha.hexdigest()
