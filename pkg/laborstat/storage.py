import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

from laborstat.errors import PipelineError
from laborstat.models import BinnedCurve, LogDensity, RunManifest

logger = logging.getLogger(__name__)

# %.17g round-trips every double exactly
FLOAT_FORMAT = "%.17g"


class ResultStorage:
    """CSV and JSON products of a run, all under one directory."""

    def __init__(self, output_dir: Path):
        self.output_dir = Path(output_dir)
        self.output_dir.mkdir(parents=True, exist_ok=True)

    def save_csv(
        self,
        columns: Union[pd.DataFrame, Mapping[str, Sequence[Any]]],
        filename: str
    ) -> Path:
        frame = columns if isinstance(columns, pd.DataFrame) else pd.DataFrame(dict(columns))
        filepath = self.output_dir / filename

        logger.info(f"Saving {len(frame)} rows to {filepath}")
        frame.to_csv(filepath, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")
        return filepath

    def save_json(
        self,
        data: Union[BaseModel, Dict[str, Any], List[Any]],
        filename: str
    ) -> Path:
        filepath = self.output_dir / filename
        if isinstance(data, BaseModel):
            data = data.model_dump(mode="json")

        logger.info(f"Saving JSON to {filepath}")
        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, ensure_ascii=False, default=_json_default)
            f.write("\n")
        return filepath

    def save_density(self, density: LogDensity, filename: str) -> Path:
        return self.save_csv(
            {"bin_lo": density.bin_lo, "bin_hi": density.bin_hi, "density": density.density},
            filename,
        )

    def save_curve(self, curve: BinnedCurve, filename: str) -> Path:
        return self.save_csv(
            {"c_center": curve.c_center, "n_mean": curve.n_mean, "weight": curve.weight},
            filename,
        )


def _json_default(value: Any) -> Any:
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    return str(value)


def load_curve(path: Path) -> BinnedCurve:
    """Read c_center, n_mean[, weight]; bins are sorted by c, weight defaults to 1."""
    try:
        frame = pd.read_csv(path)
    except (OSError, ValueError, pd.errors.ParserError) as e:
        raise PipelineError(f"cannot read curve from {path}: {e}") from e

    missing = [column for column in ("c_center", "n_mean") if column not in frame.columns]
    if missing:
        raise PipelineError(f"{path} lacks columns {missing}")

    weight = frame["weight"].tolist() if "weight" in frame.columns else None
    try:
        return BinnedCurve.from_unordered(
            frame["c_center"].astype(float).tolist(),
            frame["n_mean"].astype(float).tolist(),
            weight,
        )
    except ValueError as e:
        raise PipelineError(f"{path}: {e}") from e


class ManifestStorage:

    def __init__(self, manifest_dir: Path):
        self.manifest_dir = Path(manifest_dir)
        self.manifest_dir.mkdir(parents=True, exist_ok=True)

    def save_manifest(
        self,
        manifest: RunManifest,
        filename: Optional[str] = None
    ) -> Path:
        if filename is None:
            filename = f"manifest_{manifest.run_id}.json"

        filepath = self.manifest_dir / filename

        logger.info(f"Saving run manifest to {filepath}")

        data = manifest.model_dump(mode='json')

        with open(filepath, 'w', encoding='utf-8') as f:
            json.dump(data, f, indent=2, ensure_ascii=False, default=str)

        return filepath


def load_manifest_file(filepath: Path) -> RunManifest:
    try:
        with open(filepath, 'r', encoding='utf-8') as f:
            data = json.load(f)
        return RunManifest(**data)
    except (OSError, ValueError) as e:
        raise PipelineError(f"cannot load manifest {filepath}: {e}") from e
