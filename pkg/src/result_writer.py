"""
Result output for curvesurvey.
Writes CSV tables through pandas and JSON metadata sidecars, always via temp file + rename.
"""

import json
import logging
import os
import tempfile
from datetime import datetime
from pathlib import Path
from typing import Any, Callable, Dict, Optional

import numpy as np
import pandas as pd

from . import __version__

logger = logging.getLogger(__name__)


def _to_jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _to_jsonable(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not np.isfinite(value):
        return None
    if isinstance(value, Path):
        return str(value)
    return value


def atomic_write(path: Path, write: Callable[[Path], None]) -> Path:
    """Run `write(temp_path)` and move the result over `path`."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    os.close(fd)
    temp_path = Path(temp_name)
    try:
        write(temp_path)
        temp_path.replace(path)
    except Exception:
        if temp_path.exists():
            temp_path.unlink()
        raise
    return path


class ResultWriter:
    """Writes result tables and curves under one output directory."""

    def __init__(self, output_dir: str = "results"):
        self.output_dir = Path(output_dir)
        self.ensure_output_dir()

    def ensure_output_dir(self) -> None:
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except PermissionError as e:
            logger.error(f"Permission error creating output directory {self.output_dir}: {e}")
            raise
        except OSError as e:
            logger.error(f"OS error creating output directory {self.output_dir}: {e}")
            raise

    def _path(self, name: str) -> Path:
        path = Path(name)
        return path if path.is_absolute() else self.output_dir / path

    def write_json(self, name: str, payload: Dict[str, Any]) -> Path:
        return self._write_json_at(self._path(name), payload)

    def _write_json_at(self, path: Path, payload: Dict[str, Any]) -> Path:
        def _write(temp: Path) -> None:
            with open(temp, "w", encoding="utf-8") as handle:
                json.dump(_to_jsonable(payload), handle, indent=2, sort_keys=True)
                handle.write("\n")

        try:
            atomic_write(path, _write)
        except PermissionError as e:
            logger.error(f"Permission error writing {path}: {e}")
            raise
        except OSError as e:
            logger.error(f"OS error writing {path}: {e}")
            raise
        logger.debug(f"Wrote {path}")
        return path

    def write_frame(self, name: str, frame: pd.DataFrame, metadata: Optional[Dict[str, Any]] = None) -> Path:
        """
        Write a table as CSV and its `<name>.json` sidecar.

        Args:
            name: file name relative to the output directory
            frame: table to write
            metadata: extra sidecar content (configuration echo, seeds, tuning)

        Returns:
            Path of the CSV file
        """
        path = self._path(name)
        try:
            atomic_write(path, lambda temp: frame.to_csv(temp, index=False, float_format="%.17g"))
        except PermissionError as e:
            logger.error(f"Permission error writing {path}: {e}")
            raise
        except OSError as e:
            logger.error(f"OS error writing {path}: {e}")
            raise
        sidecar = {
            "file": path.name,
            "rows": int(frame.shape[0]),
            "columns": list(frame.columns),
            "created": datetime.now().isoformat(),
            "version": __version__,
        }
        sidecar.update(metadata or {})
        self._write_json_at(path.with_name(path.name + ".json"), sidecar)
        logger.info(f"Wrote {frame.shape[0]} row(s) to {path}")
        return path

    def write_curve(self, name: str, points: np.ndarray, values: Dict[str, np.ndarray],
                    metadata: Optional[Dict[str, Any]] = None) -> Path:
        """Curves on a grid, one column per named curve."""
        frame = pd.DataFrame({"t": np.asarray(points)})
        for column, curve in values.items():
            frame[column] = np.asarray(curve)
        return self.write_frame(name, frame, metadata)
