"""Run-directory persistence for single runs and ablation matrices."""
import json
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import pandas as pd
from loguru import logger

from .config import ExperimentConfig
from .exceptions import RunNotFoundError
from .models import RunRecord, SummaryRow, TRACE_COLUMNS
from .rescaling import ScaleRegistry
from .settings import get_settings

CONFIG_FILE = "config.json"
SCALES_FILE = "scales.json"
TRACE_FILE = "trace.csv"
RECORD_FILE = "record.json"
LOG_FILE = "run.log"
SUMMARY_CSV = "summary.csv"
SUMMARY_JSON = "summary.json"


class RunStore:
    """Reads and writes run directories.

    A run directory holds config.json, scales.json, trace.csv and record.json;
    a matrix directory holds summary.csv, summary.json and one run directory
    per configuration.
    """

    @classmethod
    def run_directory(cls, cfg: ExperimentConfig, root: Optional[Union[str, Path]] = None) -> Path:
        """``cfg.output_dir`` if set, else ``<root or SSTE_OUTPUT_ROOT>/<cfg.name>``."""
        if cfg.output_dir:
            return Path(cfg.output_dir)
        base = Path(root) if root is not None else get_settings().OUTPUT_ROOT
        return base / cfg.name

    @classmethod
    def write_run(
        cls,
        directory: Union[str, Path],
        cfg: ExperimentConfig,
        record: RunRecord,
        registry: ScaleRegistry,
    ) -> Path:
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        cfg.save(path / CONFIG_FILE)
        registry.save(path / SCALES_FILE)
        record.to_frame().to_csv(path / TRACE_FILE, index=False)
        (path / RECORD_FILE).write_text(record.model_dump_json(indent=2), encoding="utf-8")
        logger.info(f"Wrote run '{record.name}' to {path}")
        return path

    @classmethod
    def load_trace(cls, file_path: Union[str, Path]) -> pd.DataFrame:
        """Load a trace CSV; untraced quantities come back as NaN."""
        path = Path(file_path)
        if not path.exists():
            raise RunNotFoundError(f"File not found: {path}")
        try:
            return pd.read_csv(path, dtype={"step": "int64"})[TRACE_COLUMNS]
        except Exception as e:
            logger.error(f"Error loading trace file {path}: {e}")
            raise

    @classmethod
    def load_run(cls, directory: Union[str, Path]) -> Tuple[ExperimentConfig, RunRecord]:
        path = Path(directory)
        for name in (CONFIG_FILE, RECORD_FILE):
            if not (path / name).exists():
                raise RunNotFoundError(f"{path} is not a run directory: missing {name}")
        cfg = ExperimentConfig.load(path / CONFIG_FILE)
        try:
            record = RunRecord.model_validate_json((path / RECORD_FILE).read_text(encoding="utf-8"))
        except ValueError as e:
            logger.error(f"Error decoding run record in {path}: {e}")
            raise
        return cfg, record

    @classmethod
    def is_matrix(cls, directory: Union[str, Path]) -> bool:
        return (Path(directory) / SUMMARY_CSV).exists()

    @classmethod
    def write_summary(cls, directory: Union[str, Path], rows: Sequence[SummaryRow], configs: Sequence[ExperimentConfig]) -> pd.DataFrame:
        """Write summary.csv/json: one row per run, summary columns followed by the flat config."""
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        frame = summary_frame(rows, configs)
        frame.to_csv(path / SUMMARY_CSV, index=False)
        records: List[Dict[str, Any]] = [row.model_dump() for row in rows]
        (path / SUMMARY_JSON).write_text(json.dumps(records, indent=2), encoding="utf-8")
        logger.info(f"Wrote summary of {len(rows)} runs to {path}")
        return frame

    @classmethod
    def load_summary(cls, directory: Union[str, Path]) -> pd.DataFrame:
        path = Path(directory) / SUMMARY_CSV
        if not path.exists():
            raise RunNotFoundError(f"File not found: {path}")
        try:
            return pd.read_csv(path)
        except Exception as e:
            logger.error(f"Error loading summary file {path}: {e}")
            raise


def summary_frame(rows: Sequence[SummaryRow], configs: Sequence[ExperimentConfig]) -> pd.DataFrame:
    summary = pd.DataFrame([row.model_dump() for row in rows])
    flat = pd.DataFrame([cfg.to_flat() for cfg in configs])
    extra = flat.drop(columns=[c for c in flat.columns if c in summary.columns])
    return pd.concat([summary.reset_index(drop=True), extra.reset_index(drop=True)], axis=1)
