import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Union

from fbmlab import pathio
from fbmlab.errors import CorruptReportError
from fbmlab.storable import Storable, plain

logger = logging.getLogger(__name__)

REPORT_FILE = "report.json"
PER_PATH_FILE = "per_path.csv"
SUMMARY_FILE = "summary.csv"
EXPERIMENT_LOG_FILE = "experiments.csv"

# fixed so that runs of different kinds append to one table
EXPERIMENT_LOG_COLUMNS = (
    "name",
    "kind",
    "mode",
    "statistic",
    "h",
    "field_id",
    "master_seed",
    "path",
    "seed",
    "exponent",
    "slope_stderr",
    "r_squared",
    "delta_min",
    "delta_max",
    "n_scales",
    "resolution_capped",
    "version",
)


@dataclass
class ExperimentReport(Storable):
    """Config echo plus everything an experiment produced; ``config`` and ``seeds`` determine a replay."""

    kind: str
    config: Dict[str, Any]
    version: str
    seeds: List[int]
    per_path: List[Dict[str, Any]] = field(default_factory=list)
    pooled: Dict[str, Any] = field(default_factory=dict)
    acceptance: Dict[str, bool] = field(default_factory=dict)
    passed: bool = False
    wall_clock: float = 0.0

    def results(self) -> Dict[str, Any]:
        """Everything except timing, for replay comparisons."""
        record = self.to_record()
        record.pop("wall_clock")
        record.pop("version")
        return record

    def write(self, directory: Union[str, Path]) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        target = directory / REPORT_FILE
        target.write_text(json.dumps(self.to_record(), indent=2))
        if self.per_path:
            pathio.write_table_csv(directory / PER_PATH_FILE, self.per_path)
        logger.info(f"Report written to {target}")
        return target

    @classmethod
    def read(cls, path: Union[str, Path]) -> "ExperimentReport":
        path = Path(path)
        if path.is_dir():
            path = path / REPORT_FILE
        try:
            return cls.from_store(path.read_text())
        except OSError as e:
            raise CorruptReportError(f"{path}: {e}") from e
        except (ValueError, TypeError) as e:
            raise CorruptReportError(f"{path}: not a valid report ({e})") from e


def write_summary(directory: Union[str, Path], rows: List[Dict[str, Any]]) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / SUMMARY_FILE
    if rows:
        pathio.write_table_csv(target, rows)
    else:
        target.write_text("name,kind,status,message\n")
    return target


def append_experiment_log(directory: Union[str, Path], rows: List[Dict[str, Any]]) -> Path:
    """Appends Hoelder estimates to the experiment log; repeated runs and replays accumulate rows."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    target = directory / EXPERIMENT_LOG_FILE
    pathio.append_table_csv(target, rows, EXPERIMENT_LOG_COLUMNS)
    logger.debug(f"Appended {len(rows)} estimates to {target}")
    return target


def flatten(prefix: str, record: Dict[str, Any]) -> Dict[str, Any]:
    """One level of nesting folded into ``prefix.key`` columns (lists are kept as JSON text)."""
    flat = {}
    for key, value in plain(record).items():
        if isinstance(value, dict):
            for inner, v in value.items():
                flat[f"{prefix}{key}.{inner}"] = json.dumps(v) if isinstance(v, (list, dict)) else v
        else:
            flat[f"{prefix}{key}"] = json.dumps(value) if isinstance(value, list) else value
    return flat
