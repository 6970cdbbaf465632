"""
Result persistence: CSV tables, JSON records and mesh / function text files.

Floats are written with 17 significant digits and JSON keys are sorted, so
identical inputs give bit-identical files.
"""

import json
import math
from pathlib import Path
from typing import Any, Iterable, List, Optional, Union

import pandas as pd

from sobolevlab.checks import CheckReport
from sobolevlab.experiments import ConvergenceReport
from sobolevlab.fespace import write_fe_function
from sobolevlab.manifold import FitResult
from sobolevlab.mesh import Mesh, write_mesh
from sobolevlab.solver import SolveResult
from utils.logging import get_logger, log_exception, log_execution_time

logger = get_logger(__name__)

FLOAT_FORMAT = '%.17g'
RATES_COLUMNS = ['level', 'h', 'S_h', 'gap', 'witness', 'nearest_distance']
CHECK_COLUMNS = ['name', 'anchor', 'passed', 'constants', 'params']


def _jsonable(value: Any) -> Any:
    # NaN/inf are not valid JSON; store them as null
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, Path):
        return str(value)
    if hasattr(value, 'item'):
        return _jsonable(value.item())
    return value


def dump_json(record: dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w') as f:
        json.dump(_jsonable(record), f, sort_keys=True, indent=2)
        f.write('\n')
    return path


class ReportStore:
    """Writes run artifacts below one output directory."""

    def __init__(self, out_dir: Union[str, Path]):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    @log_exception()
    @log_execution_time()
    def write_rates(self, report: ConvergenceReport, prefix: str = '') -> List[Path]:
        """rates CSV (one row per level) and the JSON summary."""
        frame = pd.DataFrame([row.to_record() for row in report.rows], columns=RATES_COLUMNS)
        csv_path = self.path(f'{prefix}rates.csv')
        frame.to_csv(csv_path, index=False, float_format=FLOAT_FORMAT)
        json_path = dump_json(report.summary(), self.path(f'{prefix}summary.json'))
        logger.info(f"Rates written to {csv_path} ({len(frame)} rows)")
        return [csv_path, json_path]

    @log_exception()
    def write_checks(self, reports: Iterable[CheckReport], name: str = 'checks.csv') -> Path:
        """Append CheckReport rows; the header is written when the file is new."""
        frame = pd.DataFrame([r.to_record() for r in reports])
        frame = frame[CHECK_COLUMNS + [c for c in frame.columns if c not in CHECK_COLUMNS]]
        csv_path = self.path(name)
        exists = csv_path.exists()
        frame.to_csv(csv_path, mode='a' if exists else 'w', header=not exists, index=False,
                      float_format=FLOAT_FORMAT)
        logger.info(f"{len(frame)} check rows written to {csv_path}")
        return csv_path

    @log_exception()
    def write_solve(self, result: SolveResult, p: float, fit: Optional[FitResult] = None) -> List[Path]:
        """SolveResult record plus the mesh and coefficient files it refers to."""
        mesh_path = write_mesh(result.mesh, self.path('mesh.txt'))
        u_path = write_fe_function(result.u_h, self.path('u_h.txt'))
        record = result.to_record(p)
        record.update({'mesh_file': mesh_path.name, 'u_h_file': u_path.name, 'history': result.history})
        if fit is not None:
            record['nearest_extremal'] = fit.to_record()
        json_path = dump_json(record, self.path('solve.json'))
        return [json_path, mesh_path, u_path]

    @log_exception()
    def write_mesh(self, mesh: Mesh, name: str = 'mesh.txt') -> Path:
        return write_mesh(mesh, self.path(name))

    def write_record(self, record: dict, name: str) -> Path:
        return dump_json(record, self.path(name))
