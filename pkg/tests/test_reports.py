import json
import math

import numpy as np
import pandas as pd
import pytest

from sobolevlab.checks import CheckReport
from sobolevlab.config import SolverOptions
from sobolevlab.experiments import ConvergenceReport, ConvergenceRow
from sobolevlab.fespace import read_fe_function
from sobolevlab.mesh import read_mesh
from sobolevlab.reports import CHECK_COLUMNS, RATES_COLUMNS, ReportStore, dump_json
from sobolevlab.solver import solve_Sh


def test_rates_files(tmp_path):
    rows = [ConvergenceRow(level, 0.5 ** level, 2.5, 0.1 * 0.5 ** level, 2.6, math.nan) for level in (1, 2)]
    report = ConvergenceReport(p=1.5, N=2, rows=rows, inconclusive=True, notes=['too few rows'])
    csv_path, json_path = ReportStore(tmp_path).write_rates(report, prefix='p1.5_')
    assert csv_path.name == 'p1.5_rates.csv'
    assert csv_path.read_text().splitlines()[0] == ','.join(RATES_COLUMNS)
    frame = pd.read_csv(csv_path)
    assert frame['h'].tolist() == [0.5, 0.25]
    summary = json.loads(json_path.read_text())
    assert summary['fitted_slope'] is None
    assert summary['inconclusive'] is True
    assert summary['rate_pass'] is False
    assert summary['notes'] == ['too few rows']


def test_checks_append(tmp_path):
    store = ReportStore(tmp_path)
    first = CheckReport('tail_scalings', 'tail decay', True, constants={'tail_spread': 1.1})
    second = CheckReport('hessian_bounds', 'hessian', False, constants={'upper_C': 3.0}, notes=['x'])
    path = store.write_checks([first])
    store.write_checks([second])
    lines = path.read_text().splitlines()
    assert lines[0].split(',')[:len(CHECK_COLUMNS)] == CHECK_COLUMNS
    assert sum(line.startswith('name,') for line in lines) == 1
    frame = pd.read_csv(path)
    assert frame['name'].tolist() == ['tail_scalings', 'hessian_bounds']
    assert frame['passed'].tolist() == [True, False]
    assert json.loads(frame['constants'][1]) == {'upper_C': 3.0}


def test_solve_files(tmp_path, disk_meshes):
    mesh = disk_meshes[1]
    result = solve_Sh(mesh, 1.5, SolverOptions(max_iters=20))
    json_path, mesh_path, u_path = ReportStore(tmp_path / 'run').write_solve(result, 1.5)
    record = json.loads(json_path.read_text())
    assert record['mesh_file'] == 'mesh.txt' and record['u_h_file'] == 'u_h.txt'
    assert record['S_h'] == result.S_h
    assert 'nearest_extremal' not in record
    back = read_mesh(mesh_path)
    assert np.array_equal(back.vertices, mesh.vertices)
    assert np.array_equal(back.elements, mesh.elements)
    u = read_fe_function(u_path, back)
    assert np.array_equal(u.coeffs, result.u_h.coeffs)


def test_json_is_deterministic(tmp_path):
    record = {'b': np.float64(0.1), 'a': [1.0, math.inf], 'c': {'z': np.int64(3)}}
    first = dump_json(record, tmp_path / 'one.json').read_text()
    second = dump_json(dict(reversed(record.items())), tmp_path / 'two.json').read_text()
    assert first == second
    assert json.loads(first) == {'a': [1.0, None], 'b': 0.1, 'c': {'z': 3}}


def test_store_creates_directory(tmp_path):
    store = ReportStore(tmp_path / 'nested' / 'out')
    assert store.out_dir.is_dir()
    assert store.write_record({'value': 1.5}, 'record.json').exists()
    with pytest.raises(TypeError):
        store.write_record({'value': object()}, 'bad.json')
