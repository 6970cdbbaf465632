import json
import logging
import sys

import pytest

from sobolevlab import cli
from sobolevlab.checks import CheckReport
from sobolevlab.experiments import ConvergenceReport
from sobolevlab.mesh import read_mesh
from utils.logging import _app_logger, setup_logging


def last_json(text):
    # console log lines share the streams with the command output
    return json.loads([line for line in text.splitlines() if line.startswith('{')][-1])


@pytest.fixture
def run(tmp_path, capsys):
    log_dir = _app_logger.log_dir

    def _run(*argv):
        code = cli.main(['--log-dir', str(tmp_path / 'logs'), *argv])
        return code, capsys.readouterr()
    yield _run
    setup_logging(logging.INFO, log_dir)
    for handler in logging.getLogger().handlers:
        if type(handler) is logging.StreamHandler:
            handler.setStream(sys.__stdout__)


def test_mesh_command(run, tmp_path):
    out = tmp_path / 'disk.txt'
    code, captured = run('mesh', '--dim', '2', '--level', '1', '--out', str(out))
    assert code == 0
    assert read_mesh(out).n_elements == 24
    printed = last_json(captured.out)
    assert printed['elements'] == 24
    stored = json.loads((tmp_path / 'disk.json').read_text())
    assert stored == printed
    assert stored['level'] == 1 and stored['h'] > 0.0 and stored['sigma'] > 1.0


def test_missing_flag(run, tmp_path):
    code, captured = run('mesh', '--level', '1', '--out', str(tmp_path / 'm.txt'))
    assert code == 2
    record = last_json(captured.err)
    assert record['kind'] == 'ConfigError'
    assert '--dim' in record['message']


def test_unsupported_dimension(run, tmp_path):
    code, captured = run('mesh', '--dim', '4', '--level', '0', '--out', str(tmp_path / 'm.txt'))
    assert code == 2
    assert last_json(captured.err)['error'] is True


def test_config_file(run, tmp_path):
    config = tmp_path / 'run.cfg'
    config.write_text('dim = 3\nlevel = 0\n')
    out = tmp_path / 'ball.txt'
    code, _ = run('--config', str(config), 'mesh', '--out', str(out))
    assert code == 0
    assert read_mesh(out).n_elements == 8


def test_solve_command(run, tmp_path):
    out = tmp_path / 'solve'
    code, captured = run('solve', '--dim', '2', '--p', '1.5', '--level', '1', '--max-iters', '30',
                         '--out', str(out))
    assert code == 0
    record = json.loads((out / 'solve.json').read_text())
    assert record['p'] == 1.5 and record['N'] == 2
    assert record['iterations'] <= 30
    assert last_json(captured.out)['S_h'] == record['S_h']


def test_rates_needs_three_levels(run, tmp_path):
    code, captured = run('rates', '--dim', '2', '--p', '1.5', '--max-level', '2', '--out', str(tmp_path))
    assert code == 2
    assert 'max_level' in last_json(captured.err)['message']


def test_failed_rates_exit_code(run, tmp_path, monkeypatch):
    calls = []

    def fake_sweeps(configs, max_level, **kwargs):
        calls.append((configs, max_level, kwargs['fit_nearest']))
        return [ConvergenceReport(p=p, N=N, inconclusive=True) for p, N in configs]

    monkeypatch.setattr(cli, 'run_sweeps', fake_sweeps)
    code, captured = run('rates', '--dim', '2', '--p', '1.2', '1.5', '--max-level', '4', '--no-fit',
                         '--out', str(tmp_path / 'rates'))
    assert code == 3
    assert calls == [([(1.2, 2), (1.5, 2)], 4, False)]
    assert (tmp_path / 'rates' / 'p1.2_rates.csv').exists()
    assert (tmp_path / 'rates' / 'p1.5_summary.json').exists()
    assert last_json(captured.err)['details']['p'] == [1.2, 1.5]


def test_failed_lemmas_exit_code(run, tmp_path, monkeypatch):
    reports = [CheckReport('tail_scalings', 'tail decay', True),
               CheckReport('hessian_bounds', 'hessian', False, notes=['upper bound violated'])]
    monkeypatch.setattr(cli, 'run_lemma_suite', lambda p, N, seed=0: reports)
    code, captured = run('lemmas', '--dim', '2', '--p', '1.5', '--out', str(tmp_path / 'checks'))
    assert code == 3
    assert 'FAIL  hessian_bounds  upper bound violated' in captured.out
    assert 'PASS  tail_scalings' in captured.out
    assert (tmp_path / 'checks' / 'checks.csv').exists()
