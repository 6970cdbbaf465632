import json
import logging

import pytest

from utils.logging import StageLogger, StructuredFormatter, log_exception, log_execution_time


def test_structured_record_carries_run_context():
    record = logging.LogRecord('sobolevlab.solver', logging.INFO, __file__, 10, 'solved', None, None)
    record.stage = 'solve'
    record.p = 1.5
    record.level = 3
    data = json.loads(StructuredFormatter().format(record))
    assert data['message'] == 'solved'
    assert data['stage'] == 'solve' and data['p'] == 1.5
    assert data['ctx_level'] == 3
    assert data['level'] == 'INFO'
    assert 'dim' not in data


def test_stage_logger(caplog):
    caplog.set_level(logging.INFO)
    with StageLogger('level', p=1.5, dim=2, level=4):
        pass
    messages = [r.getMessage() for r in caplog.records]
    assert any(m.startswith('Stage started: level') for m in messages)
    assert any(m.startswith('Stage completed: level') for m in messages)
    assert caplog.records[-1].dim == 2


def test_stage_logger_failure(caplog):
    with pytest.raises(ValueError):
        with StageLogger('fit'):
            raise ValueError('no simplex')
    assert caplog.records[-1].levelno == logging.ERROR
    assert 'no simplex' in caplog.records[-1].getMessage()


def test_decorators(caplog):
    caplog.set_level(logging.INFO)

    @log_execution_time()
    def square(x):
        return x * x

    @log_exception()
    def broken():
        raise RuntimeError('broken')

    assert square(3) == 9
    assert 'square executed in' in caplog.records[-1].getMessage()
    with pytest.raises(RuntimeError):
        broken()
    assert caplog.records[-1].stage == 'broken'
