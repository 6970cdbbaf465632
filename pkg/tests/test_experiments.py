import math

import numpy as np
import pytest

from sobolevlab.config import Settings, SolverOptions
from sobolevlab.errors import ConfigError, ExtremalError, RateFitError, UnsupportedDimensionError
from sobolevlab.experiments import (
    ConvergenceReport,
    ConvergenceRow,
    fit_rate,
    run_convergence,
    run_lemma_suite,
    run_sweeps,
)
from sobolevlab.extremals import sobolev_constant_ref


def synthetic_rows(alpha, prefactor=0.7, levels=range(1, 6)):
    rows = []
    for level in levels:
        h = 0.6 ** level
        gap = prefactor * h ** alpha
        rows.append(ConvergenceRow(level=level, h=h, S_h=2.0 + gap, gap=gap, witness=2.0 + 1.5 * gap,
                                   nearest_distance=math.nan))
    return rows


def test_fit_rate_recovers_power_law():
    fit = fit_rate(synthetic_rows(0.8))
    assert fit.slope == pytest.approx(0.8, rel=1e-12)
    assert fit.residual < 1e-12


def test_fit_rate_from_pairs():
    pairs = [(h, 3.0 * h ** 1.5) for h in (0.5, 0.25, 0.125, 0.0625)]
    assert fit_rate(pairs).slope == pytest.approx(1.5, rel=1e-12)


def test_fit_rate_drops_nonpositive_gaps():
    pairs = [(0.5, 0.1), (0.25, -1e-9), (0.125, 0.025), (0.0625, 0.0125), (0.03, 0.006)]
    fit = fit_rate(pairs)
    assert math.isfinite(fit.slope)
    with pytest.raises(RateFitError):
        fit_rate([(0.5, 0.1), (0.25, 0.0), (0.125, -0.1), (0.1, 0.01)])


def test_report_passes_on_matching_rate():
    alpha = 2.0 * (3 - 2.0) / (3 + 2.0 - 2.0)
    report = ConvergenceReport(p=2.0, N=3, rows=synthetic_rows(alpha))
    report.fitted_slope, report.fit_residual = fit_rate(report.rows)
    report.witness_slope = fit_rate([(r.h, r.witness_gap) for r in report.rows]).slope
    assert report.alpha_target == pytest.approx(2.0 / 3.0)
    assert report.rate_pass and report.bracket_pass and report.witness_pass
    assert report.gaps_positive
    assert report.prefactors == pytest.approx([0.7] * 5)
    summary = report.summary()
    assert summary['gamma_min'] == pytest.approx(2.0 / 3.0)
    assert summary['gamma_max'] == pytest.approx(2.0 / 3.0)
    for key in ('fitted_slope', 'alpha_target', 'gamma_min', 'gamma_max', 'rate_pass', 'bracket_pass',
                'witness_pass', 'inconclusive'):
        assert key in summary


def test_report_fails_on_wrong_rate():
    report = ConvergenceReport(p=1.5, N=2, rows=synthetic_rows(1.2))
    report.fitted_slope, report.fit_residual = fit_rate(report.rows)
    # alpha(1.5, 2) = 2/3; the gamma bracket is [0.6, 0.8]
    assert not report.rate_pass
    assert not report.bracket_pass


def test_inconclusive_report_never_passes():
    report = ConvergenceReport(p=1.5, N=2, fitted_slope=4.0 / 3.0, inconclusive=True)
    assert not report.rate_pass
    assert not report.bracket_pass


def test_row_record_columns():
    row = synthetic_rows(1.0, levels=[2])[0]
    assert list(row.to_record()) == ['level', 'h', 'S_h', 'gap', 'witness', 'nearest_distance']
    assert row.witness_gap == pytest.approx(1.5 * row.gap)


def test_run_convergence_arguments():
    with pytest.raises(ConfigError):
        run_convergence(1.5, 2, max_level=2)
    with pytest.raises(UnsupportedDimensionError):
        run_convergence(1.5, 4, max_level=3)
    with pytest.raises(ExtremalError):
        run_convergence(2.5, 2, max_level=3)


def test_short_sweep_is_inconclusive():
    settings = Settings(max_iters=300, fit_min_level=2)
    report = run_convergence(1.5, 2, max_level=3, settings=settings, fit_nearest=False)
    assert [row.level for row in report.rows] == [1, 2, 3]
    assert report.gaps_positive
    s_ref = sobolev_constant_ref(1.5, 2)
    assert all(row.gap == pytest.approx(row.S_h - s_ref) for row in report.rows)
    assert all(math.isnan(row.nearest_distance) for row in report.rows)
    # only levels 2 and 3 enter the fit
    assert report.inconclusive
    assert not report.rate_pass
    assert report.notes


def test_sweeps_keep_config_order():
    settings = Settings(max_iters=100, fit_min_level=1)
    reports = run_sweeps([(1.5, 2), (1.2, 2)], max_level=3, settings=settings, fit_nearest=False)
    assert [(r.p, r.N) for r in reports] == [(1.5, 2), (1.2, 2)]
    assert all(len(r.rows) == 3 for r in reports)


def test_sweep_with_nearest_extremal():
    report = run_convergence(1.5, 2, max_level=3, opts=SolverOptions(max_iters=100), min_level=2)
    assert [row.level for row in report.rows] == [2, 3]
    assert all(np.isfinite(row.nearest_distance) and row.nearest_distance > 0 for row in report.rows)


@pytest.mark.slow
def test_rate_sweep_2d():
    report = run_convergence(1.5, 2, max_level=5, fit_nearest=False)
    assert report.gaps_positive
    assert not report.inconclusive
    assert report.rate_pass
    assert report.bracket_pass
    assert report.witness_pass
    assert all(row.S_h <= row.witness * (1.0 + 1e-8) for row in report.rows)


@pytest.mark.slow
def test_rate_sweep_3d():
    report = run_convergence(2.0, 3, max_level=4, fit_nearest=False)
    assert report.alpha_target == pytest.approx(2.0 / 3.0)
    assert report.gaps_positive
    assert not report.inconclusive
    assert report.rate_pass
    # for p = 2 the gamma bracket collapses onto alpha
    assert report.bracket_pass
    assert report.witness_pass


@pytest.mark.slow
@pytest.mark.parametrize(('p', 'N'), [(1.5, 2), (2.0, 3)])
def test_lemma_suite(p, N):
    reports = run_lemma_suite(p, N)
    names = {r.name for r in reports}
    assert {'elementary_inequalities', 'gradient_lower_bound', 'interp_scalings', 'tail_scalings',
            'hessian_bounds', 'interpolation_decay', 'deficit_sandwich'} <= names
    assert sum(r.name == 'elementary_inequalities' for r in reports) == len({p, 2.0})
    failed = [r.name for r in reports if not r.passed]
    assert not failed
