import csv
import math

import numpy as np
import pytest

from dispersedflow import diagnostics as dg
from dispersedflow import transport
from dispersedflow.cases import ExactSolution
from dispersedflow.fem import Field, interpolate
from dispersedflow.fractional_step import FractionalStepScheme, LedgerEntry
from dispersedflow.mesh import build_disk, build_rectangle
from dispersedflow.problem import BoundaryConditions, DragModel, FlowState, PhaseParams, Problem, SchemeConfig


def _zero(k, x, y, t):
    return np.zeros_like(x), np.zeros_like(x)


def _scheme(mesh, rho=(1.0, 1.0)):
    pb = Problem(mesh, tuple(PhaseParams(r, 1.0) for r in rho), DragModel(),
                 BoundaryConditions(dirichlet={m: _zero for m in mesh.markers}))
    return FractionalStepScheme(pb, SchemeConfig(tau=0.1, T=1.0))


def _state(s, alphas, velocities=None, p=None):
    d = s.disc
    var = [transport.variable_of(s.formulation, interpolate(d.Z, lambda x, y, a=a: np.full_like(x, a)))
           for a in alphas]
    u = [interpolate(d.X, f) for f in velocities] if velocities else [Field(d.X) for _ in alphas]
    return FlowState(1.0, 0, s.formulation, p or Field(d.Y), var, u, [w.value_at(d.rule) for w in u],
                     [w.copy() for w in u])


@pytest.fixture(scope="module")
def square():
    return _scheme(build_rectangle(4, 4))


def _rotation(x, y):
    return -y, x


def test_kinetic_energy_example(square):
    st = _state(square, (0.5, 0.5), [lambda x, y: (np.ones_like(x), np.zeros_like(x)), _rotation])
    st.u[1].values[:] = 0.0
    assert math.isclose(dg.kinetic_energy(st, square.problem, square.disc.rule), 0.25, rel_tol=1e-12)


def test_kinetic_energy_weights_density():
    s = _scheme(build_rectangle(2, 2), rho=(1.0, 3.0))
    st = _state(s, (0.5, 0.5), [lambda x, y: (np.ones_like(x), np.zeros_like(x))] * 2)
    assert math.isclose(dg.kinetic_energy(st, s.problem, s.disc.rule), 0.5 * 0.5 * 4, rel_tol=1e-12)


def test_divergence_of_rigid_rotation_is_zero():
    s = _scheme(build_disk(2, 4))
    st = _state(s, (0.3, 0.7), [_rotation, _rotation])
    assert dg.divergence_error(st, s.disc.rule) < 1e-12


def test_divergence_of_expansion(square):
    # div(x, y) = 2 on the unit square, so ||2|| / |Omega| = 2
    st = _state(square, (0.5, 0.5), [lambda x, y: (x, y)] * 2)
    assert math.isclose(dg.divergence_error(st, square.disc.rule), 2.0, rel_tol=1e-10)


def test_partition_error_example(square):
    st = _state(square, (0.6, 0.6))
    assert math.isclose(dg.partition_error(st, square.disc.rule), 0.2, rel_tol=1e-10)


@pytest.mark.parametrize("alphas", [(0.6, 0.6), (0.2, 0.3), (0.5, 0.5)])
def test_partition_routes_agree_for_constant_sign(square, alphas):
    st = _state(square, alphas)
    rule = square.disc.rule
    assert math.isclose(dg.partition_error(st, rule), dg.partition_error_l1(st, rule), abs_tol=1e-12)


def test_alpha_min_nodal(square):
    assert math.isclose(dg.alpha_min_nodal(_state(square, (0.25, 0.75))), 0.25)


# -- manufactured errors -------------------------------------------------------------------


def _exact():
    return ExactSolution(lambda k, x, y, t: _rotation(x, y) if k == 0 else (np.zeros_like(x), np.zeros_like(x)),
                         lambda x, y, t: x,
                         lambda k, x, y, t: np.full_like(x, 0.5))


def test_doubled_pressure_gives_unit_error():
    s = _scheme(build_rectangle(4, 4, (-1, 1), (-1, 1)))
    st = _state(s, (0.5, 0.5), [_rotation, lambda x, y: (np.zeros_like(x), np.zeros_like(x))],
                p=interpolate(s.disc.Y, lambda x, y: 2 * x))
    rep = dg.manufactured_errors(st, _exact(), s.disc.rule)
    assert math.isclose(rep.e_p, 1.0, rel_tol=1e-10)
    assert rep.e_u < 1e-8
    assert rep.e_alpha < 1e-12


def test_pressure_error_ignores_constant_shift():
    s = _scheme(build_rectangle(4, 4, (-1, 1), (-1, 1)))
    st = _state(s, (0.5, 0.5), [_rotation, lambda x, y: (np.zeros_like(x), np.zeros_like(x))],
                p=interpolate(s.disc.Y, lambda x, y: x + 3.0))
    assert dg.manufactured_errors(st, _exact(), s.disc.rule).e_p < 1e-12


def test_error_report_rejects_negative():
    with pytest.raises(ValueError):
        dg.ErrorReport(-1.0, 0.0, 0.0, 0.0)


def _table(slopes, taus=(0.1, 0.05, 0.025, 0.0125, 0.00625)):
    return [(t, dg.ErrorReport(*(3.0 * t**q for q in slopes))) for t in taus]


def test_fit_orders_recovers_slopes():
    orders = dg.fit_orders(_table((1.0, 2.0, 1.0, 2.0)))
    assert orders == pytest.approx({"e_p": 1.0, "e_u": 2.0, "e_div": 1.0, "e_alpha": 2.0})


def test_fit_order_uses_finest_points():
    taus = [0.1, 0.05, 0.025, 0.0125, 0.00625]
    errs = [1.0] + [t for t in taus[1:]]
    assert dg.fit_order(taus, errs) == pytest.approx(1.0)
    assert dg.fit_order(taus, errs, n_last=5) > 1.5


def test_fit_order_noisy_regression():
    rng = np.random.default_rng(0)
    taus = 0.1 / 2.0 ** np.arange(5)
    errs = taus * np.exp(0.02 * rng.normal(size=5))
    assert abs(dg.fit_order(taus, errs) - 1.0) < 0.1


def test_fit_orders_short_table():
    assert dg.fit_orders(_table((1, 1, 1, 1), taus=(0.1,))) == {}
    assert math.isnan(dg.fit_order([0.1, 0.05], [0.0, 1.0]))


# -- ledger --------------------------------------------------------------------------------------


def _entry(step, psi, psi_old, residual=0.0, beta=0.5):
    return LedgerEntry(step, 0.1 * step, (psi,), (psi_old,), 0.1, 0.0, 0.0, beta, 0.2, residual, 1.0, 1e-6)


def test_ledger_report_clean():
    entries = [_entry(1, 0.9, 1.0), _entry(2, 0.8, 0.9)]
    rep = dg.ledger_report(entries, {"B": [1.0], "rate": 0.0, "beta_bound": 1.0}, T=0.2, tau=0.1)
    assert rep.ok and rep.n_steps == 2 and rep.psi_initial == 1.0 and rep.psi_final == 0.8
    assert rep.bound == pytest.approx(1.0)


def test_ledger_report_flags_bad_step():
    entries = [_entry(1, 0.9, 1.0), _entry(2, 1.2, 0.9, residual=0.3)]
    rep = dg.ledger_report(entries)
    assert rep.flagged_steps == [2] and not rep.ok
    assert rep.max_relative_residual == pytest.approx(0.3)


def test_ledger_report_violated_bound():
    rep = dg.ledger_report([_entry(1, 2.0, 1.0)], {"B": [1.0], "rate": 0.0}, T=0.1, tau=0.1)
    assert not rep.bound_holds and not rep.ok


def test_ledger_report_needs_entries_and_times():
    with pytest.raises(ValueError):
        dg.ledger_report([])
    with pytest.raises(ValueError):
        dg.ledger_report([_entry(1, 0.9, 1.0)], {"B": [1.0], "rate": 0.0})


def test_gronwall_bound_overflow_is_infinite():
    assert dg.gronwall_bound([1.0, 2.0], 1.0, 1.0, 1.0) == pytest.approx(3 * math.e)
    assert math.isinf(dg.gronwall_bound([1.0], 1e12, 1.0, 1.0))


# -- CSV -----------------------------------------------------------------------------------------


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_timeseries_csv_round_trip(tmp_path):
    row = dict(t=0.1, E_kinetic=1 / 3, e_div=0.0, partition=1e-17, alpha_min=0.05, psi_total=2.0,
               ineq_residual=float("nan"))
    dg.write_timeseries(tmp_path / "ts.csv", [row])
    header, values = _read(tmp_path / "ts.csv")
    assert tuple(header) == dg.TIMESERIES_COLUMNS
    assert float(values[1]) == 1 / 3
    assert math.isnan(float(values[-1]))


def test_ledger_csv(tmp_path):
    dg.write_ledger(tmp_path / "l.csv", [_entry(1, 0.9, 1.0), _entry(2, 1.2, 0.9, residual=0.3)])
    rows = _read(tmp_path / "l.csv")
    assert tuple(rows[0]) == dg.LEDGER_COLUMNS
    assert [r[-1] for r in rows[1:]] == ["0", "1"]


def test_convergence_csv(tmp_path):
    table = _table((1, 2, 1, 2))
    dg.write_convergence(tmp_path / "c.csv", table, dg.fit_orders(table))
    rows = _read(tmp_path / "c.csv")
    assert rows[0] == ["tau", *dg.ERROR_KINDS]
    assert len(rows) == 7 and rows[-1][0] == "order"
    assert float(rows[-1][2]) == pytest.approx(2.0)
