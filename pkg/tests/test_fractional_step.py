import warnings

import numpy as np
import pytest

from dispersedflow import transport
from dispersedflow.cases import case_decay, case_disk_linear_drag
from dispersedflow.fem import Field, Space, assemble_vector, gauss_rule, interpolate, stiffness_matrix
from dispersedflow.fractional_step import (
    AlphaWarning,
    FractionalStepScheme,
    LedgerEntry,
    SimulationError,
    mean_divergence_residual,
)
from dispersedflow.linalg import SolverSettings
from dispersedflow.mesh import build_disk, build_rectangle
from dispersedflow.problem import (
    BoundaryConditions,
    DragModel,
    FlowState,
    PhaseParams,
    Problem,
    SchemeConfig,
    clip_drag,
)

TIGHT = SolverSettings(rtol=1e-12)


def _zero(k, x, y, t):
    return np.zeros_like(x), np.zeros_like(x)


def _gravity(x, y, t):
    return 0.0, -1.0


def _scheme(mesh, phases, drag=None, bcs=None, **cfg):
    bcs = bcs or BoundaryConditions(dirichlet={m: _zero for m in mesh.markers})
    cfg.setdefault("solver", TIGHT)
    return FractionalStepScheme(Problem(mesh, tuple(phases), drag or DragModel(), bcs),
                                SchemeConfig(**{"tau": 0.1, "T": 1.0, **cfg}))


def _uniform_state(s, alphas, u=None, uhat=None, p=None):
    d = s.disc
    var = [transport.variable_of(s.formulation, interpolate(d.Z, lambda x, y, a=a: np.full_like(x, a)))
           for a in alphas]
    M = len(alphas)
    u = u or [Field(d.X) for _ in range(M)]
    uhat = uhat or [ui.copy() for ui in u]
    return FlowState(0.0, 0, s.formulation, p or Field(d.Y), var, u, [w.value_at(d.rule) for w in uhat], uhat)


# -- data types ----------------------------------------------------------------------------


@pytest.mark.parametrize("gamma, cap, expected", [(3.0, 1e6, 3.0), (2e6, 1e6, 1e6), (0.0, 5.0, 0.0)])
def test_clip_drag(gamma, cap, expected):
    assert clip_drag(gamma, cap) == expected


def test_clip_drag_rejects_negative():
    with pytest.raises(ValueError):
        clip_drag(-1.0, 1.0)


def test_drag_model_symmetric_and_capped():
    dm = DragModel({(0, 1): lambda t, a, b, s: 10 * a * s}, cap=2.0)
    s = np.array([0.1, 1.0])
    assert np.array_equal(dm.coefficient(0, 1, 0.0, 0.5, 0.3, s), dm.coefficient(1, 0, 0.0, 0.3, 0.5, s))
    assert np.array_equal(dm.coefficient(0, 1, 0.0, 0.5, 0.3, s), [0.5, 2.0])
    assert not np.any(dm.coefficient(1, 1, 0.0, 0.5, 0.5, s))
    with pytest.raises(ValueError):
        DragModel({(1, 0): lambda *a: 0.0})
    with pytest.raises(ValueError):
        DragModel(cap=0.0)


def test_phase_and_config_validation():
    with pytest.raises(ValueError):
        PhaseParams(0.0, 1.0)
    with pytest.raises(ValueError):
        PhaseParams(1.0, -1.0)
    with pytest.raises(ValueError):
        SchemeConfig(tau=0.0, T=1.0)
    assert SchemeConfig(tau=0.1, T=1.0).n_steps == 10


def test_boundary_conditions_must_cover_markers():
    m = build_rectangle(2, 2)
    with pytest.raises(ValueError, match="no velocity condition"):
        _scheme(m, [PhaseParams(1, 1)], bcs=BoundaryConditions(dirichlet={"top": _zero}))
    with pytest.raises(ValueError, match="not on the mesh"):
        _scheme(m, [PhaseParams(1, 1)], bcs=BoundaryConditions(dirichlet={"lid": _zero}))


# -- momentum step -------------------------------------------------------------------------------


def test_single_phase_rest_stays_at_rest():
    s = _scheme(build_disk(1, 2), [PhaseParams(1.0, 1.0)])
    st = _uniform_state(s, [1.0])
    u = s.momentum_step(st, st.var)
    assert not np.any(u[0].values)


def test_single_element_scalar_surrogate():
    m = build_rectangle(1, 1)
    rho, tau = (1.0, 3.0), 0.25
    g = (lambda x, y, t: (0.0, -2.0), None)
    phases = [PhaseParams(rho[0], 1.0, g[0]), PhaseParams(rho[1], 0.5)]
    drag = DragModel({(0, 1): lambda t, a, b, sp: np.full_like(sp, 0.7)})
    bcs = BoundaryConditions(natural=("bottom", "right", "top", "left"))
    s = _scheme(m, phases, drag, bcs, tau=tau)
    d = s.disc
    alphas, uh = (0.4, 0.6), ((1.0, 0.5), (-0.2, 0.3))
    uhat = [interpolate(d.X, lambda x, y, v=v: (np.full_like(x, v[0]), np.full_like(x, v[1]))) for v in uh]
    st = _uniform_state(s, alphas, uhat=uhat)
    u = s.momentum_step(st, st.var)
    for k in range(2):
        other = 1 - k
        gk = np.array([0.0, -2.0]) if k == 0 else np.zeros(2)
        rel = np.subtract(uh[k], uh[other])
        a = alphas[k]
        expected = (a * np.array(uh[k]) + tau * (a * gk - 0.7 * rel / rho[k])) / a
        assert np.allclose(u[k].components.T, expected, atol=1e-10)


def test_drag_contributions_cancel_between_phases():
    m = build_disk(1, 2)
    s = _scheme(m, [PhaseParams(1.0, 1.0), PhaseParams(2.0, 1.0)],
                DragModel({(0, 1): lambda t, a, b, sp: 1.0 + sp}))
    d = s.disc
    rng = np.random.default_rng(0)
    uhat = [Field(d.X, rng.normal(size=d.X.ndofs)) for _ in range(2)]
    st = _uniform_state(s, (0.3, 0.7), uhat=uhat)
    a0 = s._alphas(st.var)
    gam = s.drag_coefficients(st, a0)
    zero = {key: np.zeros_like(v) for key, v in gam.items()}
    drag = [s.momentum_rhs(k, st, a0[k], a0[k], gam) - s.momentum_rhs(k, st, a0[k], a0[k], zero) for k in range(2)]
    assert np.abs(drag[0] + drag[1]).max() < 1e-13
    # equal end-of-step velocities give no drag at all
    st_eq = _uniform_state(s, (0.3, 0.7), uhat=[uhat[0], uhat[0].copy()])
    gam = s.drag_coefficients(st_eq, a0)
    for k in range(2):
        diff = s.momentum_rhs(k, st_eq, a0[k], a0[k], gam) - s.momentum_rhs(k, st_eq, a0[k], a0[k], zero)
        assert not np.any(diff)


def test_momentum_matrix_assembled_once_per_phase(monkeypatch):
    case = case_decay()
    s = FractionalStepScheme(case.problem(), case.config())
    st = s.initial_state(case.alpha0, case.velocity0)
    calls = []
    orig = s.momentum_matrix

    def counting(*args, **kw):
        calls.append(args[0])
        return orig(*args, **kw)

    monkeypatch.setattr(s, "momentum_matrix", counting)
    s.momentum_step(st, s.transport_step(st))
    assert calls == [0, 1]


def test_implicit_viscous_variant_is_close_to_explicit():
    case = case_decay()
    outs = []
    for flag in (False, True):
        s = FractionalStepScheme(case.problem(), case.config(tau=0.01, implicit_viscous=flag, solver=TIGHT))
        st = s.initial_state(case.alpha0, case.velocity0)
        outs.append(s.advance(st)[0].u[0].values)
    assert np.linalg.norm(outs[0] - outs[1]) < 0.05 * np.linalg.norm(outs[0])


# -- pressure step ------------------------------------------------------------------------------------


def test_stationary_pressure_increment():
    m = build_disk(2, 4)
    s = _scheme(m, [PhaseParams(1.0, 1.0), PhaseParams(2.0, 1.0)])
    d = s.disc
    p = interpolate(d.Y, lambda x, y: x * y + 0.5 * x)
    p.values -= d.pressure_weights @ p.values / d.pressure_weights.sum()
    st = _uniform_state(s, (0.3, 0.7), p=p)
    rot = interpolate(d.X, lambda x, y: (-y, x))
    p1 = s.pressure_step(st, st.var, [rot, rot])
    assert np.allclose(p1.values, p.values, atol=1e-9)


def test_equal_fractions_unit_density_gives_laplacian():
    m = build_disk(1, 2)
    s = _scheme(m, [PhaseParams(1.0, 1.0), PhaseParams(1.0, 1.0)])
    a = s._alphas(_uniform_state(s, (0.5, 0.5)).var)
    from dispersedflow.fem.assembly import stiffness_matrix as K

    assert abs(K(s.disc.Y, s.disc.rule, a[0] / 1.0 + a[1] / 1.0) - K(s.disc.Y, s.disc.rule)).max() < 1e-13


def test_pressure_step_against_independent_assembly():
    m = build_disk(2, 4)
    s = _scheme(m, [PhaseParams(1.0, 1.0), PhaseParams(3.0, 1.0)], transport=transport.TransportConfig(degree=2))
    d = s.disc
    var_n = [interpolate(d.Z, lambda x, y: np.sqrt(0.5 + 0.2 * x)), interpolate(d.Z, lambda x, y: np.sqrt(0.5 - 0.2 * x))]
    var_1 = [interpolate(d.Z, lambda x, y: np.sqrt(0.5 + 0.1 * y)), interpolate(d.Z, lambda x, y: np.sqrt(0.5 - 0.1 * y))]
    p_n = interpolate(d.Y, lambda x, y: np.sin(x) * y)
    u1 = [interpolate(d.X, lambda x, y: (x * y, 1 - x)), interpolate(d.X, lambda x, y: (y, x**2))]
    st = FlowState(0.0, 0, "sqrt_variable", p_n, var_n, u1, [w.value_at(d.rule) for w in u1], u1)
    p1 = s.pressure_step(st, var_1, u1)
    # second path: generic assembly of the right-hand side from the strong data;
    # sqrt(a1 a0) is not polynomial, so the same rule is used
    rule = d.rule

    def integrand(v, c):
        return np.einsum("eqia,eqa->eqi", v.grad, c.flux)

    a1 = [transport.alpha_at("sqrt_variable", f, rule, False)[0] for f in var_1]
    a0 = [transport.alpha_at("sqrt_variable", f, rule, False)[0] for f in var_n]
    gp = p_n.at(rule)[1]
    fl = sum(a1[k][..., None] * u1[k].value_at(rule) / 0.1 + (np.sqrt(a1[k] * a0[k]) / (1.0, 3.0)[k])[..., None] * gp
             for k in range(2))
    b = assemble_vector(d.Y, integrand, rule, {"flux": fl})
    K = stiffness_matrix(d.Y, rule, a1[0] / 1.0 + a1[1] / 3.0)
    assert np.linalg.norm(K @ p1.values - b) <= 1e-8 * np.linalg.norm(b)


# -- projection step --------------------------------------------------------------------------------------


def test_projection_identity_case():
    case = case_decay()
    s = FractionalStepScheme(case.problem(), case.config(solver=TIGHT))
    st = s.initial_state(case.alpha0, case.velocity0)
    qp, fe = s.projection_step(st.u, st.p, st.p, st.var, st.var)
    for k in range(2):
        assert np.allclose(qp[k], st.u[k].value_at(s.disc.rule), atol=1e-14)
        assert np.allclose(fe[k].values, st.u[k].values, atol=1e-9)


def test_projection_uniform_formula():
    m = build_rectangle(1, 1)
    s = _scheme(m, [PhaseParams(2.0, 1.0)], bcs=BoundaryConditions(natural=("bottom", "right", "top", "left")),
                tau=0.5)
    d = s.disc
    st0 = _uniform_state(s, [0.36])
    st1 = _uniform_state(s, [0.64])
    u = interpolate(d.X, lambda x, y: (np.full_like(x, 1.0), np.full_like(x, -1.0)))
    p0 = interpolate(d.Y, lambda x, y: 2 * x - y)
    p1 = interpolate(d.Y, lambda x, y: -x + 3 * y)
    qp, fe = s.projection_step([u], p0, p1, st0.var, st1.var)
    expected = np.array([1.0, -1.0]) + 0.5 / 2.0 * (np.sqrt(0.36 / 0.64) * np.array([2.0, -1.0]) - np.array([-1.0, 3.0]))
    assert np.allclose(qp[0], expected)
    assert np.allclose(fe[0].components.T, expected)


def test_projection_rejects_vanishing_fraction():
    m = build_rectangle(1, 1)
    s = _scheme(m, [PhaseParams(1.0, 1.0)], bcs=BoundaryConditions(natural=("bottom", "right", "top", "left")))
    st = _uniform_state(s, [0.0])
    with pytest.raises(SimulationError, match="alpha_min"):
        s.projection_step(st.u, st.p, st.p, st.var, st.var)


# -- pressure initialisation ---------------------------------------------------------------------------------


def test_initial_pressure_zero_data():
    s = _scheme(build_disk(1, 2), [PhaseParams(1.0, 1.0), PhaseParams(2.0, 1.0)])
    st = _uniform_state(s, (0.4, 0.6))
    assert np.allclose(s.initialize_pressure(st).values, 0.0)


def test_initial_pressure_hydrostatic():
    m = build_rectangle(2, 4, (0, 1), (0, 2))
    s = _scheme(m, [PhaseParams(2.0, 1.0, _gravity), PhaseParams(2.0, 1.0, _gravity)])
    st = _uniform_state(s, (0.3, 0.7))
    p = s.initialize_pressure(st)
    y = s.disc.Y.coords[:, 1]
    expected = -2.0 * y
    expected -= s.disc.pressure_weights @ expected / s.disc.pressure_weights.sum()
    assert np.allclose(p.values, expected, atol=1e-8)


def test_initial_pressure_converges_for_disk_case():
    case = case_disk_linear_drag()
    errs = []
    for res in ((2, 4), (4, 8)):
        s = FractionalStepScheme(case.problem(res), case.config(solver=TIGHT))
        st = s.initial_state(case.alpha0, case.velocity0)
        errs.append(_p_error(s, st, case))
    assert errs[0] / errs[1] >= 1.5


def _p_error(s, st, case):
    from dispersedflow.diagnostics import manufactured_errors

    return manufactured_errors(st, case.exact, s.disc.rule).e_p


# -- full steps ----------------------------------------------------------------------------------------------------


def test_quiescent_state_is_unchanged():
    s = _scheme(build_disk(1, 2), [PhaseParams(1.0, 1.0), PhaseParams(2.0, 0.5)],
                DragModel({(0, 1): lambda t, a, b, sp: 1 + 0 * sp}))
    st = _uniform_state(s, (0.25, 0.75))
    new, entry = s.advance(st)
    for k in range(2):
        assert np.allclose(new.alpha(k).values, st.alpha(k).values, atol=1e-14)
        assert np.allclose(new.u[k].values, 0.0, atol=1e-14)
    assert np.allclose(new.p.values, 0.0)
    assert entry.psi_total == 0.0 and not entry.flagged


def test_divergence_free_end_of_step_velocity():
    case = case_decay()
    s = FractionalStepScheme(case.problem(), case.config(solver=TIGHT))
    st = s.initial_state(case.alpha0, case.velocity0)
    for _ in range(3):
        st, _ = s.advance(st)
        r = mean_divergence_residual(s, st)
        assert np.abs(r).max() <= 1e-8


def test_alpha_warning_and_nan_detection():
    case = case_decay()
    s = FractionalStepScheme(case.problem(), case.config(alpha_min_warn=0.4))
    st = s.initial_state(case.alpha0, case.velocity0)
    with pytest.warns(AlphaWarning):
        s.advance(st)
    bad = st.copy()
    bad.u[0].values[:] = np.nan
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        with pytest.raises(SimulationError) as info:
            s.advance(bad)
    assert info.value.step == 1


def test_ledger_entry_fields():
    case = case_decay()
    s = FractionalStepScheme(case.problem(), case.config())
    st = s.initial_state(case.alpha0, case.velocity0)
    _, entry = s.advance(st)
    assert isinstance(entry, LedgerEntry)
    for v in (entry.viscous, entry.drag, entry.rhs, entry.beta, entry.alpha_min, entry.scale):
        assert v >= 0
    assert all(p >= 0 for p in entry.psi)
    assert entry.residual <= entry.slack * entry.scale


def test_bdf1_identity_on_random_fields():
    rng = np.random.default_rng(0)
    m = build_disk(1, 2)
    V = Space(m, 2, 2)
    rule = gauss_rule(6)
    from dispersedflow.fem.norms import integrate

    a, b = (Field(V, rng.normal(size=V.ndofs)).value_at(rule) for _ in range(2))

    def ip(f, g):
        return integrate((f * g).sum(-1), m, rule)

    assert np.isclose(2 * ip(a - b, a), ip(a, a) - ip(b, b) + ip(a - b, a - b), rtol=1e-12)
    assert np.isclose(2 * ip(a + b, a), ip(a, a) - ip(b, b) + ip(a + b, a + b), rtol=1e-12)
