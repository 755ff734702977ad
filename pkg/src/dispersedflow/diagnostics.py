"""Quantities of interest, manufactured-solution errors, convergence fits,
stability-ledger summaries and CSV output."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .fem.quadrature import QuadRule
from .fem.space import geometry
from .problem import FlowState, Problem

TIMESERIES_COLUMNS = ("t", "E_kinetic", "e_div", "partition", "alpha_min", "psi_total", "ineq_residual")
LEDGER_COLUMNS = ("step", "t", "psi_total", "viscous", "drag", "rhs", "beta", "alpha_min", "residual",
                  "scale", "flagged")
ERROR_KINDS = ("e_p", "e_u", "e_div", "e_alpha")


def _dx(state: FlowState, rule: QuadRule):
    return geometry(state.p.space.mesh, rule).dx


def kinetic_energy(state: FlowState, problem: Problem, rule: QuadRule) -> float:
    """Sum over phases of rho_k / 2 ||sqrt(alpha_k) u_k||^2."""
    dx = _dx(state, rule)
    total = 0.0
    for k, ph in enumerate(problem.phases):
        a = state.alpha_qp(k, rule)[0]
        u = state.u[k].value_at(rule)
        total += 0.5 * ph.rho * np.sum(a * np.sum(u**2, axis=-1) * dx)
    return float(total)


def divergence_error(state: FlowState, rule: QuadRule) -> float:
    """||div(sum_k alpha_k u_hat_k)|| / |Omega| with the projected u_hat."""
    dx = _dx(state, rule)
    div = np.zeros(dx.shape)
    for k in range(state.n_phases):
        a, ga = state.alpha_qp(k, rule, gradient=True)
        u, gu = state.uhat[k].at(rule)
        div += np.einsum("eqa,eqa->eq", ga, u) + a * (gu[..., 0, 0] + gu[..., 1, 1])
    return float(np.sqrt(np.sum(div**2 * dx)) / dx.sum())


def partition_error(state: FlowState, rule: QuadRule) -> float:
    """| sum_k int alpha_k - |Omega| | / |Omega|."""
    dx = _dx(state, rule)
    total = sum(float(np.sum(state.alpha_qp(k, rule)[0] * dx)) for k in range(state.n_phases))
    area = float(dx.sum())
    return abs(total - area) / area


def partition_error_l1(state: FlowState, rule: QuadRule) -> float:
    """|Omega|^-1 || sum_k alpha_k - 1 ||_L1."""
    dx = _dx(state, rule)
    s = sum(state.alpha_qp(k, rule)[0] for k in range(state.n_phases))
    return float(np.sum(np.abs(s - 1.0) * dx) / dx.sum())


def alpha_min_nodal(state: FlowState) -> float:
    return min(float(state.alpha(k).values.min()) for k in range(state.n_phases))


# -- manufactured errors ---------------------------------------------------------------


@dataclass(frozen=True)
class ErrorReport:
    e_p: float
    e_u: float
    e_div: float
    e_alpha: float

    def __post_init__(self):
        for name in ERROR_KINDS:
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be a nonnegative number")

    def as_dict(self) -> dict:
        return asdict(self)


def _exact_gradient(f, x, y, t, h: float = 1e-6):
    """Central-difference gradient of an analytic vector field, (..., 2, 2)."""
    gx = [(a - b) / (2 * h) for a, b in zip(f(x + h, y, t), f(x - h, y, t))]
    gy = [(a - b) / (2 * h) for a, b in zip(f(x, y + h, t), f(x, y - h, t))]
    return np.stack([np.stack([gx[c], gy[c]], axis=-1) for c in range(2)], axis=-2)


def manufactured_errors(state: FlowState, exact, rule: QuadRule) -> ErrorReport:
    """Relative pressure and relative-velocity errors against analytic fields.

    Both pressures are compared after removing their means; e_u uses the
    H1 seminorm of u_r = u_2 - u_1.
    """
    if state.n_phases < 2:
        raise ValueError("the relative velocity needs two phases")
    geo = geometry(state.p.space.mesh, rule)
    dx, x, y, t = geo.dx, geo.x[..., 0], geo.x[..., 1], state.t
    area = dx.sum()
    ph = state.p.value_at(rule)
    pe = np.broadcast_to(exact.pressure(x, y, t), dx.shape)
    ph = ph - np.sum(ph * dx) / area
    pe = pe - np.sum(pe * dx) / area
    e_p = math.sqrt(np.sum((ph - pe) ** 2 * dx) / np.sum(pe**2 * dx))

    def rel(x, y, t):
        u1, u2 = exact.velocity(0, x, y, t), exact.velocity(1, x, y, t)
        return [np.broadcast_to(b - a, np.shape(x)) for a, b in zip(u1, u2)]

    gr = _exact_gradient(rel, x, y, t)
    gh = state.u[1].at(rule)[1] - state.u[0].at(rule)[1]
    num = np.sum(((gh - gr) ** 2).sum(axis=(-1, -2)) * dx)
    den = np.sum((gr**2).sum(axis=(-1, -2)) * dx)
    e_u = math.sqrt(num / den)
    return ErrorReport(e_p, e_u, divergence_error(state, rule), partition_error(state, rule))


# -- convergence ---------------------------------------------------------------------------


def fit_order(taus, errors, n_last: int = 4) -> float:
    """Least-squares slope of log(error) against log(tau) over the finest points."""
    taus = np.asarray(taus, dtype=float)
    errors = np.asarray(errors, dtype=float)
    if len(taus) != len(errors):
        raise ValueError("taus and errors differ in length")
    order = np.argsort(taus)[: max(2, n_last)]
    if len(order) < 2:
        return float("nan")
    if np.any(errors[order] <= 0):
        return float("nan")
    return float(np.polyfit(np.log(taus[order]), np.log(errors[order]), 1)[0])


def fit_orders(table, n_last: int = 4) -> dict:
    """Fitted order per error kind for rows ``(tau, ErrorReport)``."""
    if len(table) < 2:
        return {}
    taus = [tau for tau, _ in table]
    return {kind: fit_order(taus, [getattr(rep, kind) for _, rep in table], n_last) for kind in ERROR_KINDS}


# -- stability ledger ------------------------------------------------------------------------


@dataclass
class LedgerSummary:
    """Outcome of the per-step and accumulated stability checks."""

    n_steps: int
    max_relative_residual: float
    flagged_steps: list
    psi_initial: float
    psi_final: float
    bound: float
    bound_holds: bool
    alpha_min: float
    beta: float
    beta_bound: float
    alpha_min_trajectory: list = field(repr=False, default_factory=list)
    beta_trajectory: list = field(repr=False, default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.flagged_steps and self.bound_holds


def gronwall_bound(B, rate: float, T: float, tau: float) -> float:
    """sum(B_k) exp(rate T tau); infinite when the exponent overflows."""
    x = rate * T * tau
    return float(sum(B) * math.exp(x)) if x < 700 else float("inf")


def ledger_report(entries, constants: dict | None = None, T: float | None = None, tau: float | None = None,
                  slack: float | None = None) -> LedgerSummary:
    """Summarize ledger entries.

    `constants` is the output of ``bound_constants`` (B_k and the exponent
    rate) computed with the run's measured alpha_min; when given together
    with T and tau, the accumulated bound sum(Psi^N) <= sum(B_k)
    exp(rate T tau) is checked with the entries' relative slack.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("empty ledger")
    flagged = [e.step for e in entries if e.flagged]
    rel = max(e.residual / e.scale for e in entries)
    last = entries[-1]
    bound, holds, beta_bound = float("nan"), True, float("nan")
    if constants is not None:
        if T is None or tau is None:
            raise ValueError("T and tau are needed for the accumulated bound")
        bound = gronwall_bound(constants["B"], constants["rate"], T, tau)
        eps = last.slack if slack is None else slack
        holds = last.psi_total <= bound + eps * max(bound, last.psi_total)
        beta_bound = constants.get("beta_bound", float("nan"))
    return LedgerSummary(
        n_steps=len(entries),
        max_relative_residual=float(rel),
        flagged_steps=flagged,
        psi_initial=float(sum(entries[0].psi_old)),
        psi_final=last.psi_total,
        bound=bound,
        bound_holds=bool(holds),
        alpha_min=float(min(e.alpha_min for e in entries)),
        beta=float(max(e.beta for e in entries)),
        beta_bound=float(beta_bound),
        alpha_min_trajectory=[e.alpha_min for e in entries],
        beta_trajectory=[e.beta for e in entries],
    )


# -- CSV output ----------------------------------------------------------------------------------


def _writer(fh):
    return csv.writer(fh, lineterminator="\n")


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def write_timeseries(path, rows) -> None:
    """Rows are mappings with the keys of :data:`TIMESERIES_COLUMNS`."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(TIMESERIES_COLUMNS)
        for r in rows:
            w.writerow([_fmt(r[c]) for c in TIMESERIES_COLUMNS])


def write_ledger(path, entries) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(LEDGER_COLUMNS)
        for e in entries:
            w.writerow([_fmt(v) for v in (e.step, e.t, e.psi_total, e.viscous, e.drag, e.rhs, e.beta,
                                          e.alpha_min, e.residual, e.scale, e.flagged)])


def write_convergence(path, table, orders: dict | None = None) -> None:
    """One row per refinement: tau and the four errors; fitted orders last."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = _writer(fh)
        w.writerow(("tau",) + ERROR_KINDS)
        for tau, rep in table:
            w.writerow([_fmt(tau)] + [_fmt(getattr(rep, k)) for k in ERROR_KINDS])
        if orders:
            w.writerow(["order"] + [_fmt(orders[k]) for k in ERROR_KINDS])
