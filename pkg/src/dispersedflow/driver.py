"""Batch runs: a single case, a temporal refinement study, and the
fractional-step versus monolithic comparison."""
from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import diagnostics as dg
from . import linalg
from .cases import CaseDefinition, get_case
from .fem.space import evaluate_at, geometry
from .fractional_step import FractionalStepScheme
from .monolithic import MonolithicScheme
from .problem import FlowState
from .transport import TransportConfig
from .vtk import write_vtk

SCHEMES = ("fractional_step", "monolithic")
OUTPUT_ENV = "DISPERSEDFLOW_OUTPUT"


@dataclass(frozen=True)
class RunConfig:
    """A case name plus optional overrides of its defaults."""

    case: str
    scheme: str = "fractional_step"
    tau: Optional[float] = None
    T: Optional[float] = None
    resolution: Optional[tuple] = None
    full_resolution: bool = False
    velocity_degree: Optional[int] = None
    pressure_degree: Optional[int] = None
    formulation: Optional[str] = None
    transport_degree: Optional[int] = None
    chi: Optional[int] = None
    drag_cap: Optional[float] = None
    rtol: Optional[float] = None
    implicit_viscous: bool = False
    monolithic_solver: str = "direct"
    cadence: int = 0
    output_dir: Optional[str] = None
    seed: int = 0

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; expected one of {SCHEMES}")
        for name in ("tau", "T", "drag_cap", "rtol"):
            v = getattr(self, name)
            if v is not None and not (isinstance(v, (int, float)) and v > 0):
                raise ValueError(f"{name} must be a positive number")
        if self.resolution is not None:
            if not all(isinstance(n, (int, np.integer)) and n >= 1 for n in self.resolution):
                raise ValueError("resolution entries must be positive integers")
        if self.cadence < 0:
            raise ValueError("cadence must be nonnegative")

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class RunResult:
    config: RunConfig
    case: CaseDefinition
    scheme: FractionalStepScheme
    initial: FlowState
    state: FlowState
    ledger: list = field(default_factory=list)
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)


def _resolution(config: RunConfig, case: CaseDefinition):
    if config.resolution is None and config.full_resolution:
        return case.full_resolution
    return config.resolution


def build(config: RunConfig, mesh=None):
    """Case, scheme and initial state for a configuration."""
    case = get_case(config.case)
    if config.drag_cap is not None:
        case = case.with_(drag=replace(case.drag, cap=config.drag_cap))
    tc = case.transport
    tc = TransportConfig(
        config.formulation or tc.formulation,
        tc.chi if config.chi is None else config.chi,
        config.transport_degree or tc.degree,
    )
    overrides = dict(transport=tc, implicit_viscous=config.implicit_viscous)
    for name in ("tau", "T", "velocity_degree", "pressure_degree"):
        if getattr(config, name) is not None:
            overrides[name] = getattr(config, name)
    if config.rtol is not None:
        overrides["solver"] = replace(linalg.DEFAULT, rtol=config.rtol)
    cfg = case.config(**overrides)
    problem = case.problem(_resolution(config, case), mesh=mesh)
    if config.scheme == "monolithic":
        scheme = MonolithicScheme(problem, cfg, solver=config.monolithic_solver)
    else:
        scheme = FractionalStepScheme(problem, cfg)
    state = scheme.initial_state(case.alpha0, case.velocity0, case.pressure0)
    return case, scheme, state


def _row(scheme, state: FlowState, entry) -> dict:
    rule = scheme.disc.rule
    return {
        "t": state.t,
        "E_kinetic": dg.kinetic_energy(state, scheme.problem, rule),
        "e_div": dg.divergence_error(state, rule),
        "partition": dg.partition_error(state, rule),
        "alpha_min": dg.alpha_min_nodal(state),
        "psi_total": entry.psi_total if entry is not None else float(sum(scheme.psi(state))),
        "ineq_residual": entry.residual if entry is not None else float("nan"),
    }


def output_root(config: RunConfig) -> Optional[Path]:
    if config.output_dir:
        return Path(config.output_dir)
    root = os.environ.get(OUTPUT_ENV)
    return Path(root) / config.case / config.scheme if root else None


def _snapshot(out: Path, scheme, state: FlowState):
    fields_ = {"p": state.p}
    for k in range(state.n_phases):
        fields_[f"alpha_{k + 1}"] = state.alpha(k)
        fields_[f"u_{k + 1}"] = state.u[k]
        fields_[f"uhat_{k + 1}"] = state.uhat[k]
    write_vtk(out / f"state_{state.step:06d}.vtk", scheme.disc.mesh, fields_)


def run(config: RunConfig, n_steps: Optional[int] = None, write: bool = True, mesh=None,
        callback=None) -> RunResult:
    """Time loop to T (or `n_steps` steps) with diagnostics per step.

    `callback(scheme, state, entry)` is called after every step.
    """
    case, scheme, state0 = build(config, mesh)
    out = output_root(config) if write else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        if config.cadence:
            _snapshot(out, scheme, state0)
    rows = []

    def after_step(state, entry):
        rows.append(_row(scheme, state, entry))
        if callback is not None:
            callback(scheme, state, entry)
        if out is not None and config.cadence and state.step % config.cadence == 0:
            _snapshot(out, scheme, state)

    state, ledger = scheme.run(state0, n_steps, after_step)
    summary = summarize(config, case, scheme, state0, state, ledger)
    if out is not None:
        dg.write_timeseries(out / "timeseries.csv", rows)
        dg.write_ledger(out / "ledger.csv", ledger)
        with open(out / "summary.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True, default=_json_default)
            fh.write("\n")
    return RunResult(config, case, scheme, state0, state, ledger, rows, summary)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(type(obj))


def _clean(x):
    return None if isinstance(x, float) and not math.isfinite(x) else x


def summarize(config, case, scheme, state0, state, ledger) -> dict:
    cfg = scheme.cfg
    s = {
        "case": case.name,
        "scheme": scheme.name,
        "tau": cfg.tau,
        "T": cfg.T,
        "steps": state.step,
        "t_final": state.t,
        "elements": scheme.disc.mesh.n_elements,
        "degrees": [cfg.velocity_degree, cfg.pressure_degree, cfg.transport.degree],
        "formulation": cfg.transport.formulation,
        "alpha_min": float(scheme.alpha_min),
    }
    if case.exact is not None:
        s["errors"] = dg.manufactured_errors(state, case.exact, scheme.disc.rule).as_dict()
    if ledger:
        rep = dg.ledger_report(ledger, scheme.bound_constants(state0), state.t - state0.t, cfg.tau)
        s["ledger"] = {
            "flagged_steps": rep.flagged_steps,
            "max_relative_residual": rep.max_relative_residual,
            "psi_final": rep.psi_final,
            "gronwall_bound": _clean(rep.bound),
            "bound_holds": rep.bound_holds,
            "beta": rep.beta,
        }
    return s


def converge(config: RunConfig, n_refinements: int, n_fit: int = 4, write: bool = True):
    """Run at tau, tau/2, ... and fit orders; returns (table, orders)."""
    case = get_case(config.case)
    if case.exact is None:
        raise ValueError(f"case {config.case!r} has no exact solution")
    if n_refinements < 0:
        raise ValueError("the number of refinements must be nonnegative")
    tau0 = config.tau or case.tau
    mesh = case.mesh(_resolution(config, case))
    table = []
    for j in range(n_refinements + 1):
        res = run(replace(config, tau=tau0 / 2**j, cadence=0), write=False, mesh=mesh)
        table.append((res.scheme.cfg.tau, dg.manufactured_errors(res.state, case.exact, res.scheme.disc.rule)))
    orders = dg.fit_orders(table, n_fit)
    out = output_root(config) if write else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        dg.write_convergence(out / "convergence.csv", table, orders)
    return table, orders


# -- comparison ------------------------------------------------------------------------------


def relative_l2(a: np.ndarray, b: np.ndarray, dx: np.ndarray) -> float:
    """||a - b|| / ||b|| for quadrature-point data."""
    num = np.sum(((a - b) ** 2).reshape(dx.shape + (-1,)).sum(-1) * dx)
    den = np.sum((b**2).reshape(dx.shape + (-1,)).sum(-1) * dx)
    return float(math.sqrt(num / den)) if den > 0 else float(math.sqrt(num))


def compare_states(a: FlowState, b: FlowState, rule) -> dict:
    """Relative L2 differences of alpha_1 and of the mean-free pressure."""
    mesh = a.p.space.mesh
    if b.p.space.mesh is not mesh and not (
        b.p.space.mesh.nodes.shape == mesh.nodes.shape
        and np.array_equal(b.p.space.mesh.nodes, mesh.nodes)
        and np.array_equal(b.p.space.mesh.elements, mesh.elements)
    ):
        raise ValueError("states live on different meshes")
    dx = geometry(mesh, rule).dx
    area = dx.sum()
    pa, pb_ = a.p.value_at(rule), b.p.value_at(rule)
    pa = pa - np.sum(pa * dx) / area
    pb_ = pb_ - np.sum(pb_ * dx) / area
    return {
        "alpha1": relative_l2(a.alpha_qp(0, rule)[0], b.alpha_qp(0, rule)[0], dx),
        "p": relative_l2(pa, pb_, dx),
    }


def profiles(state: FlowState, stations=(0.0, 0.1, 0.2, 0.3, 0.4, 0.5), n: int = 81) -> dict:
    """alpha_1 and p along vertical lines x = const of the rectangle."""
    nodes = state.p.space.mesh.nodes
    y = np.linspace(nodes[:, 1].min(), nodes[:, 1].max(), n)
    a1 = state.alpha(0)
    out = {"y": y.tolist()}
    for x in stations:
        pts = np.column_stack([np.full(n, x), y])
        out[f"alpha1@x={x:g}"] = evaluate_at(a1, pts).tolist()
        out[f"p@x={x:g}"] = evaluate_at(state.p, pts).tolist()
    return out


def compare(config: RunConfig, monolithic_formulation: str = "sqrt_variable", write: bool = True) -> dict:
    """Run both schemes from identical data and report their differences.

    The monolithic run uses `monolithic_formulation` for the transport and
    the fractional-step run the case (or configured) formulation.
    """
    fs = run(replace(config, scheme="fractional_step"), write=False)
    mono_cfg = replace(config, scheme="monolithic", formulation=monolithic_formulation)
    mono = run(mono_cfg, write=False, mesh=fs.scheme.disc.mesh)
    rule = fs.scheme.disc.rule
    diff = compare_states(fs.state, mono.state, rule)
    e_fs = np.array([r["E_kinetic"] for r in fs.rows])
    e_mo = np.array([r["E_kinetic"] for r in mono.rows])
    diff["E_kinetic"] = float(np.linalg.norm(e_fs - e_mo) / np.linalg.norm(e_mo)) if np.any(e_mo) else float(
        np.linalg.norm(e_fs))
    report = {"t": fs.state.t, "differences": diff,
              "E_kinetic": {"fractional_step": e_fs.tolist(), "monolithic": e_mo.tolist()}}
    out = output_root(config) if write else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        report_out = dict(report)
        if fs.state.p.space.mesh.geometric_degree == 1 and config.case == "rayleigh_taylor":
            report_out["profiles"] = {"fractional_step": profiles(fs.state), "monolithic": profiles(mono.state)}
        with open(out / "compare.json", "w", encoding="utf-8", newline="\n") as fh:
            json.dump(report_out, fh, indent=2, sort_keys=True)
            fh.write("\n")
        dg.write_timeseries(out / "timeseries_fractional_step.csv", fs.rows)
        dg.write_timeseries(out / "timeseries_monolithic.csv", mono.rows)
    return report


def config_dict(config: RunConfig) -> dict:
    return asdict(config)
