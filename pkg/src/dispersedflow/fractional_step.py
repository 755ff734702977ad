"""Segregated IMEX pressure-correction scheme for M dispersed phases.

One step transports every volume fraction, solves one advection-diffusion
system per phase (the same matrix for each Cartesian component), one
weighted pressure Poisson problem, and finally forms the end-of-step
velocities.  The end-of-step velocities are kept at quadrature points, where
the projection formula holds pointwise; this makes the mean end-of-step
velocity orthogonal to every pressure gradient up to solver tolerance.  Their
alpha-weighted L2 projection onto the velocity space is kept for output.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import linalg, transport
from .fem.assembly import (
    assemble_local,
    coupling_matrix,
    load_vector,
    local_advection,
    local_mass,
    local_stiffness,
    mass_matrix,
    stiffness_matrix,
)
from .fem.constraints import apply_dirichlet
from .fem.space import Field, interpolate
from .problem import Discretization, FlowState, Problem, SchemeConfig


class SimulationError(RuntimeError):
    """A step failed; ``step`` is the index of the step being computed."""

    def __init__(self, message: str, step: int):
        super().__init__(f"step {step}: {message}")
        self.step = step


class AlphaWarning(UserWarning):
    """A volume fraction dropped below the monitoring threshold."""


@dataclass(frozen=True)
class LedgerEntry:
    """Energy balance of one step n -> n+1.

    ``residual`` is sum(psi) - sum(psi_old) + viscous + drag - rhs, which
    the stability estimate bounds by zero; ``scale`` is the largest of the
    terms and ``slack`` the relative tolerance applied to it.
    """

    step: int
    t: float
    psi: tuple
    psi_old: tuple
    viscous: float
    drag: float
    rhs: float
    beta: float
    alpha_min: float
    residual: float
    scale: float
    slack: float

    @property
    def psi_total(self) -> float:
        return float(sum(self.psi))

    @property
    def flagged(self) -> bool:
        return self.residual > self.slack * self.scale


def _sq(a: np.ndarray) -> np.ndarray:
    """Squared Euclidean/Frobenius norm over the trailing axes of (E, Q, ...)."""
    return (a**2).reshape(a.shape[0], a.shape[1], -1).sum(-1)


class FractionalStepScheme:
    """Time stepper bound to one problem, configuration and mesh.

    The scheme keeps the running maximum of the measured drag ratio beta and
    the minimum volume fraction seen so far; both enter the stability bound.
    """

    name = "fractional_step"

    def __init__(self, problem: Problem, cfg: SchemeConfig, disc: Discretization | None = None):
        self.problem = problem
        self.cfg = cfg
        self.disc = disc or Discretization(problem.mesh, cfg, problem.bcs)
        self.beta = 0.0
        self.alpha_min = np.inf

    # -- setup -----------------------------------------------------------------

    @property
    def formulation(self) -> str:
        return self.cfg.transport.formulation

    def initial_state(self, alpha0, velocity0, pressure0=None, t0: float = 0.0) -> FlowState:
        """Step 0: interpolate the data, set u_hat = u and the pressure.

        ``alpha0(k, x, y)`` and ``velocity0(k, x, y, t)`` are analytic; the
        pressure is interpolated from ``pressure0(x, y, t)`` when given and
        otherwise computed by :meth:`initialize_pressure`.
        """
        d = self.disc
        var, u = [], []
        for k in range(self.problem.n_phases):
            a = interpolate(d.Z, lambda x, y, k=k: alpha0(k, x, y))
            var.append(transport.variable_of(self.formulation, a))
            u.append(interpolate(d.X, lambda x, y, t, k=k: velocity0(k, x, y, t), t0))
        state = FlowState(t0, 0, self.formulation, Field(d.Y), var, u,
                          [ui.value_at(d.rule) for ui in u], [ui.copy() for ui in u])
        if pressure0 is None:
            state.p = self.initialize_pressure(state)
        else:
            p = interpolate(d.Y, pressure0, t0)
            w = d.pressure_weights
            state.p = Field(d.Y, p.values - (w @ p.values) / w.sum())
        self.alpha_min = min(self.alpha_min, self._alpha_min(state.var))
        return state

    def initialize_pressure(self, state: FlowState) -> Field:
        """Pressure from the Neumann problem built on the initial data.

        Solves <(sum alpha_k / rho_k) grad p, grad q> = sum_k <f_k, grad q>
        where f_k collects convection, viscous stress, body force and drag
        per unit mass, evaluated from the finite element fields.
        """
        d, pb, rule = self.disc, self.problem, self.disc.rule
        x = d.geo.x
        alphas = [state.alpha_qp(k, rule, gradient=True) for k in range(pb.n_phases)]
        us = [uk.at(rule) for uk in state.u]
        flux = np.zeros(d.dx.shape + (2,))
        coef = np.zeros(d.dx.shape)
        for k, ph in enumerate(pb.phases):
            a, ga = alphas[k]
            u, gu = us[k]
            hu = state.u[k].hessian_at(rule)  # [c, a, b] = d2 u_c / dx_a dx_b
            div = gu[..., 0, 0] + gu[..., 1, 1]
            conv = (u * np.einsum("eqb,eqb->eq", ga, u)[..., None]
                    + a[..., None] * np.einsum("eqab,eqb->eqa", gu, u)
                    + (a * div)[..., None] * u)
            lap = hu[..., 0, 0] + hu[..., 1, 1]
            grad_div = np.einsum("eqbba->eqa", hu)
            visc = (ph.mu / ph.rho) * (np.einsum("eqb,eqab->eqa", ga, gu + np.swapaxes(gu, -1, -2))
                                       + a[..., None] * (lap + grad_div))
            f = -conv + visc + a[..., None] * ph.body_force(x[..., 0], x[..., 1], state.t)
            for l in range(pb.n_phases):
                if l != k:
                    rel = u - us[l][0]
                    gam = pb.drag.coefficient(k, l, state.t, a, alphas[l][0], np.linalg.norm(rel, axis=-1))
                    f -= (gam / ph.rho)[..., None] * rel
            flux += f
            coef += a / ph.rho
        K = stiffness_matrix(d.Y, rule, coef)
        b = load_vector(d.Y, rule, flux=flux)
        return Field(d.Y, linalg.solve_singular_neumann(K, b, d.pressure_weights, self.cfg.solver))

    # -- helpers ---------------------------------------------------------------

    def _alpha_min(self, var) -> float:
        """Smallest volume fraction over dofs and quadrature points."""
        rule = self.disc.rule
        nodal = min(float(transport.alpha_of(self.formulation, v).values.min()) for v in var)
        qp = min(float(transport.alpha_at(self.formulation, v, rule, gradient=False)[0].min()) for v in var)
        return min(nodal, qp)

    def drag_coefficients(self, state: FlowState, alphas):
        """Capped drag coefficients at quadrature points for all ordered pairs."""
        pb = self.problem
        out = {}
        for k in range(pb.n_phases):
            for l in range(k + 1, pb.n_phases):
                speed = np.linalg.norm(state.uhat_qp[k] - state.uhat_qp[l], axis=-1)
                g = pb.drag.coefficient(k, l, state.t, alphas[k], alphas[l], speed)
                out[(k, l)] = out[(l, k)] = g
        return out

    def _alphas(self, var):
        rule = self.disc.rule
        return [transport.alpha_at(self.formulation, v, rule, gradient=False)[0] for v in var]

    # -- the four steps --------------------------------------------------------

    def transport_step(self, state: FlowState) -> list:
        """Step 1: new transported variables of every phase."""
        tc = self.cfg.transport
        return [
            transport.step(tc.formulation, state.var[k], state.u[k], self.cfg.tau, chi=tc.chi,
                           rule=self.disc.rule, settings=self.cfg.solver)
            for k in range(self.problem.n_phases)
        ]

    def momentum_matrix(self, k: int, a1, a0, w) -> sp.csr_matrix:
        """Scalar momentum operator of phase k, shared by all components.

        Mass rho (a1 + a0) / (2 tau), convection by w in skew-symmetric form
        weighted by rho a1, and diffusion mu a1.
        """
        d, ph, tau = self.disc, self.problem.phases[k], self.cfg.tau
        local = (local_mass(d.Xs, d.rule, ph.rho * (a1 + a0) / (2 * tau))
                 + ph.rho * local_advection(d.Xs, d.rule, w, a1, skew=True)
                 + local_stiffness(d.Xs, d.rule, ph.mu * a1))
        return assemble_local(d.Xs, d.Xs, local)

    def momentum_rhs(self, k: int, state: FlowState, a1, a0, gammas, explicit_transpose: bool = True):
        """Right-hand side of phase k per component, shape (2, n_scalar)."""
        d, pb, tau, rule = self.disc, self.problem, self.cfg.tau, self.disc.rule
        ph = pb.phases[k]
        x = d.geo.x
        s = np.sqrt(a1 * a0)
        _, gp = state.p.at(rule)
        _, gu = state.u[k].at(rule)
        f = (ph.rho / tau) * a0[..., None] * state.uhat_qp[k]
        f += ph.rho * a1[..., None] * ph.body_force(x[..., 0], x[..., 1], state.t + tau)
        f -= s[..., None] * gp
        for l in range(pb.n_phases):
            if l != k:
                f -= gammas[(k, l)][..., None] * (state.uhat_qp[k] - state.uhat_qp[l])
        out = np.empty((2, d.Xs.n_scalar))
        for c in range(2):
            flux = -(ph.mu * s)[..., None] * gu[..., :, c] if explicit_transpose else None
            out[c] = load_vector(d.Xs, rule, f=f[..., c], flux=flux)
        return out

    def momentum_step(self, state: FlowState, var_np1, gammas=None) -> list:
        """Step 2: the velocities u^{n+1} of all phases."""
        d, pb, cfg = self.disc, self.problem, self.cfg
        a1s, a0s = self._alphas(var_np1), self._alphas(state.var)
        if gammas is None:
            gammas = self.drag_coefficients(state, a0s)
        t1 = state.t + cfg.tau
        out = []
        for k in range(pb.n_phases):
            w = state.u[k].value_at(d.rule)
            A = self.momentum_matrix(k, a1s[k], a0s[k], w)
            b = self.momentum_rhs(k, state, a1s[k], a0s[k], gammas, not cfg.implicit_viscous)
            cs = d.constraints(k, t1)
            try:
                if cfg.implicit_viscous:
                    out.append(self._implicit_viscous_solve(k, A, b, a1s[k], cs, state.u[k]))
                    continue
                comps = []
                for c in range(2):
                    dofs, vals = cs.component(d.X, c)
                    Ac, bc = apply_dirichlet(A, b[c], dofs, vals)
                    comps.append(linalg.solve_nonsymmetric(Ac, bc, cfg.solver, x0=state.u[k].components[c]))
            except linalg.SolverError as err:
                raise SimulationError(f"momentum solve of phase {k} failed: {err}", state.step + 1) from err
            out.append(Field.from_components(d.X, comps))
        return out

    def _implicit_viscous_solve(self, k, A, b, a1, cs, u_old) -> Field:
        """Vector solve with the transpose-gradient viscous term implicit."""
        d, mu = self.disc, self.problem.phases[k].mu
        # block (a, c) couples test component a with trial component c through
        # <mu a1 d_a u_c, d_c v_a>
        blocks = [[coupling_matrix(d.Xs, d.Xs, d.rule, mu * a1, trial_derivative=a, test_derivative=c)
                   + (A if a == c else 0) for c in range(2)] for a in range(2)]
        big = sp.bmat(blocks).tocsr()
        dofs, vals = cs.resolve(d.X)
        Ab, bb = apply_dirichlet(big, b.ravel(), dofs, vals)
        return Field(d.X, linalg.solve_nonsymmetric(Ab, bb, self.cfg.solver, x0=u_old.values))

    def pressure_step(self, state: FlowState, var_np1, u_np1) -> Field:
        """Step 3: p^{n+1} from the weighted Poisson problem."""
        d, pb, tau, rule = self.disc, self.problem, self.cfg.tau, self.disc.rule
        a1s, a0s = self._alphas(var_np1), self._alphas(state.var)
        _, gp = state.p.at(rule)
        coef = np.zeros(d.dx.shape)
        old = np.zeros(d.dx.shape)
        flux = np.zeros(d.dx.shape + (2,))
        for k, ph in enumerate(pb.phases):
            coef += a1s[k] / ph.rho
            old += np.sqrt(a1s[k] * a0s[k]) / ph.rho
            flux += a1s[k][..., None] * u_np1[k].value_at(rule) / tau
        flux += old[..., None] * gp
        K = stiffness_matrix(d.Y, rule, coef)
        b = load_vector(d.Y, rule, flux=flux)
        try:
            x = linalg.solve_singular_neumann(K, b, d.pressure_weights, self.cfg.solver, x0=state.p.values)
        except linalg.SolverError as err:
            raise SimulationError(f"pressure solve failed: {err}", state.step + 1) from err
        return Field(d.Y, x)

    def projection_step(self, u_np1, p_n: Field, p_np1: Field, var_n, var_np1):
        """Step 4: end-of-step velocities at quadrature points and their
        alpha-weighted projections onto X."""
        d, pb, tau, rule = self.disc, self.problem, self.cfg.tau, self.disc.rule
        a1s, a0s = self._alphas(var_np1), self._alphas(var_n)
        _, g0 = p_n.at(rule)
        _, g1 = p_np1.at(rule)
        qp, fe = [], []
        for k, ph in enumerate(pb.phases):
            a1, a0 = a1s[k], a0s[k]
            if np.any(a1 <= 0):
                raise SimulationError(
                    f"volume fraction of phase {k} vanishes at a quadrature point; the weighted "
                    "projection is singular (check the alpha_min monitor)", -1)
            r = np.sqrt(a0 / a1)
            uh = u_np1[k].value_at(rule) + (tau / ph.rho) * (r[..., None] * g0 - g1)
            qp.append(uh)
            M = mass_matrix(d.Xs, rule, a1)
            comps = [linalg.solve_spd(M, load_vector(d.Xs, rule, f=a1 * uh[..., c]), self.cfg.solver,
                                      x0=u_np1[k].components[c]) for c in range(2)]
            fe.append(Field.from_components(d.X, comps))
        return qp, fe

    # -- energy ledger -----------------------------------------------------------

    def psi(self, state: FlowState) -> tuple:
        """Stability functional Psi_k of every phase."""
        d, tau, rule = self.disc, self.cfg.tau, self.disc.rule
        _, gp = state.p.at(rule)
        out = []
        for k, ph in enumerate(self.problem.phases):
            a = state.alpha_qp(k, rule)[0]
            _, gu = state.u[k].at(rule)
            e = ph.rho * np.sum(a * _sq(state.uhat_qp[k]) * d.dx)
            v = tau * ph.mu * np.sum(a * _sq(gu) * d.dx)
            p = tau**2 / ph.rho * np.sum(a * _sq(gp) * d.dx)
            out.append(float(e + v + p))
        return tuple(out)

    def _drag_ratio(self, alphas, gammas) -> float:
        """Largest drag ratio entering the drag estimate at this level.

        Both gamma_kl / (rho_k alpha_k) and gamma_kl / sqrt(rho_k rho_l
        alpha_k alpha_l) are bounded by D / (rho_min alpha_min); the
        estimate needs both.
        """
        pb = self.problem
        beta = 0.0
        for (k, l), g in gammas.items():
            if not np.any(g):
                continue
            rk, rl = pb.phases[k].rho, pb.phases[l].rho
            ak, al = alphas[k], alphas[l]
            with np.errstate(divide="ignore", invalid="ignore"):
                r1 = np.where(g > 0, g / (rk * ak), 0.0)
                r2 = np.where(g > 0, g / np.sqrt(rk * rl * ak * al), 0.0)
            beta = max(beta, float(np.max(r1)), float(np.max(r2)))
        return beta

    def ledger_entry(self, old: FlowState, new: FlowState, a0s, gammas, psi_old=None) -> LedgerEntry:
        d, pb, tau, rule = self.disc, self.problem, self.cfg.tau, self.disc.rule
        M = pb.n_phases
        psi_old = psi_old if psi_old is not None else self.psi(old)
        psi_new = self.psi(new)
        a1s = self._alphas(new.var)
        visc = 0.0
        kin_old = 0.0
        for k, ph in enumerate(pb.phases):
            _, g1 = new.u[k].at(rule)
            _, g0 = old.u[k].at(rule)
            mix = np.sqrt(a1s[k])[..., None, None] * g1 + np.sqrt(a0s[k])[..., None, None] * np.swapaxes(g0, -1, -2)
            visc += tau * ph.mu * np.sum(_sq(mix) * d.dx)
            kin_old += ph.rho * np.sum(a0s[k] * _sq(old.uhat_qp[k]) * d.dx)
        drag = 0.0
        for (k, l), g in gammas.items():
            drag += tau * np.sum(g * _sq(old.uhat_qp[k] - old.uhat_qp[l]) * d.dx)
        self.beta = max(self.beta, self._drag_ratio(a0s, gammas))
        rhs = (2 * tau * (M - 1) * self.beta) ** 2 * kin_old
        residual = sum(psi_new) - sum(psi_old) + visc + drag - rhs
        scale = max(sum(psi_new), sum(psi_old), visc, drag, rhs, np.finfo(float).tiny)
        return LedgerEntry(new.step, new.t, psi_new, tuple(psi_old), float(visc), float(drag), float(rhs),
                           self.beta, self.alpha_min, float(residual), float(scale), self.cfg.ledger_slack)

    # -- driver ------------------------------------------------------------------

    def advance(self, state: FlowState, psi_old=None):
        """One full step; returns the new state and its ledger entry."""
        cfg, n1 = self.cfg, state.step + 1
        try:
            var = self.transport_step(state)
        except linalg.SolverError as err:
            raise SimulationError(f"transport solve failed: {err}", n1) from err
        self._check_finite(var, "volume fraction", n1)
        amin = self._alpha_min(var)
        self.alpha_min = min(self.alpha_min, amin)
        if amin < cfg.alpha_min_warn:
            warnings.warn(f"step {n1}: minimum volume fraction {amin:.3e} is below {cfg.alpha_min_warn:.1e}",
                          AlphaWarning, stacklevel=2)
        a0s = self._alphas(state.var)
        gammas = self.drag_coefficients(state, a0s)
        u = self.momentum_step(state, var, gammas)
        self._check_finite(u, "velocity", n1)
        p = self.pressure_step(state, var, u)
        self._check_finite([p], "pressure", n1)
        try:
            uhat_qp, uhat = self.projection_step(u, state.p, p, state.var, var)
        except SimulationError as err:
            raise SimulationError(str(err).split(": ", 1)[1], n1) from err
        new = FlowState(state.t + cfg.tau, n1, state.formulation, p, var, u, uhat_qp, uhat)
        return new, self.ledger_entry(state, new, a0s, gammas, psi_old)

    @staticmethod
    def _check_finite(fields, what: str, step: int):
        for f in fields:
            if not np.all(np.isfinite(f.values)):
                raise SimulationError(f"non-finite {what} detected", step)

    def bound_constants(self, state0: FlowState, cap: float | None = None) -> dict:
        """Initial constants B_k and the Gronwall exponent rate.

        The rate is 4 [D (M - 1) / (rho_min alpha_min)]^2 with the measured
        alpha_min; the bound at time T is sum(B_k) exp(rate T tau).
        """
        d, pb, tau, rule = self.disc, self.problem, self.cfg.tau, self.disc.rule
        D = pb.drag.cap if cap is None else cap
        M = pb.n_phases
        c = D * (M - 1) / (pb.rho_min * self.alpha_min)
        _, gp = state0.p.at(rule)
        B = []
        for k, ph in enumerate(pb.phases):
            a = state0.alpha_qp(k, rule)[0]
            u, gu = state0.u[k].at(rule)
            B.append(float((1 + (2 * c * tau) ** 2) * ph.rho * np.sum(a * _sq(u) * d.dx)
                           + tau * ph.mu * np.sum(a * _sq(gu) * d.dx)
                           + tau**2 / ph.rho * np.sum(a * _sq(gp) * d.dx)))
        return {"B": B, "rate": 4 * c**2, "beta_bound": c / max(M - 1, 1)}

    def run(self, state: FlowState, n_steps: int | None = None, callback=None):
        """Advance `n_steps` steps (default to T); returns final state and ledger."""
        n_steps = self.cfg.n_steps if n_steps is None else n_steps
        ledger = []
        psi_old = self.psi(state)
        for _ in range(n_steps):
            state, entry = self.advance(state, psi_old)
            psi_old = entry.psi
            ledger.append(entry)
            if callback is not None:
                callback(state, entry)
        return state, ledger


def mean_divergence_residual(scheme, state: FlowState) -> np.ndarray:
    """Vector <sum_k alpha_k u_hat_k, grad q_i> over the pressure basis."""
    d, rule = scheme.disc, scheme.disc.rule
    flux = np.zeros(d.dx.shape + (2,))
    for k in range(state.n_phases):
        a = state.alpha_qp(k, rule)[0]
        flux += a[..., None] * state.uhat_qp[k]
    return load_vector(d.Y, rule, flux=flux)
