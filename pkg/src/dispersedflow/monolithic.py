"""Semi-monolithic reference scheme.

After the same transport step as the fractional-step scheme, all phase
velocities and the pressure are found from one coupled linear system with
implicit symmetric-gradient viscosity, implicit drag coupling with
coefficients frozen at the old level, the pressure gradient weighted by
alpha^{n+1}, and the weak constraint <sum_k alpha_k u_k, grad q> = 0.  A
scalar multiplier fixes the pressure mean.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import linalg
from .fem.assembly import assemble_local, coupling_matrix, load_vector, local_mass, mass_matrix, stiffness_matrix
from .fem.constraints import apply_dirichlet
from .fem.space import Field
from .fractional_step import FractionalStepScheme, SimulationError
from .problem import Discretization, FlowState, Problem, SchemeConfig

SOLVERS = ("direct", "gmres")


@dataclass
class BlockSystem:
    """Coupled system with unknowns [u_1 | ... | u_M | p | multiplier]."""

    matrix: sp.csr_matrix
    rhs: np.ndarray
    n_velocity: int
    n_pressure: int
    n_phases: int
    alphas: list = field(default_factory=list, repr=False)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def split(self, x: np.ndarray):
        nv = self.n_velocity
        us = [x[k * nv:(k + 1) * nv] for k in range(self.n_phases)]
        p = x[self.n_phases * nv:self.n_phases * nv + self.n_pressure]
        return us, p


class MonolithicScheme(FractionalStepScheme):
    """Coupled velocity-pressure stepper; requires velocity degree above
    pressure degree (Taylor-Hood)."""

    name = "monolithic"

    def __init__(self, problem: Problem, cfg: SchemeConfig, disc: Discretization | None = None,
                 solver: str = "direct"):
        if cfg.velocity_degree <= cfg.pressure_degree:
            raise ValueError("the monolithic scheme needs a Taylor-Hood pair (velocity degree above pressure degree)")
        if solver not in SOLVERS:
            raise ValueError(f"unknown saddle-point solver {solver!r}; expected one of {SOLVERS}")
        super().__init__(problem, cfg, disc)
        self.solver = solver

    def assemble(self, state: FlowState, var_np1) -> BlockSystem:
        d, pb, cfg, rule = self.disc, self.problem, self.cfg, self.disc.rule
        M = pb.n_phases
        Xs, n = d.Xs, d.Xs.n_scalar
        nv, npr = 2 * n, d.Y.n_scalar
        a1s, a0s = self._alphas(var_np1), self._alphas(state.var)
        gammas = self.drag_coefficients(state, a0s)
        x = d.geo.x
        t1 = state.t + cfg.tau
        blocks = [[None] * (M + 2) for _ in range(M + 2)]
        rhs = np.zeros(M * nv + npr + 1)
        for k, ph in enumerate(pb.phases):
            a1, a0 = a1s[k], a0s[k]
            w = state.u[k].value_at(rule)
            drag_total = sum(gammas[(k, l)] for l in range(M) if l != k) if M > 1 else 0.0
            A = self.momentum_matrix(k, a1, a0, w)
            if M > 1:
                A = A + assemble_local(Xs, Xs, local_mass(Xs, rule, drag_total))
            vec = [[None, None], [None, None]]
            for a in range(2):
                for c in range(2):
                    T = coupling_matrix(Xs, Xs, rule, ph.mu * a1, trial_derivative=a, test_derivative=c)
                    vec[a][c] = T + A if a == c else T
            blocks[k][k] = sp.bmat(vec)
            for l in range(M):
                if l != k:
                    G = assemble_local(Xs, Xs, local_mass(Xs, rule, gammas[(k, l)]))
                    blocks[k][l] = sp.block_diag([-G, -G])
            # <alpha^{n+1} v, grad q>
            Bk = sp.hstack([coupling_matrix(Xs, d.Y, rule, a1, None, c) for c in range(2)])
            blocks[M][k] = Bk
            blocks[k][M] = Bk.T
            f = (ph.rho / cfg.tau) * a0[..., None] * state.u[k].value_at(rule)
            f += ph.rho * a1[..., None] * ph.body_force(x[..., 0], x[..., 1], t1)
            rhs[k * nv:(k + 1) * nv] = np.concatenate([load_vector(Xs, rule, f=f[..., c]) for c in range(2)])
        wcol = sp.csr_matrix(d.pressure_weights[:, None])
        blocks[M][M + 1] = wcol
        blocks[M + 1][M] = wcol.T
        blocks[M + 1][M + 1] = sp.csr_matrix((1, 1))
        blocks[M][M] = sp.csr_matrix((npr, npr))
        A = sp.bmat(blocks, format="csr")
        dofs, vals = [], []
        for k in range(M):
            dk, vk = d.constraints(k, t1).resolve(d.X)
            dofs.append(dk + k * nv)
            vals.append(vk)
        A, rhs = apply_dirichlet(A, rhs, np.concatenate(dofs), np.concatenate(vals))
        return BlockSystem(A, rhs, nv, npr, M, a1s)

    def _solve(self, system: BlockSystem, x0=None) -> np.ndarray:
        if self.solver == "direct":
            return linalg.solve_direct(system.matrix, system.rhs)
        return self._solve_gmres(system, x0)

    def _solve_gmres(self, system: BlockSystem, x0=None) -> np.ndarray:
        """Restarted GMRES with a block upper-triangular preconditioner.

        The velocity block is approximated by sparse LU factors of its
        diagonal (phase, component) sub-blocks.  The Schur complement uses a
        Cahouet-Chabard-type inverse: the weighted Poisson operator with
        coefficient sum_k alpha_k / rho_k scaled by tau, plus a lumped mass
        matrix weighted by sum_k alpha_k / mu_k.
        """
        d, cfg, rule = self.disc, self.cfg, self.disc.rule
        A = system.matrix.tocsr()
        n, nv, npr, M = d.Xs.n_scalar, system.n_velocity, system.n_pressure, system.n_phases
        nvt = M * nv
        blocks = [spla.splu(A[i:i + n, i:i + n].tocsc()) for i in range(0, nvt, n)]
        Bt = A[:nvt, nvt:nvt + npr]
        coef_k = np.zeros(d.dx.shape)
        coef_m = np.zeros(d.dx.shape)
        for a, ph in zip(system.alphas, self.problem.phases):
            coef_k += a / ph.rho
            coef_m += a / ph.mu
        K = cfg.tau * stiffness_matrix(d.Y, rule, coef_k)
        mass = mass_matrix(d.Y, rule)
        shift = 1e-10 * abs(K.diagonal()).max() / mass.diagonal().max()
        K_lu = spla.splu((K + shift * mass).tocsc())
        inv_m = 1.0 / load_vector(d.Y, rule, f=coef_m)

        def apply(r):
            out = np.empty_like(r)
            rp = r[nvt:nvt + npr]
            p = -(K_lu.solve(rp) + inv_m * rp)
            out[nvt:nvt + npr] = p
            ru = r[:nvt] - Bt @ p
            for j, lu in enumerate(blocks):
                out[j * n:(j + 1) * n] = lu.solve(ru[j * n:(j + 1) * n])
            out[nvt + npr:] = r[nvt + npr:]
            return out

        P = spla.LinearOperator(A.shape, matvec=apply, dtype=float)
        x, _ = spla.gmres(A, system.rhs, rtol=cfg.solver.rtol, atol=cfg.solver.atol, restart=cfg.solver.restart,
                          maxiter=cfg.solver.maxiter, M=P, x0=x0)
        return linalg._accept(A, x, system.rhs, cfg.solver, "GMRES (saddle point)")

    def advance(self, state: FlowState, psi_old=None):
        """One coupled step; returns the new state and ``None`` for the ledger."""
        n1 = state.step + 1
        try:
            var = self.transport_step(state)
        except linalg.SolverError as err:
            raise SimulationError(f"transport solve failed: {err}", n1) from err
        self._check_finite(var, "volume fraction", n1)
        self.alpha_min = min(self.alpha_min, self._alpha_min(var))
        system = self.assemble(state, var)
        try:
            x = self._solve(system)
        except linalg.SolverError as err:
            raise SimulationError(f"saddle-point solve failed: {err}", n1) from err
        us, p = system.split(x)
        d = self.disc
        u = [Field(d.X, uk.copy()) for uk in us]
        self._check_finite(u + [Field(d.Y, p)], "solution", n1)
        qp = [uk.value_at(d.rule) for uk in u]
        new = FlowState(state.t + self.cfg.tau, n1, state.formulation, Field(d.Y, p.copy()), var, u, qp,
                        [uk.copy() for uk in u])
        return new, None

    def run(self, state: FlowState, n_steps: int | None = None, callback=None):
        n_steps = self.cfg.n_steps if n_steps is None else n_steps
        for _ in range(n_steps):
            state, _ = self.advance(state)
            if callback is not None:
                callback(state, None)
        return state, []


def constraint_residual(scheme: MonolithicScheme, state: FlowState) -> np.ndarray:
    """<sum_k alpha_k u_k, grad q_i> for every pressure basis function."""
    d, rule = scheme.disc, scheme.disc.rule
    flux = np.zeros(d.dx.shape + (2,))
    for k in range(state.n_phases):
        flux += state.alpha_qp(k, rule)[0][..., None] * state.u[k].value_at(rule)
    return load_vector(d.Y, rule, flux=flux)
