"""Time-marching driver: boundary conditions, stage sequencing, run loop.

One step of either model walks the same four stages: explicit transport on
the dual grid, implicit relaxation of the algebraic sources (with the wall
variant of the distortion update where walls are present), the finite-element
pressure solve on the primal vertices (preceded, for the weakly compressible
model, by the dual-to-primal interpolation of the intermediate pressure), and
the momentum correction by the new pressure gradient.

Boundary handling: periodic pairs are merged in the mesh, so they need no
runtime work.  Wall and strong-Dirichlet cells are pinned before the
transport stage and again on the intermediate state, so the pressure solve
sees the prescribed data; the correction is applied everywhere, which keeps
the corrected field exactly compatible with the discrete weak divergence
(the residual equals the CG residual), and the pins are reasserted when the
next step begins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import transport as tr
from .pressure import PressureSolver
from .relaxation import implicit_source_step, pressure_source_eval, \
    wall_distortion_step
from .state import (Fields, IA, IJ, IM, IP, IRHO, NV, ModelParams,
                    temperature, total_energy)

BC_KINDS = ("periodic", "dirichlet-strong", "dirichlet-weak", "wall",
            "moving-wall")


class ConfigurationError(ValueError):
    """Inconsistent or incomplete run description."""


@dataclass
class BCSpec:
    """Boundary treatment for one tag.

    ``state`` holds the prescribed primitive values for Dirichlet kinds as a
    dict with keys among rho/u/p/A/J (missing entries keep the initial cell
    values); ``velocity`` is the wall velocity for moving walls.
    ``pressure`` optionally pins the primal-vertex pressure on that boundary.
    """

    kind: str
    velocity: tuple = (0.0, 0.0, 0.0)
    state: dict | None = None
    pressure: float | None = None

    def __post_init__(self):
        if self.kind not in BC_KINDS:
            raise ConfigurationError(f"unknown boundary kind {self.kind!r}")


@dataclass
class StepDiagnostics:
    t: float
    dt: float
    mass: float
    momentum: tuple
    energy: float
    max_speed: float
    div_residual: float = np.nan
    cg_iterations: int = 0


class Simulation:
    """Bound solver state: mesh pair, parameters, boundary plumbing."""

    def __init__(self, primal, dual, params, bcs=None, transport_cfg=None,
                 cg_tol=1e-10, cg_maxiter=4000, newton_tol=1e-10,
                 relax_rtol=1e-3, relax_max_substeps=64,
                 relax_integrator="auto", energy_diagnostics=True):
        self.primal = primal
        self.dual = dual
        self.params = params
        self.cfg = transport_cfg or tr.TransportConfig()
        self.cg_tol = cg_tol
        self.cg_maxiter = cg_maxiter
        self.newton_tol = newton_tol
        self.relax_rtol = relax_rtol
        self.relax_max_substeps = relax_max_substeps
        self.relax_integrator = relax_integrator
        self.energy_diagnostics = energy_diagnostics
        self.ps = PressureSolver(primal, dual)
        self.ps.set_gamma(params.gamma)
        self.bcs = dict(bcs or {})
        self._index_boundaries()

    # ------------------------------------------------------------------
    # boundary plumbing

    def _index_boundaries(self):
        d = self.dual
        tags = set(int(t) for t in np.unique(d.be_tag)) if d.be_cell.size \
            else set()
        missing = tags - set(self.bcs)
        if missing:
            raise ConfigurationError(
                f"boundary tags {sorted(missing)} have no BCSpec")
        for tag, bc in self.bcs.items():
            if bc.kind == "periodic" and tag in tags:
                raise ConfigurationError(
                    f"tag {tag} marked periodic but still has boundary "
                    f"edges; pair the mesh with pair_periodic first")

        wall_sel = np.zeros(d.be_cell.shape[0], dtype=bool)
        self._wall_velocity = {}
        self._ghost_spec = {}
        self._pressure_pins = {}
        self._flux_active = np.zeros(d.be_cell.shape[0], dtype=bool)
        for tag, bc in self.bcs.items():
            sel = d.be_tag == tag
            if bc.kind in ("wall", "moving-wall"):
                wall_sel |= sel
                self._wall_velocity[tag] = np.asarray(bc.velocity, float)
            elif bc.kind == "dirichlet-weak":
                self._flux_active |= sel
            if bc.pressure is not None:
                self._pressure_pins[tag] = float(bc.pressure)

        self.wall_cells = np.unique(d.be_cell[wall_sel])
        # per-wall-cell velocity (last tag wins on corner cells)
        self.wall_u = np.zeros((self.wall_cells.size, 3))
        for tag, u in self._wall_velocity.items():
            sel = np.isin(self.wall_cells, d.be_cell[d.be_tag == tag])
            self.wall_u[sel] = u[:3] if u.size >= 3 else np.r_[u, 0.0]

        strong_sel = np.zeros(d.be_cell.shape[0], dtype=bool)
        for tag, bc in self.bcs.items():
            if bc.kind == "dirichlet-strong":
                strong_sel |= d.be_tag == tag
        self.strong_cells = np.unique(d.be_cell[strong_sel])
        self.pinned_Q = None        # captured from the initial fields
        self.ghost_Q = None
        self.normal_momentum = np.zeros(d.be_cell.shape[0])
        self._captured = False

        if self._pressure_pins:
            idx = []
            val = []
            for tag, pval in self._pressure_pins.items():
                vs = np.unique(d.vert_canon[d.be_verts[d.be_tag == tag]])
                idx.append(vs)
                val.append(np.full(vs.size, pval))
            self.pressure_dirichlet = (np.concatenate(idx),
                                       np.concatenate(val))
        else:
            self.pressure_dirichlet = None

    def capture_boundary_state(self, fields):
        """Freeze the prescribed boundary data from the (initial) fields.

        Strong-Dirichlet cells keep these packed values for the whole run;
        weak-Dirichlet ghosts are built from the same snapshot overridden by
        any constants in the BCSpec.
        """
        self._captured = True
        Q = fields.pack()
        d = self.dual
        if self.strong_cells.size:
            self.pinned_Q = Q[self.strong_cells].copy()
            for tag, bc in self.bcs.items():
                if bc.kind != "dirichlet-strong" or not bc.state:
                    continue
                tagged = np.isin(self.strong_cells,
                                 d.be_cell[d.be_tag == tag])
                self.pinned_Q[tagged] = _state_to_packed(
                    bc.state, self.pinned_Q[tagged])
        else:
            self.pinned_Q = None
        d = self.dual
        nbe = d.be_cell.shape[0]
        self.ghost_Q = None
        if np.any(self._flux_active):
            self.ghost_Q = Q[d.be_cell].copy()
            for tag, bc in self.bcs.items():
                if bc.kind != "dirichlet-weak" or not bc.state:
                    continue
                sel = d.be_tag == tag
                self.ghost_Q[sel] = _state_to_packed(bc.state,
                                                     self.ghost_Q[sel])
        # prescribed normal momentum for the pressure boundary integral
        self.normal_momentum = np.zeros(nbe)
        if nbe:
            nhat = d.be_eta / np.linalg.norm(d.be_eta, axis=1)[:, None]
            Qb = Q[d.be_cell]
            for tag, bc in self.bcs.items():
                sel = d.be_tag == tag
                if bc.kind in ("wall", "moving-wall"):
                    u = np.asarray(bc.velocity, float)[:2]
                    self.normal_momentum[sel] = (Qb[sel, IRHO]
                                                 * (nhat[sel] @ u))
                elif bc.kind in ("dirichlet-strong", "dirichlet-weak"):
                    src = self.ghost_Q[sel] if self.ghost_Q is not None \
                        else Qb[sel]
                    if bc.kind == "dirichlet-strong" and bc.state:
                        src = _state_to_packed(bc.state, src.copy())
                    self.normal_momentum[sel] = np.einsum(
                        "ed,ed->e", src[:, 1:3], nhat[sel])

    def apply_bcs(self, fields):
        """Pin wall velocities and strong-Dirichlet states in place."""
        if self.wall_cells.size:
            fields.m[self.wall_cells] = (fields.rho[self.wall_cells, None]
                                         * self.wall_u)
        if self.pinned_Q is not None:
            fields.unpack(self._pin(fields.pack()))

    def _pin(self, Q):
        if self.wall_cells.size:
            Q[self.wall_cells, IM] = (Q[self.wall_cells, IRHO][:, None]
                                      * self.wall_u)
        if self.pinned_Q is not None:
            Q[self.strong_cells] = self.pinned_Q
        return Q

    def _bdata(self):
        return tr.BoundaryData(
            ghost_Q=self.ghost_Q,
            flux_active=self._flux_active,
            wall_cells=self.wall_cells if self.wall_cells.size else None)

    # ------------------------------------------------------------------
    # relaxation helpers

    def _wall_velocity_gradients(self, fields):
        """Nonconforming-P1 velocity gradients at the wall cells' parent
        elements, with the wall values already pinned at the boundary nodes."""
        u = fields.m / fields.rho[:, None]                 # (nc, 3)
        grad_psi = -2.0 * self.primal.grad_lambda
        vals = u[self.dual.tri_cells]                      # (nt, 3, 3)
        gT = np.einsum("tkc,tkd->tcd", vals, grad_psi)     # (nt, 3, 2)
        parent = self.dual.cell_tris[self.wall_cells, 0]
        return gT[parent]

    def _relax(self, fields, Q_star, dt, T_n):
        """Implicit source integration; returns (A1, J1)."""
        p = self.params
        A_star = Q_star[:, IA].reshape(-1, 3, 3)
        J_star = Q_star[:, IJ]
        needs_A = p.cs > 0.0
        needs_J = p.heat_flux and p.ch > 0.0
        if not needs_A and not needs_J:
            return A_star.copy(), J_star.copy()
        A1, J1 = implicit_source_step(
            A_star, J_star, Q_star[:, IRHO], T_n, dt, p,
            tol=self.newton_tol, rtol=self.relax_rtol,
            max_substeps=self.relax_max_substeps,
            integrator=self.relax_integrator)
        if needs_A and self.wall_cells.size:
            w = self.wall_cells
            du = self._wall_velocity_gradients(fields)
            Tw = T_n[w] if np.ndim(T_n) else T_n
            A1[w] = wall_distortion_step(
                A_star[w], fields.A[w], du, Q_star[w, IRHO], Tw, dt, p,
                tol=self.newton_tol, rtol=self.relax_rtol,
                max_substeps=self.relax_max_substeps,
                integrator=self.relax_integrator)
        return A1, J1

    # ------------------------------------------------------------------
    # single steps

    def step(self, fields, dt):
        if not self._captured:
            self.capture_boundary_state(fields)
        if self.params.incompressible:
            return self._step_incompressible(fields, dt)
        return self._step_weak(fields, dt)

    def _step_incompressible(self, fields, dt):
        d = self.dual
        ps = self.ps
        self.apply_bcs(fields)
        Q = fields.pack()

        Q_star, lam = tr.transport_update(self.primal, d, Q, self.params,
                                          self.cfg, dt,
                                          p_vertex=fields.p_vertex,
                                          bdata=self._bdata())
        self._stash_cfl_bound(lam)
        Q_star = self._pin(Q_star)

        A1, _ = self._relax(fields, Q_star, dt, T_n=0.0)

        rhou_elem = ps.interp_dual_to_primal(Q_star[:, 1:3])
        rhs = ps.assemble_rhs_incompressible(rhou_elem, dt,
                                             self.normal_momentum
                                             if d.be_cell.size else None)
        project = self.pressure_dirichlet is None
        dp, iters = ps.cg_solve(ps.apply_compatible_stiffness, rhs,
                                tol=self.cg_tol, maxiter=self.cg_maxiter,
                                diag=ps.jacobi_diag(),
                                project_constants=project,
                                dirichlet=self.pressure_dirichlet)
        m1 = ps.correct_momentum(Q_star[:, IM], dp, dt)

        # weak-divergence residual of the corrected field (projection check)
        rhou1 = ps.interp_dual_to_primal(m1[:, :2])
        rhs1 = ps.assemble_rhs_incompressible(rhou1, dt,
                                              self.normal_momentum
                                              if d.be_cell.size else None)
        if project:
            rhs1 = ps.project_range(rhs1)
        scale = np.linalg.norm(rhs) if np.linalg.norm(rhs) > 0 else 1.0
        div_residual = np.linalg.norm(rhs1) / scale

        fields.m = m1
        fields.A = A1
        fields.p_vertex = fields.p_vertex + dp
        fields.p = ps.vertex_to_dual(fields.p_vertex)
        return self._diagnostics(fields, dt, lam, div_residual, iters)

    def _step_weak(self, fields, dt):
        d = self.dual
        ps = self.ps
        p = self.params
        self.apply_bcs(fields)
        Q = fields.pack()

        rho_n = fields.rho.copy()
        pv_n = fields.p_vertex
        T_n = temperature(rho_n, fields.p, p)
        u_elem_n = ps.interp_dual_to_primal(fields.m / rho_n[:, None])

        Q_star, lam = tr.transport_update(self.primal, d, Q, p, self.cfg, dt,
                                          p_vertex=pv_n, bdata=self._bdata())
        self._stash_cfl_bound(lam)
        Q_star = self._pin(Q_star)

        A1, J1 = self._relax(fields, Q_star, dt, T_n)

        ptilde_p = Q_star[:, IP].copy()
        if (p.cs > 0.0 or (p.heat_flux and p.ch > 0.0)) and p.gamma > 1.0:
            ptilde_p = ptilde_p + dt * pressure_source_eval(
                Q_star[:, IRHO], A1, J1, T_n, p)

        # interpolation stage
        ptp_elem = ps.interp_dual_to_primal(ptilde_p)
        ptrho_elem = ps.compute_ptilde_rho(rho_n, pv_n, u_elem_n, dt)
        ptilde_elem = ptp_elem + ptrho_elem

        inv_csq = 1.0 / ps.sound_speed_sq_elem(rho_n, pv_n)
        rhou_elem = ps.interp_dual_to_primal(Q_star[:, 1:3])
        rhs = ps.assemble_rhs_weak(ptilde_elem, inv_csq, rhou_elem, dt,
                                   self.normal_momentum
                                   if d.be_cell.size else None)
        op = lambda v: ps.apply_weak_compatible(v, inv_csq, dt)
        pv1, iters = ps.cg_solve(op, rhs, x0=pv_n, tol=self.cg_tol,
                                 maxiter=self.cg_maxiter,
                                 diag=ps.jacobi_diag(inv_csq, dt),
                                 dirichlet=self.pressure_dirichlet)

        m1 = ps.correct_momentum(Q_star[:, IM], pv1, dt)

        fields.rho = Q_star[:, IRHO].copy()
        fields.m = m1
        fields.A = A1
        fields.J = J1
        fields.p_vertex = pv1
        fields.p = ps.vertex_to_dual(pv1)
        return self._diagnostics(fields, dt, lam, np.nan, iters)

    def _diagnostics(self, fields, dt, lam, div_residual, cg_iters):
        d = self.dual
        mass = float(d.areas @ fields.rho)
        mom = d.areas @ fields.m[:, :2]
        u = fields.m / fields.rho[:, None]
        if self.energy_diagnostics:
            E = total_energy(fields.rho, u, fields.A, fields.J, fields.p,
                             self.params)
            energy = float(d.areas @ (fields.rho * E))
        else:
            energy = np.nan
        return StepDiagnostics(t=np.nan, dt=dt, mass=mass,
                               momentum=(float(mom[0]), float(mom[1])),
                               energy=energy,
                               max_speed=float(np.abs(u).max()),
                               div_residual=div_residual,
                               cg_iterations=cg_iters)

    def _stash_cfl_bound(self, lam):
        pos = lam > 0.0
        self.r_over_lam = float(np.min(self.dual.r[pos] / lam[pos])) \
            if np.any(pos) else np.inf

    # ------------------------------------------------------------------

    def compute_dt(self, fields, cfl, dt_max=np.inf):
        return tr.compute_dt(self.dual, fields.pack(), self.params, cfl,
                             dt_max=dt_max, ghost_Q=self.ghost_Q)


def _state_to_packed(state, base):
    """Overlay primitive constants onto packed rows."""
    Q = base
    if "rho" in state:
        Q[:, IRHO] = state["rho"]
    if "u" in state:
        u = np.zeros(3)
        u[:len(state["u"])] = state["u"]
        Q[:, IM] = Q[:, IRHO][:, None] * u
    if "p" in state:
        Q[:, IP] = state["p"]
    if "A" in state:
        Q[:, IA] = np.asarray(state["A"], float).reshape(9)
    if "J" in state:
        J = np.zeros(3)
        J[:len(state["J"])] = state["J"]
        Q[:, IJ] = J
    return Q


def run(sim, fields, t_end, cfl=0.5, dt_max=np.inf, dt_fixed=None,
        max_steps=10**7, observer=None):
    """March ``fields`` to ``t_end``; returns the diagnostics series.

    The step size follows the CFL bound of the explicit stage (or the fixed
    override), clipped to land on ``t_end`` exactly.  ``observer(t, step,
    fields, diag)`` runs after every step.
    """
    if t_end < 0:
        raise ConfigurationError("end time must be nonnegative")
    if not sim._captured:
        sim.capture_boundary_state(fields)
    history = []
    t = 0.0
    dt_prev = None
    for step in range(max_steps):
        if t >= t_end - 1e-14 * max(t_end, 1.0):
            break
        if dt_fixed is not None:
            dt = dt_fixed
        else:
            if dt_prev is None:
                dt = sim.compute_dt(fields, cfl, dt_max)
            else:
                # signal speeds of the state just stepped from; clip the
                # growth so the one-step staleness cannot overshoot the CFL
                dt = min(cfl * sim.r_over_lam, dt_max, 1.2 * dt_prev)
            if not np.isfinite(dt) or dt <= 0.0:
                raise ConfigurationError(
                    "no finite CFL step; set dt_max or dt_fixed")
        dt = min(dt, t_end - t)
        diag = sim.step(fields, dt)
        dt_prev = dt
        t += dt
        diag.t = t
        history.append(diag)
        if observer is not None:
            observer(t, step, fields, diag)
    sim.apply_bcs(fields)
    return history
