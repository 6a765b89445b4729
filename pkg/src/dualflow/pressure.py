"""Pressure stage: grid-transfer operators, P1 finite elements, CG, correction.

The pressure lives on primal vertices (merged across periodic pairs) and is
obtained from one of two weak problems discretised with continuous P1
elements: a pure-Neumann Laplacian for the incompressible model (solved for
the pressure increment, nullspace of constants projected out) and an SPD
mass-plus-stiffness operator, weighted by the local inverse squared sound
speed, for the weakly compressible one.  Both are solved matrix-free with a
Jacobi-preconditioned conjugate gradient.

The same class hosts the dual->primal interpolation (overlap-area weights),
the finite-volume evaluation of the density contribution to the intermediate
pressure, and the momentum correction by the elementwise P1 pressure
gradient, area-averaged back onto dual cells.
"""

from __future__ import annotations

import numpy as np


class PressureSolveError(RuntimeError):
    """CG failed to reach the requested residual."""


class PressureSolver:
    def __init__(self, primal, dual):
        self.primal = primal
        self.dual = dual
        self.nv = dual.n_vertices_eff
        self.tri_v = dual.vert_canon[primal.triangles]      # (nt, 3)
        self.grad = primal.grad_lambda                      # (nt, 3, 2)
        self.area = primal.areas

        # local P1 matrices: consistent mass |T|/12 (1 + delta_ab), stiffness
        # |T| grad_a . grad_b
        nt = primal.n_triangles
        self.M_loc = (self.area[:, None, None] / 12.0
                      * (np.ones((3, 3)) + np.eye(3)))
        self.K_loc = self.area[:, None, None] * np.einsum(
            "tad,tbd->tab", self.grad, self.grad)

        # lumped vertex weights (row sums of M); used for means and norms
        self.vertex_weight = np.zeros(self.nv)
        np.add.at(self.vertex_weight, self.tri_v.reshape(-1),
                  np.repeat(self.area / 3.0, 3))

        ov = dual.tri_overlap
        self.interp_w = ov / ov.sum(axis=1, keepdims=True)  # (nt, 3)

        be = dual.be_verts
        self.be_v = dual.vert_canon[be]                     # (nbe, 2)
        self.be_len = np.linalg.norm(dual.be_eta, axis=1)

    # ------------------------------------------------------------------
    # grid transfer

    def interp_dual_to_primal(self, values):
        """Overlap-area weighted average of dual-cell data onto elements.

        Exact for constants and bounded by the contributing values (the
        weights are a convex combination).
        """
        vals = np.asarray(values)[self.dual.tri_cells]      # (nt, 3, ...)
        if vals.ndim == 2:
            return np.einsum("tk,tk->t", self.interp_w, vals)
        return np.einsum("tk,tk...->t...", self.interp_w, vals)

    def vertex_mean_per_element(self, p_vertex):
        return p_vertex[self.tri_v].mean(axis=1)

    def vertex_to_dual(self, p_vertex):
        """Dual-cell pressure copy-back: overlap-weighted element means."""
        pk = self.vertex_mean_per_element(p_vertex)
        d = self.dual
        out = np.zeros(d.n_cells)
        valid = d.cell_tris >= 0
        w = np.where(valid, d.cell_tri_areas, 0.0)
        tri = np.where(valid, d.cell_tris, 0)
        out = (w * pk[tri]).sum(axis=1) / d.areas
        return out

    def elem_grad(self, p_vertex):
        """Constant P1 gradient of a vertex field on each element."""
        return np.einsum("tk,tkd->td", p_vertex[self.tri_v], self.grad)

    def cell_grad(self, p_vertex):
        """Pressure gradient per dual cell: parent-element P1 gradients
        weighted by the overlap areas."""
        gk = self.elem_grad(p_vertex)
        d = self.dual
        valid = d.cell_tris >= 0
        w = np.where(valid, d.cell_tri_areas, 0.0)
        tri = np.where(valid, d.cell_tris, 0)
        return np.einsum("cs,csd->cd", w, gk[tri]) / d.areas[:, None]

    # ------------------------------------------------------------------
    # intermediate pressure pieces (weakly compressible model)

    def sound_speed_sq_edges(self, rho_dual, p_vertex):
        """Squared sound speed per element, edge-overlap-weighted average of
        gamma p / rho with edge pressures from the two endpoint vertices."""
        gamma = self._gamma
        d = self.dual
        tv = self.tri_v
        p_edge = np.empty((tv.shape[0], 3))
        for k in range(3):
            p_edge[:, k] = 0.5 * (p_vertex[tv[:, (k + 1) % 3]]
                                  + p_vertex[tv[:, (k + 2) % 3]])
        rho_k = np.asarray(rho_dual)[d.tri_cells]
        return np.einsum("tk,tk->t", self.interp_w, gamma * p_edge / rho_k)

    def sound_speed_sq_elem(self, rho_dual, p_vertex):
        """Squared sound speed for the weak operator: gamma p_k / rho_k with
        vertex-mean pressure and interpolated density."""
        pk = self.vertex_mean_per_element(p_vertex)
        rk = self.interp_dual_to_primal(np.asarray(rho_dual))
        return self._gamma * pk / rk

    def compute_ptilde_rho(self, rho_dual, p_vertex, u_elem, dt):
        """Density advection contribution to the intermediate pressure,
        evaluated with a finite-volume divergence on each primal element."""
        d = self.dual
        csq = self.sound_speed_sq_edges(rho_dual, p_vertex)
        rho_k = np.asarray(rho_dual)[d.tri_cells]           # (nt, 3)
        flux = np.einsum("tk,tkd->td", rho_k, d.tri_eta)    # sum rho eta
        return dt / self.area * csq * np.einsum(
            "td,td->t", u_elem[:, :2], flux)

    # ------------------------------------------------------------------
    # weak problems

    def set_gamma(self, gamma):
        self._gamma = gamma

    _gamma = 1.4

    def _scatter(self, contrib):
        out = np.zeros(self.nv)
        for a in range(3):
            out += np.bincount(self.tri_v[:, a], weights=contrib[:, a],
                               minlength=self.nv)
        return out

    def apply_stiffness(self, x):
        """Exact P1 stiffness (pure Galerkin Laplacian)."""
        y_loc = np.einsum("tab,tb->ta", self.K_loc, x[self.tri_v])
        return self._scatter(y_loc)

    def apply_compatible_stiffness(self, x):
        """Laplacian built as load-adjoint of the correction gradient.

        The divergence load and the momentum correction both act through the
        dual-cell averaged P1 gradient; composing them gives a symmetric
        positive-semidefinite operator (nullspace: constants) for which the
        corrected field satisfies the discrete weak divergence exactly up to
        the linear-solver residual.  Spectrally it is within a few percent of
        the pure P1 stiffness on these meshes."""
        g = self.cell_grad(x)
        return self._div_load(self.interp_dual_to_primal(g))

    def apply_weak_compatible(self, x, inv_csq, dt):
        """(1/c^2) M x + dt^2 K_compatible x."""
        xe = x[self.tri_v]
        y_loc = np.einsum("tab,tb->ta",
                          inv_csq[:, None, None] * self.M_loc, xe)
        return self._scatter(y_loc) + dt * dt             * self.apply_compatible_stiffness(x)

    def apply_weak_operator(self, x, inv_csq, dt):
        """(1/c^2) M x + dt^2 K x with elementwise 1/c^2."""
        xe = x[self.tri_v]
        y_loc = (inv_csq[:, None, None] * self.M_loc
                 + dt * dt * self.K_loc)
        return self._scatter(np.einsum("tab,tb->ta", y_loc, xe))

    def _boundary_load(self, normal_momentum):
        """Assemble the boundary integral of (rho u . n) z over tagged edges;
        ``normal_momentum`` is the prescribed value per boundary dual edge."""
        load = np.zeros(self.nv)
        if self.be_v.shape[0] == 0:
            return load
        half = 0.5 * normal_momentum * self.be_len
        np.add.at(load, self.be_v[:, 0], half)
        np.add.at(load, self.be_v[:, 1], half)
        return load

    def _div_load(self, rhou_elem):
        """Assemble the volume integral of (rho u*) . grad z."""
        contrib = self.area[:, None] * np.einsum(
            "td,tkd->tk", rhou_elem[:, :2], self.grad)
        return self._scatter(contrib)

    def assemble_rhs_weak(self, ptilde, inv_csq, rhou_elem, dt,
                          normal_momentum=None):
        rhs = self._scatter(np.repeat(
            (inv_csq * ptilde * self.area / 3.0)[:, None], 3, axis=1))
        rhs += dt * self._div_load(rhou_elem)
        if normal_momentum is not None:
            rhs -= dt * self._boundary_load(normal_momentum)
        return rhs

    def assemble_rhs_incompressible(self, rhou_elem, dt, normal_momentum=None):
        rhs = self._div_load(rhou_elem) / dt
        if normal_momentum is not None:
            rhs -= self._boundary_load(normal_momentum) / dt
        return rhs

    def project_mean(self, x):
        """Remove the mass-weighted mean (discrete zero-mean convention for
        the returned pressure)."""
        w = self.vertex_weight
        return x - (w @ x) / w.sum()

    @staticmethod
    def project_range(x):
        """Remove the plain mean: the pure-Neumann stiffness operator has
        the constants as nullspace, so its range is the zero-sum subspace."""
        return x - x.mean()

    def jacobi_diag(self, inv_csq=None, dt=None):
        if inv_csq is None:
            d_loc = np.einsum("taa->ta", self.K_loc)
        else:
            d_loc = (inv_csq[:, None] * np.einsum("taa->ta", self.M_loc)
                     + dt * dt * np.einsum("taa->ta", self.K_loc))
        diag = np.zeros(self.nv)
        np.add.at(diag, self.tri_v.reshape(-1), d_loc.reshape(-1))
        return diag

    def cg_solve(self, apply_op, rhs, x0=None, tol=1e-10, maxiter=2000,
                 diag=None, project_constants=False, dirichlet=None):
        """Preconditioned conjugate gradient on the assembled-free operator.

        ``project_constants`` handles the pure-Neumann nullspace; ``dirichlet``
        is an optional ``(indices, values)`` pair of constrained vertices.
        Raises :class:`PressureSolveError` if ``maxiter`` is exceeded.
        """
        b = rhs.astype(float).copy()
        x = np.zeros_like(b) if x0 is None else x0.astype(float).copy()

        fixed_idx = None
        if dirichlet is not None:
            fixed_idx, fixed_val = dirichlet
            x[fixed_idx] = fixed_val
            b = b - apply_op(_embed(x, fixed_idx, fixed_val))
            b[fixed_idx] = 0.0

            base_op = apply_op

            def apply_op(v):
                v = v.copy()
                v[fixed_idx] = 0.0
                y = base_op(v)
                y[fixed_idx] = 0.0
                return y

            x = x.copy()
            x[fixed_idx] = 0.0

        if project_constants:
            b = self.project_range(b)
            x = self.project_range(x)

        minv = 1.0 / diag if diag is not None else np.ones_like(b)
        if fixed_idx is not None:
            minv = minv.copy()
            minv[fixed_idx] = 1.0

        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            sol = x * 0.0
            if fixed_idx is not None:
                sol[fixed_idx] = fixed_val
            return sol, 0

        r = b - apply_op(x)
        if project_constants:
            r = self.project_range(r)
        z = minv * r
        if project_constants:
            z = self.project_range(z)
        p = z.copy()
        rz = r @ z
        for it in range(maxiter):
            if np.linalg.norm(r) <= tol * bnorm:
                break
            Ap = apply_op(p)
            alpha = rz / (p @ Ap)
            x += alpha * p
            r -= alpha * Ap
            if project_constants:
                r = self.project_range(r)
            z = minv * r
            if project_constants:
                z = self.project_range(z)
            rz_new = r @ z
            p = z + (rz_new / rz) * p
            rz = rz_new
        else:
            raise PressureSolveError(
                f"CG stalled after {maxiter} iterations, "
                f"relative residual {np.linalg.norm(r) / bnorm:.3e}")
        if project_constants:
            x = self.project_mean(x)
        if fixed_idx is not None:
            x[fixed_idx] = fixed_val
        return x, it

    # ------------------------------------------------------------------
    # correction stage

    def correct_momentum(self, m_star, p_vertex, dt):
        """rho u = rho u* - dt grad(p) with the dual-cell averaged gradient."""
        g = self.cell_grad(p_vertex)
        out = m_star.copy()
        out[:, :2] -= dt * g
        return out


def _embed(x, idx, val):
    v = np.zeros_like(x)
    v[idx] = val
    return v
