"""Implicit integration of the algebraic relaxation sources.

The distortion and thermal-impulse sources form a per-cell ODE system

    dA/dt = -E_A / theta1(A),      dJ/dt = -E_J / theta2,

stiff in the fluid limit (small relaxation times).  theta2 is evaluated with
the frozen transport-stage temperature, which makes the J block linear and
exactly solvable per stage; the A block is solved with an inexact Newton
iteration (forward-difference Jacobian) inside an L-stable
diagonally-implicit Runge-Kutta step.  Accuracy is controlled by bisecting
the step and Richardson-extrapolating the finest pair, so the integrator
tracks the exact source ODE to a requested tolerance rather than to one
backward-Euler step.

Everything is batched over cells; the stiff solid limit (tau ~ 1e20) short-
circuits to the identity.
"""

from __future__ import annotations

import numpy as np

from . import _kernels
from .state import InvalidState, det3, metric_devG

# Pareschi-Russo two-stage DIRK, L-stable, second order
_PR_X = 1.0 - np.sqrt(2.0) / 2.0


class RelaxationError(RuntimeError):
    """Newton failed to converge; carries cell id and final residual."""


def relax_rhs(A, J, T, params, k_frozen=None):
    """Right-hand side of the source ODE at frozen temperature.

    The shear/thermal wave speeds cancel between the energy gradients and
    the relaxation functions, leaving

        dA/dt = -3 det(A)^(5/3) / (rho0 tau1) * A Gdev(A)
        dJ/dt = -T / (rho0 T0 tau2) * J

    ``k_frozen`` optionally supplies the distortion rate coefficient; the
    source generator is trace-free in A^-1 dA, so det A (and with it the
    coefficient) is an invariant of the flow and substep loops may evaluate
    it once.
    """
    A = np.asarray(A, dtype=float)
    dA = np.zeros_like(A)
    if params.cs > 0.0:
        if k_frozen is None:
            detA = det3(A)
            if np.any(detA <= 0.0):
                raise InvalidState("det A <= 0 in relaxation source")
            k = 3.0 * detA**(5.0 / 3.0) / (params.rho0 * params.tau1)
        else:
            k = k_frozen
        _, Gdev = metric_devG(A)
        dA = -k[..., None, None] * np.matmul(A, Gdev)
    J = np.asarray(J, dtype=float)
    dJ = np.zeros_like(J)
    if params.ch > 0.0 and params.heat_flux:
        lam = np.asarray(T) / (params.rho0 * params.T0 * params.tau2)
        dJ = -lam[..., None] * J
    return dA, dJ


def _A_rate_scale(A, params):
    """Conservative bound on the linearised decay rate of the A block."""
    detA = np.abs(det3(np.asarray(A, dtype=float)))
    return 6.0 * detA.max(initial=0.0)**(5.0 / 3.0) / (params.rho0 * params.tau1)


def _chord_jacobian(s, params):
    """9x9 Jacobian of the stage residual linearised at A = I (forward
    differences); shared across cells in the near-equilibrium regime."""
    eye = np.eye(3)[None]
    zJ = np.zeros((1, 3))

    def G1(xflat):
        Am = xflat.reshape(1, 3, 3)
        dA, _ = relax_rhs(Am, zJ, 0.0, params)
        return (Am - eye - s * dA).reshape(9)

    x0 = eye.reshape(9).copy()
    r0 = G1(x0)
    h = np.sqrt(np.finfo(float).eps)
    J = np.empty((9, 9))
    for c in range(9):
        xp = x0.copy()
        xp[c] += h
        J[:, c] = (G1(xp) - r0) / h
    return J


def _solve_A_stage(base, s, params, tol, maxiter):
    """Solve A = base + s * f(A) for the A block with batched Newton.

    ``base`` is (n, 3, 3); the residual is scaled by 1/s so the tolerance
    matches the (Y - Y*)/dt + E/theta convention.  Near equilibrium all cells
    share the Jacobian linearised at the identity (chord iteration); far from
    it the Jacobian is assembled per cell with forward differences.
    """
    n = base.shape[0]
    zeros_J = np.zeros((n, 3))

    def G(xflat):
        Am = xflat.reshape(n, 3, 3)
        dA, _ = relax_rhs(Am, zeros_J, 0.0, params)
        return (Am - base - s * dA).reshape(n, 9)

    x = base.reshape(n, 9).copy()
    resid = G(x)
    # absolute floor: the residual cannot drop below round-off of its terms
    floor = 64.0 * np.finfo(float).eps * max(1.0, np.abs(base).max())

    def converged(r):
        return np.abs(r).max() <= max(tol * s, floor)

    dev = np.abs(base - np.eye(3)).max()
    if dev < 0.1:
        Jinv = np.linalg.inv(_chord_jacobian(s, params))
        for it in range(maxiter):
            if converged(resid):
                return x.reshape(n, 3, 3)
            x = x - resid @ Jinv.T
            resid = G(x)
        # fall through to the per-cell Newton if the chord stalled

    for it in range(maxiter):
        if converged(resid):
            return x.reshape(n, 3, 3)
        # forward-difference Jacobian, step sqrt(eps) (1 + |Y|)
        h = np.sqrt(np.finfo(float).eps) * (1.0 + np.abs(x))
        Jac = np.empty((n, 9, 9))
        for c in range(9):
            xp = x.copy()
            xp[:, c] += h[:, c]
            Jac[:, :, c] = (G(xp) - resid) / h[:, c][:, None]
        try:
            dx = np.linalg.solve(Jac, resid[..., None])[..., 0]
        except np.linalg.LinAlgError as exc:
            raise RelaxationError(f"singular Newton Jacobian: {exc}") from exc
        x = x - dx
        resid = G(x)
    rnorm = np.abs(resid).max(axis=1) / s
    cell = int(np.argmax(rnorm))
    raise RelaxationError(
        f"Newton stalled at cell {cell}: residual {rnorm[cell]:.3e} "
        f"after {maxiter} iterations")


def _dirk_substep(A0, J0, lam, h, params, tol, maxiter, integrator):
    """Advance the source ODE by one substep of size h."""
    solve_A = params.cs > 0.0
    if integrator == "backward-euler":
        A1 = _solve_A_stage(A0, h, params, tol, maxiter) if solve_A else A0
        J1 = J0 / (1.0 + h * lam)[..., None]
        return A1, J1
    # Pareschi-Russo DIRK2
    x = _PR_X
    if solve_A:
        Y1 = _solve_A_stage(A0, x * h, params, tol, maxiter)
        f1 = (Y1 - A0) / (x * h)
        base2 = A0 + (1.0 - 2.0 * x) * h * f1
        Y2 = _solve_A_stage(base2, x * h, params, tol, maxiter)
        f2 = (Y2 - base2) / (x * h)
        A1 = A0 + 0.5 * h * (f1 + f2)
    else:
        A1 = A0
    # same tableau for the linear J block, stages solvable in closed form
    d = 1.0 + x * h * lam
    j1 = J0 / d[..., None]
    fj1 = -lam[..., None] * j1
    jb2 = J0 + (1.0 - 2.0 * x) * h * fj1
    j2 = jb2 / d[..., None]
    fj2 = -lam[..., None] * j2
    J1 = J0 + 0.5 * h * (fj1 + fj2)
    return A1, J1


def _integrate(A0, J0, lam, dt, n_sub, params, tol, maxiter, integrator):
    A, J = A0, J0
    h = dt / n_sub
    for _ in range(n_sub):
        A, J = _dirk_substep(A, J, lam, h, params, tol, maxiter, integrator)
    return A, J


def _rk4_A(A0, dt, n_sub, params):
    """Classical RK4 substepping of the distortion source ODE (used in the
    moderately stiff regime where it beats the Newton stages).  The rate
    coefficient is frozen at its initial value: det A is an invariant of
    this source and its first variation vanishes identically."""
    zJ = np.zeros(A0.shape[:-2] + (3,))
    detA = det3(A0)
    if np.any(detA <= 0.0):
        raise InvalidState("det A <= 0 in relaxation source")
    k = 3.0 * detA**(5.0 / 3.0) / (params.rho0 * params.tau1)
    if _kernels.AVAILABLE and A0.ndim == 3:
        return _kernels.rk4_distortion(np.ascontiguousarray(A0),
                                       np.broadcast_to(k, A0.shape[:1]).copy(),
                                       dt, n_sub)
    h = dt / n_sub
    A = A0
    for _ in range(n_sub):
        k1, _ = relax_rhs(A, zJ, 0.0, params, k_frozen=k)
        k2, _ = relax_rhs(A + 0.5 * h * k1, zJ, 0.0, params, k_frozen=k)
        k3, _ = relax_rhs(A + 0.5 * h * k2, zJ, 0.0, params, k_frozen=k)
        k4, _ = relax_rhs(A + h * k3, zJ, 0.0, params, k_frozen=k)
        A = A + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return A


def implicit_source_step(A_star, J_star, rho, T_frozen, dt, params,
                         tol=1e-10, maxiter=30, integrator="auto",
                         rtol=3e-7, max_substeps=4096, extrapolate=True):
    """Integrate the relaxation sources over ``dt`` starting from the
    transport-stage data.

    The equilibrium (I, 0) is preserved exactly for any dt and tau; in the
    solid limit the sources are negligible and the inputs pass through.  The
    default strategy picks the integrator by stiffness: moderately stiff
    data (dt times the decay rate below ~8) goes to substepped classical
    RK4 sized from ``rtol``; beyond that the L-stable DIRK2 (or backward
    Euler) with Newton stages takes over, with the substep count adapted by
    bisection until the Richardson difference of the finest pair drops below
    ``rtol`` relative to the deviation from equilibrium, after which the
    pair is extrapolated.
    """
    A_star = np.asarray(A_star, dtype=float)
    J_star = np.asarray(J_star, dtype=float)
    single = A_star.ndim == 2
    A0 = A_star[None] if single else A_star
    J0 = np.atleast_2d(J_star)
    n = A0.shape[0]

    if params.ch > 0.0 and params.heat_flux:
        lam = np.broadcast_to(
            np.asarray(T_frozen, dtype=float)
            / (params.rho0 * params.T0 * params.tau2), (n,)).copy()
    else:
        lam = np.zeros(n)

    dev = max(np.abs(A0 - np.eye(3)).max(initial=0.0),
              np.abs(J0).max(initial=0.0))
    rateA = _A_rate_scale(A0, params) if params.cs > 0.0 else 0.0
    z = dt * max(rateA, lam.max(initial=0.0))
    if dev == 0.0 or z * dev < 1e-15:
        out_A = A0.copy()
        out_J = J0.copy()
        return (out_A[0], out_J[0]) if single else (out_A, out_J)

    zA = dt * rateA
    if integrator == "rk4" or (integrator == "auto" and zA <= 8.0):
        if params.cs > 0.0 and zA > 0.0:
            # substeps from stability (z_sub <= 0.4) and the RK4 error model
            n_acc = zA * (max(zA, 1e-12) / (30.0 * max(rtol, 1e-14)))**0.25
            n_sub = int(np.ceil(max(zA / 0.4, n_acc, 1.0)))
            n_sub = min(n_sub, max_substeps)
            A1 = _rk4_A(A0, dt, n_sub, params)
        else:
            A1 = A0.copy()
        J1 = J0 * np.exp(-lam * dt)[..., None]
        return (A1[0], J1[0]) if single else (A1, J1)
    if integrator == "auto":
        integrator = "dirk2"

    n_sub = max(1, int(np.ceil(z / 0.5)))
    n_sub = min(n_sub, max_substeps)
    A_prev, J_prev = _integrate(A0, J0, lam, dt, n_sub, params, tol,
                                maxiter, integrator)
    target = max(rtol * dev, 1e-14)
    while n_sub < max_substeps:
        n_sub *= 2
        A_next, J_next = _integrate(A0, J0, lam, dt, n_sub, params, tol,
                                    maxiter, integrator)
        diff = max(np.abs(A_next - A_prev).max(),
                   np.abs(J_next - J_prev).max())
        if diff <= target:
            if extrapolate and integrator == "dirk2":
                fac = 1.0 / 3.0     # order-2 Richardson weight
                A_next = A_next + fac * (A_next - A_prev)
                J_next = J_next + fac * (J_next - J_prev)
            A_prev, J_prev = A_next, J_next
            break
        A_prev, J_prev = A_next, J_next
    return (A_prev[0], J_prev[0]) if single else (A_prev, J_prev)


def wall_distortion_step(A_transport, A_n, grad_u_tilde, rho, T_frozen, dt,
                         params, **kwargs):
    """Distortion update at wall cells.

    The velocity-gradient term, skipped by the explicit stage at these cells,
    is applied here with the wall-aware velocity gradients (grad_u_tilde has
    shape (n, 3, 2): d u_m / d x_k at the cell), then the stiff source is
    integrated implicitly as usual.
    """
    A_n = np.asarray(A_n, dtype=float)
    du = np.asarray(grad_u_tilde, dtype=float)
    Agradu = np.einsum("...im,...mk->...ik", A_n, du)   # (n, 3, 2)
    A_star = np.asarray(A_transport, dtype=float).copy()
    A_star[..., :, :2] -= dt * Agradu
    J_dummy = np.zeros(A_star.shape[:-2] + (3,))
    A1, _ = implicit_source_step(A_star, J_dummy, rho, T_frozen, dt, params,
                                 **kwargs)
    return A1


def pressure_source_eval(rho, A, J, T_n, params, area=1.0):
    """Cell integral of the pressure-equation relaxation source.

    Nonnegative by construction (sum of squares with positive coefficients);
    vanishes at equilibrium and in the gamma -> 1 limit.
    """
    A = np.asarray(A, dtype=float)
    rho = np.asarray(rho, dtype=float)
    gm1 = params.gamma - 1.0
    out = np.zeros(np.broadcast(rho, np.zeros(A.shape[:-2])).shape)
    if params.cs > 0.0:
        detA = np.linalg.det(A)
        _, Gdev = metric_devG(A)
        AG = np.einsum("...ij,...jk->...ik", A, Gdev)
        AG2 = np.einsum("...ik,...ik->...", AG, AG)
        out = out + (3.0 * params.rho0**2 * params.cs**2 * gm1
                     / (params.tau1 * rho * np.abs(detA)**(11.0 / 3.0)) * AG2)
    if params.ch > 0.0 and params.heat_flux:
        J = np.asarray(J, dtype=float)
        JJ = np.einsum("...i,...i->...", J, J)
        out = out + (params.ch**2 * gm1 * rho * np.asarray(T_n)
                     / (params.tau2 * params.rho0 * params.T0) * JJ)
    return area * out
