"""Benchmark suite: initial conditions, exact references, error norms.

Each case bundles the mesh recipe, physical parameters, boundary treatment
and solver settings needed to reproduce one of the validation problems:
Taylor-Green vortices (both models), the lid-driven cavity, shear motions
(Stokes' first problem at three viscosities plus its solid-limit variant), a
double shear layer, a rotating solid disc, six Riemann problems on a thin
strip, circular explosions in the fluid and solid regimes, and a smooth
acoustic pulse.  Exact references are provided where they exist (steady
vortex, self-similar shear erf profile, exact Riemann solution of the 1D
compressible Euler equations); the remaining cases are checked through
symmetry, conservation and self-convergence.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import erf

from .driver import BCSpec, ConfigurationError
from .mesh import (TAG_BOTTOM, TAG_LEFT, TAG_RIGHT, TAG_TOP, build_dual,
                   build_primal, pair_periodic, structured_rect)
from .state import Fields, INCOMPRESSIBLE, ModelParams, WEAKLY_COMPRESSIBLE
from .transport import TransportConfig

CASE_IDS = ("taylor-green-inc", "taylor-green-weak", "lid-cavity",
            "stokes-first", "shear-solid", "double-shear-layer",
            "solid-rotor", "rp1", "rp2", "rp3", "rp4", "rp5", "rp6",
            "explosion-fluid", "explosion-solid", "acoustic-wave")


@dataclass
class CaseSetup:
    name: str
    params: ModelParams
    transport: TransportConfig
    cfl: float
    t_end: float
    make_mesh: object                 # nx -> (primal, dual)
    init: object                      # (primal, dual) -> Fields
    bcs: dict
    default_nx: int
    dt_max: float = np.inf
    exact: object = None              # (points, t) -> {var: values}
    notes: str = ""


def _square_mesh(nx, lo, hi, periodic, diagonal="right"):
    v, t, tags = structured_rect(nx, nx, lo, hi, lo, hi, diagonal=diagonal)
    m = build_primal(v, t, tags)
    d = build_dual(m)
    if periodic:
        d = pair_periodic(m, d, [(TAG_LEFT, TAG_RIGHT), (TAG_BOTTOM, TAG_TOP)])
    return m, d


def _strip_mesh(nx, y_periodic=True, diagonal="mirror-x"):
    ny = max(2, nx // 10)
    v, t, tags = structured_rect(nx, ny, -0.5, 0.5, -0.05, 0.05,
                                 diagonal=diagonal)
    m = build_primal(v, t, tags)
    d = build_dual(m)
    if y_periodic:
        d = pair_periodic(m, d, [(TAG_BOTTOM, TAG_TOP)])
    return m, d


def _vertex_xy(primal, dual):
    """Representative coordinates of the canonical pressure vertices."""
    rep = np.zeros(dual.n_vertices_eff, dtype=int)
    rep[dual.vert_canon] = np.arange(primal.n_vertices)
    return primal.vertices[rep]


def _fields_from_pointwise(primal, dual, rho_f, u_f, p_f, A_f=None, J_f=None):
    xy = dual.centers
    f = Fields.uniform(dual.n_cells, dual.n_vertices_eff)
    f.rho = np.asarray(rho_f(xy), dtype=float) * np.ones(dual.n_cells)
    u = np.zeros((dual.n_cells, 3))
    u[:, :2] = u_f(xy)
    f.m = f.rho[:, None] * u
    f.p = np.asarray(p_f(xy), dtype=float) * np.ones(dual.n_cells)
    if A_f is not None:
        f.A = A_f(xy)
    if J_f is not None:
        f.J = J_f(xy)
    f.p_vertex = np.asarray(p_f(_vertex_xy(primal, dual)), dtype=float) \
        * np.ones(dual.n_vertices_eff)
    return f


# ---------------------------------------------------------------------------
# analytic references

def taylor_green_velocity(xy):
    return np.stack([np.sin(xy[:, 0]) * np.cos(xy[:, 1]),
                     -np.cos(xy[:, 0]) * np.sin(xy[:, 1])], axis=1)


def taylor_green_pressure(xy, p0=0.0, gamma=1.4):
    return (p0 / (gamma - 1.0)
            + 0.25 * (np.cos(2 * xy[:, 0]) + np.cos(2 * xy[:, 1])))


def stokes_first_u2(x, t, mu):
    if t <= 0.0:
        return 0.1 * np.sign(x)
    return 0.1 * erf(x / (2.0 * np.sqrt(mu * t)))


# ---------------------------------------------------------------------------
# exact Riemann solver for the 1D compressible Euler equations

class RiemannError(ValueError):
    pass


@dataclass
class RiemannSolution:
    """Self-similar solution; sample with xi = x/t."""

    gamma: float
    left: tuple
    right: tuple
    p_star: float
    u_star: float
    speeds: dict = field(default_factory=dict)

    def sample(self, xi):
        xi = np.asarray(xi, dtype=float)
        rho = np.empty_like(xi)
        u = np.empty_like(xi)
        p = np.empty_like(xi)
        g = self.gamma
        for side in ("left", "right"):
            rho_k, u_k, p_k = self.left if side == "left" else self.right
            sgn = -1.0 if side == "left" else 1.0
            c_k = np.sqrt(g * p_k / rho_k)
            ps = self.p_star
            us = self.u_star
            if side == "left":
                region = xi <= us
            else:
                region = xi > us
            if ps > p_k:                       # shock
                S = self.speeds[side + "_shock"]
                behind = (xi * sgn >= S * sgn) & region
                ahead = (~behind) & region
                ratio = ps / p_k
                gm = (g - 1.0) / (g + 1.0)
                rho_s = rho_k * (ratio + gm) / (gm * ratio + 1.0)
                rho[behind], u[behind], p[behind] = rho_s, us, ps
                rho[ahead], u[ahead], p[ahead] = rho_k, u_k, p_k
            else:                              # rarefaction
                head = self.speeds[side + "_head"]
                tail = self.speeds[side + "_tail"]
                ahead = (xi * sgn >= head * sgn) & region
                fan = region & ~ahead
                inside = fan & (xi * sgn > tail * sgn)
                star = fan & ~inside
                rho[ahead], u[ahead], p[ahead] = rho_k, u_k, p_k
                c_s = c_k * (ps / p_k)**((g - 1.0) / (2.0 * g))
                rho_s = g * ps / c_s**2
                rho[star], u[star], p[star] = rho_s, us, ps
                if np.any(inside):
                    x_in = xi[inside]
                    cf = (2.0 / (g + 1.0)
                          - sgn * (g - 1.0) / ((g + 1.0) * c_k) * (u_k - x_in))
                    u[inside] = (2.0 / (g + 1.0)
                                 * (-sgn * c_k + 0.5 * (g - 1.0) * u_k + x_in))
                    rho[inside] = rho_k * cf**(2.0 / (g - 1.0))
                    p[inside] = p_k * cf**(2.0 * g / (g - 1.0))
        return rho, u, p


def euler_riemann_exact(left, right, gamma=1.4):
    """Exact solution of the Euler Riemann problem (Godunov construction).

    ``left``/``right`` are (rho, u, p) triples with positive density and
    pressure; raises :class:`RiemannError` on vacuum-generating data.  The
    star pressure solves the standard two-branch pressure function with a
    Newton iteration to 1e-12 relative.
    """
    rho_l, u_l, p_l = left
    rho_r, u_r, p_r = right
    if min(rho_l, rho_r) <= 0.0 or min(p_l, p_r) <= 0.0:
        raise RiemannError("nonpositive density or pressure")
    g = gamma
    c_l = np.sqrt(g * p_l / rho_l)
    c_r = np.sqrt(g * p_r / rho_r)
    if 2.0 * (c_l + c_r) / (g - 1.0) <= u_r - u_l:
        raise RiemannError("initial data generate vacuum")

    def branch(p, rho_k, p_k, c_k):
        if p > p_k:      # shock
            A = 2.0 / ((g + 1.0) * rho_k)
            B = (g - 1.0) / (g + 1.0) * p_k
            f = (p - p_k) * np.sqrt(A / (p + B))
            df = np.sqrt(A / (B + p)) * (1.0 - 0.5 * (p - p_k) / (B + p))
        else:            # rarefaction
            f = (2.0 * c_k / (g - 1.0)
                 * ((p / p_k)**((g - 1.0) / (2.0 * g)) - 1.0))
            df = (p / p_k)**(-(g + 1.0) / (2.0 * g)) / (rho_k * c_k)
        return f, df

    # two-rarefaction initial guess, positive by construction
    p = max(((c_l + c_r - 0.5 * (g - 1.0) * (u_r - u_l))
             / (c_l / p_l**((g - 1.0) / (2 * g))
                + c_r / p_r**((g - 1.0) / (2 * g))))**(2.0 * g / (g - 1.0)),
            1e-12 * min(p_l, p_r))
    du = u_r - u_l
    for _ in range(100):
        f_l, df_l = branch(p, rho_l, p_l, c_l)
        f_r, df_r = branch(p, rho_r, p_r, c_r)
        step = (f_l + f_r + du) / (df_l + df_r)
        p_new = max(p - step, 1e-14 * min(p_l, p_r))
        if abs(p_new - p) <= 1e-12 * p_new:
            p = p_new
            break
        p = p_new
    f_l, _ = branch(p, rho_l, p_l, c_l)
    f_r, _ = branch(p, rho_r, p_r, c_r)
    u_star = 0.5 * (u_l + u_r) + 0.5 * (f_r - f_l)

    speeds = {}
    if p > p_l:
        speeds["left_shock"] = u_l - c_l * np.sqrt(
            (g + 1.0) / (2 * g) * p / p_l + (g - 1.0) / (2 * g))
    else:
        speeds["left_head"] = u_l - c_l
        speeds["left_tail"] = u_star - c_l * (p / p_l)**((g - 1.0) / (2 * g))
    if p > p_r:
        speeds["right_shock"] = u_r + c_r * np.sqrt(
            (g + 1.0) / (2 * g) * p / p_r + (g - 1.0) / (2 * g))
    else:
        speeds["right_head"] = u_r + c_r
        speeds["right_tail"] = u_star + c_r * (p / p_r)**((g - 1.0) / (2 * g))
    return RiemannSolution(gamma=g, left=tuple(left), right=tuple(right),
                           p_star=float(p), u_star=float(u_star),
                           speeds=speeds)


# ---------------------------------------------------------------------------
# error norms

def error_norms(dual, fields, exact, variables=("u",)):
    """Area-weighted L2 and Linf norms against a reference.

    ``exact`` maps points (n, 2) to a dict with any of rho/u/p; all variables
    are evaluated at the dual nodes (the pressure through its dual-cell
    copy), weighted by the cell areas.
    """
    out = {}
    ref = exact(dual.centers)
    w = dual.areas
    for var in variables:
        if var == "u":
            diff = fields.m[:, :2] / fields.rho[:, None] - ref["u"]
            err = np.linalg.norm(diff, axis=1)
        elif var == "rho":
            err = np.abs(fields.rho - ref["rho"])
        elif var == "p":
            err = np.abs(fields.p - ref["p"])
        else:
            raise ConfigurationError(f"unknown error variable {var!r}")
        out[var] = (float(np.sqrt(w @ err**2)), float(err.max()))
    return out


def observed_orders(errors):
    """log2 convergence rates between successive refinement levels."""
    e = np.asarray(errors, dtype=float)
    return list(np.log2(e[:-1] / e[1:]))


# ---------------------------------------------------------------------------
# case registry

def _taylor_green(model):
    p0 = 0.0 if model == INCOMPRESSIBLE else 1e5
    gamma = 1.4
    params = (ModelParams(model=INCOMPRESSIBLE, cs=0.0, tau1=1e20)
              if model == INCOMPRESSIBLE else
              ModelParams(model=WEAKLY_COMPRESSIBLE, gamma=gamma, cv=2.5,
                          cs=0.0, ch=0.0))

    def init(primal, dual):
        return _fields_from_pointwise(
            primal, dual, lambda xy: 1.0, taylor_green_velocity,
            lambda xy: taylor_green_pressure(xy, p0, gamma))

    def exact(points, t=0.0):
        return {"rho": np.ones(points.shape[0]),
                "u": taylor_green_velocity(points),
                "p": taylor_green_pressure(points, p0, gamma)}

    name = ("taylor-green-inc" if model == INCOMPRESSIBLE
            else "taylor-green-weak")
    return CaseSetup(
        name=name, params=params, transport=TransportConfig(limiter="eno"),
        cfl=0.5, t_end=0.1,
        make_mesh=lambda nx: _square_mesh(nx, 0.0, 2 * np.pi, periodic=True),
        init=init, bcs={}, default_nx=8, exact=exact)


def _lid_cavity():
    params = ModelParams(model=INCOMPRESSIBLE, cs=8.0, mu=1e-2)

    def init(primal, dual):
        return _fields_from_pointwise(primal, dual, lambda xy: 1.0,
                                      lambda xy: np.zeros((len(xy), 2)),
                                      lambda xy: 1.0)

    bcs = {TAG_LEFT: BCSpec("wall"), TAG_RIGHT: BCSpec("wall"),
           TAG_BOTTOM: BCSpec("wall"),
           TAG_TOP: BCSpec("moving-wall", velocity=(1.0, 0.0, 0.0))}
    return CaseSetup(
        name="lid-cavity", params=params,
        transport=TransportConfig(limiter="eno"), cfl=0.5, t_end=10.0,
        make_mesh=lambda nx: _square_mesh(nx, -0.5, 0.5, periodic=False),
        init=init, bcs=bcs, default_nx=64)


def _shear_profile(primal, dual, gamma):
    def u_f(xy):
        u = np.zeros((len(xy), 2))
        u[:, 1] = np.where(xy[:, 0] <= 0.0, -0.1, 0.1)
        return u

    return _fields_from_pointwise(primal, dual, lambda xy: 1.0, u_f,
                                  lambda xy: 1.0 / gamma)


def _stokes_first(mu=1e-2):
    gamma = 1.4
    params = ModelParams(model=WEAKLY_COMPRESSIBLE, gamma=gamma, cv=2.5,
                         cs=1.0, ch=1.0, mu=mu, kappa=mu,
                         T0=(1.0 / gamma) / (0.4 * 2.5))

    def exact_at(points, t):
        u = np.zeros((points.shape[0], 2))
        u[:, 1] = stokes_first_u2(points[:, 0], t, mu)
        return {"u": u, "rho": np.ones(points.shape[0])}

    bcs = {TAG_LEFT: BCSpec("dirichlet-strong"),
           TAG_RIGHT: BCSpec("dirichlet-strong"),
           TAG_BOTTOM: BCSpec("periodic"), TAG_TOP: BCSpec("periodic")}
    nx = 400 if mu <= 1e-4 else 200
    return CaseSetup(
        name="stokes-first", params=params,
        transport=TransportConfig(limiter="eno"), cfl=0.5, t_end=0.4,
        make_mesh=lambda nx: _strip_mesh(nx),
        init=lambda m, d: _shear_profile(m, d, gamma),
        bcs=bcs, default_nx=nx, exact=exact_at)


def _shear_solid():
    gamma = 1.4
    params = ModelParams(model=WEAKLY_COMPRESSIBLE, gamma=gamma, cv=2.5,
                         cs=1.0, ch=1.0, tau1=1e20, tau2=1e20,
                         T0=(1.0 / gamma) / (0.4 * 2.5))
    bcs = {TAG_LEFT: BCSpec("dirichlet-strong"),
           TAG_RIGHT: BCSpec("dirichlet-strong"),
           TAG_BOTTOM: BCSpec("periodic"), TAG_TOP: BCSpec("periodic")}
    return CaseSetup(
        name="shear-solid", params=params,
        transport=TransportConfig(limiter="eno"), cfl=0.5, t_end=0.4,
        make_mesh=lambda nx: _strip_mesh(nx),
        init=lambda m, d: _shear_profile(m, d, gamma),
        bcs=bcs, default_nx=400)


def _double_shear_layer(model=WEAKLY_COMPRESSIBLE, p_background=100.0 / 1.4):
    gamma = 1.4
    if model == INCOMPRESSIBLE:
        params = ModelParams(model=model, cs=8.0, mu=2e-3)
        p_bg = 0.0
    else:
        p_bg = p_background
        params = ModelParams(model=model, gamma=gamma, cv=2.5, cs=8.0, ch=2.0,
                             mu=2e-3, kappa=4e-2, T0=p_bg / (0.4 * 2.5))

    def init(primal, dual):
        def u_f(xy):
            u = np.empty((len(xy), 2))
            y = xy[:, 1]
            u[:, 0] = np.where(y <= 0.5, np.tanh(30.0 * (y - 0.25)),
                               np.tanh(30.0 * (0.75 - y)))
            u[:, 1] = 0.05 * np.sin(2 * np.pi * xy[:, 0])
            return u

        return _fields_from_pointwise(primal, dual, lambda xy: 1.0, u_f,
                                      lambda xy: p_bg)

    return CaseSetup(
        name="double-shear-layer", params=params,
        transport=TransportConfig(limiter="eno"), cfl=0.1, t_end=1.8,
        make_mesh=lambda nx: _square_mesh(nx, 0.0, 1.0, periodic=True),
        init=init, bcs={}, default_nx=64,
        notes="weak model runs on a configured background pressure")


def _solid_rotor():
    params = ModelParams(model=WEAKLY_COMPRESSIBLE, gamma=1.4, cv=1.0,
                         cs=1.0, ch=1.0, tau1=1e20, tau2=1e20,
                         T0=1.0 / 0.4)

    def init(primal, dual):
        def u_f(xy):
            r = np.linalg.norm(xy, axis=1)
            inside = r <= 0.2
            u = np.zeros((len(xy), 2))
            u[inside, 0] = -xy[inside, 1] / 0.2
            u[inside, 1] = xy[inside, 0] / 0.2
            return u

        return _fields_from_pointwise(primal, dual, lambda xy: 1.0, u_f,
                                      lambda xy: 1.0)

    bcs = {t: BCSpec("dirichlet-strong")
           for t in (TAG_LEFT, TAG_RIGHT, TAG_BOTTOM, TAG_TOP)}
    return CaseSetup(
        name="solid-rotor", params=params,
        transport=TransportConfig(limiter="min-mod"), cfl=0.5, t_end=0.3,
        make_mesh=lambda nx: _square_mesh(nx, -1.0, 1.0, periodic=False,
                                          diagonal="mirror-xy"),
        init=init, bcs=bcs, default_nx=128)


RP_TABLE = {
    # rho_l rho_r u1_l u1_r u2_l u2_r p_l p_r x_c t_end
    "rp1": (1.0, 0.125, 0.0, 0.0, 0.0, 0.0, 1.0, 0.1, 0.0, 0.2),
    "rp2": (1.0, 1.0, -1.0, 1.0, 0.0, 0.0, 0.4, 0.4, 0.0, 0.15),
    "rp3": (1.0, 0.125, 0.5, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.1),
    "rp4": (1.0, 0.5, 0.0, 0.0, -0.2, 0.2, 1.0, 0.5, 0.0, 0.2),
    "rp5": (1.0, 0.5, 0.0, 0.0, -0.2, 0.2, 1.0, 0.5, 0.0, 0.2),
    "rp6": (1.0, 0.5, 0.0, 0.0, -0.2, 0.2, 1.0, 0.5, 0.0, 0.2),
}

RP_CALPHA = {"rp1": 0.2, "rp2": 0.1, "rp3": 0.2, "rp4": 1.0, "rp5": 1.0,
             "rp6": 1.0}


def _riemann_case(rp):
    (rho_l, rho_r, u1_l, u1_r, u2_l, u2_r, p_l, p_r, x_c,
     t_end) = RP_TABLE[rp]
    gamma = 1.4
    if rp in ("rp1", "rp2", "rp3"):
        params = ModelParams(gamma=gamma, cv=2.5, cs=0.0, ch=0.0)
        limiter = "barth-jespersen"
    elif rp == "rp4":
        params = ModelParams(gamma=gamma, cv=2.5, cs=1.0, ch=1.0,
                             mu=1e-5, kappa=1e-5,
                             T0=p_l / (1.0 * 0.4 * 2.5))
        limiter = "barth-jespersen"
    else:
        ch = 0.0 if rp == "rp5" else 1.0
        params = ModelParams(gamma=gamma, cv=2.5, cs=1.0, ch=ch,
                             tau1=1e20, tau2=1e20,
                             T0=p_l / (1.0 * 0.4 * 2.5))
        limiter = "min-mod"

    def init(primal, dual):
        def left(xy):
            return xy[:, 0] <= x_c

        def u_f(xy):
            u = np.empty((len(xy), 2))
            u[:, 0] = np.where(left(xy), u1_l, u1_r)
            u[:, 1] = np.where(left(xy), u2_l, u2_r)
            return u

        return _fields_from_pointwise(
            primal, dual,
            lambda xy: np.where(left(xy), rho_l, rho_r), u_f,
            lambda xy: np.where(left(xy), p_l, p_r))

    bcs = {TAG_LEFT: BCSpec("dirichlet-strong"),
           TAG_RIGHT: BCSpec("dirichlet-strong"),
           TAG_BOTTOM: BCSpec("periodic"), TAG_TOP: BCSpec("periodic")}

    exact = None
    if rp in ("rp1", "rp2", "rp3"):
        sol = euler_riemann_exact((rho_l, u1_l, p_l), (rho_r, u1_r, p_r),
                                  gamma)

        def exact(points, t=t_end, _sol=sol):
            xi = (points[:, 0] - x_c) / max(t, 1e-300)
            rho, u1, p = _sol.sample(xi)
            u = np.zeros((points.shape[0], 2))
            u[:, 0] = u1
            return {"rho": rho, "u": u, "p": p}

    return CaseSetup(
        name=rp, params=params,
        transport=TransportConfig(limiter=limiter, c_alpha=RP_CALPHA[rp]),
        cfl=0.5, t_end=t_end, make_mesh=lambda nx: _strip_mesh(nx),
        init=init, bcs=bcs, default_nx=400, exact=exact)


def _explosion(kind):
    gamma = 1.4
    if kind == "fluid":
        params = ModelParams(gamma=gamma, cv=2.5, cs=0.0, ch=0.0)
        limiter, c_alpha, t_end = "eno", 0.5, 0.25

        def init(primal, dual):
            def rad(xy):
                return np.linalg.norm(xy, axis=1)

            return _fields_from_pointwise(
                primal, dual,
                lambda xy: np.where(rad(xy) <= 0.5, 1.0, 0.125),
                lambda xy: np.zeros((len(xy), 2)),
                lambda xy: np.where(rad(xy) <= 0.5, 1.0, 0.1))
    else:
        params = ModelParams(gamma=gamma, cv=1.0, cs=1.0, ch=0.5,
                             tau1=1e20, tau2=1e20, rho0=1.0, T0=1.0 / 0.4)
        limiter, c_alpha, t_end = "min-mod", 0.5, 0.15

        def init(primal, dual):
            def rad(xy):
                return np.linalg.norm(xy, axis=1)

            return _fields_from_pointwise(
                primal, dual, lambda xy: 1.0,
                lambda xy: np.zeros((len(xy), 2)),
                lambda xy: np.where(rad(xy) <= 0.5, 2.0, 1.0))

    return CaseSetup(
        name=f"explosion-{kind}", params=params,
        transport=TransportConfig(limiter=limiter, c_alpha=c_alpha),
        cfl=0.5, t_end=t_end,
        make_mesh=lambda nx: _square_mesh(nx, -1.0, 1.0, periodic=True,
                                          diagonal="mirror-xy"),
        init=init, bcs={}, default_nx=128)


def _acoustic_wave(alpha=50.0, center=(0.0, 0.0)):
    params = ModelParams(gamma=1.4, cv=2.5, cs=0.0, ch=0.0)
    cx, cy = center

    def init(primal, dual):
        def p_f(xy):
            r2 = (xy[:, 0] - cx)**2 + (xy[:, 1] - cy)**2
            return 1.0 + np.exp(-alpha * r2)

        return _fields_from_pointwise(primal, dual, lambda xy: 1.0,
                                      lambda xy: np.zeros((len(xy), 2)), p_f)

    return CaseSetup(
        name="acoustic-wave", params=params,
        transport=TransportConfig(limiter="eno"), cfl=0.5, t_end=1.0,
        make_mesh=lambda nx: _square_mesh(nx, 0.0, 2.0, periodic=True,
                                          diagonal="mirror-xy"),
        init=init, bcs={}, default_nx=128, dt_max=2e-3,
        notes="pulse width alpha and center are configurable; the quiescent "
              "start needs dt_max")


def quiescent_dt_cap(case, dual, fields, cfl):
    """Fallback step bound for velocity-free starts: the explicit subsystem
    has no signal then, so cap dt at an acoustic CFL of the initial data."""
    from .state import temperature
    p = case.params
    csq = 4.0 / 3.0 * p.cs**2 + np.maximum(fields.p, 0.0) \
        * p.gamma / fields.rho
    if p.heat_flux and p.ch > 0.0:
        T = temperature(fields.rho, fields.p, p)
        csq = csq + 2.0 * p.ch**2 * np.abs(T) / (fields.rho**2 * p.cv)
    c0 = float(np.sqrt(csq.max()))
    if c0 <= 0.0:
        return case.dt_max
    return min(case.dt_max, cfl * float(dual.r.min()) / c0)


def run_case(case, nx=None, cfl=None, t_end=None, dt_max=None, observer=None,
             sim_options=None):
    """Mesh, initialize and march one benchmark; returns
    ``(primal, dual, sim, fields, history)``."""
    from .driver import Simulation, run
    nx = nx or case.default_nx
    primal, dual = case.make_mesh(nx)
    sim = Simulation(primal, dual, case.params, bcs=case.bcs,
                     transport_cfg=case.transport, **(sim_options or {}))
    fields = case.init(primal, dual)
    cfl = case.cfl if cfl is None else cfl
    cap = case.dt_max if dt_max is None else dt_max
    if np.abs(fields.m).max() == 0.0:
        cap = min(cap, quiescent_dt_cap(case, dual, fields, cfl))
    history = run(sim, fields, t_end=case.t_end if t_end is None else t_end,
                  cfl=cfl, dt_max=cap, observer=observer)
    return primal, dual, sim, fields, history


def get_case(case_id, **options):
    """Build the named benchmark; ``options`` tweak case-specific knobs
    (mu for stokes-first, model/p_background for double-shear-layer,
    alpha/center for acoustic-wave)."""
    if case_id == "taylor-green-inc":
        return _taylor_green(INCOMPRESSIBLE)
    if case_id == "taylor-green-weak":
        return _taylor_green(WEAKLY_COMPRESSIBLE)
    if case_id == "lid-cavity":
        return _lid_cavity()
    if case_id == "stokes-first":
        return _stokes_first(**options)
    if case_id == "shear-solid":
        return _shear_solid()
    if case_id == "double-shear-layer":
        return _double_shear_layer(**options)
    if case_id == "solid-rotor":
        return _solid_rotor()
    if case_id in RP_TABLE:
        return _riemann_case(case_id)
    if case_id == "explosion-fluid":
        return _explosion("fluid")
    if case_id == "explosion-solid":
        return _explosion("solid")
    if case_id == "acoustic-wave":
        return _acoustic_wave(**options)
    raise ConfigurationError(f"unknown benchmark id {case_id!r}; "
                             f"known: {', '.join(CASE_IDS)}")
