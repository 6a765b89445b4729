"""Constitutive layer: model parameters, cell states, EOS and closures.

The medium is described by density, momentum, a 3x3 distortion tensor A, a
thermal impulse vector J and pressure.  Shear stress derives from the
trace-free part of the metric G = A^T A, heat flux from J; two relaxation
times interpolate the behaviour between a viscous/heat-conducting fluid
(small tau) and an elastic solid (large tau).  All functions here are pure
and broadcast over leading axes, so the same code serves single states in
tests and whole cell arrays in the solver.

Third spatial dimension: tensors are kept full 3x3 (the stress algebra is
inherently three-dimensional) with planar symmetry, i.e. z-derivatives vanish
and out-of-plane components are carried along unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

INCOMPRESSIBLE = "incompressible"
WEAKLY_COMPRESSIBLE = "weakly-compressible"

# packed state layout used by the transport stage
IRHO = 0
IM = slice(1, 4)
IA = slice(4, 13)
IJ = slice(13, 16)
IP = 16
NV = 17

_I3 = np.eye(3)


class InvalidState(ValueError):
    """Raised when a state leaves the physically admissible set."""


@dataclass
class ModelParams:
    """Physical constants and the model kind.

    Either the relaxation times ``tau1``/``tau2`` or the transport
    coefficients ``mu``/``kappa`` may be given; the mapping is
    ``tau1 = 6 mu / (rho0 cs^2)`` and ``tau2 = kappa / (rho0 T0 ch^2)``.
    ``heat_flux`` defaults to "on when ch > 0 in the weakly compressible
    model" (the incompressible formulation is non heat-conducting).
    """

    model: str = WEAKLY_COMPRESSIBLE
    gamma: float = 1.4
    cv: float = 2.5
    cs: float = 0.0
    ch: float = 0.0
    mu: float | None = None
    kappa: float | None = None
    tau1: float | None = None
    tau2: float | None = None
    rho0: float = 1.0
    T0: float = 1.0
    gravity: tuple = (0.0, 0.0, 0.0)
    c_alpha: float = 0.0
    heat_flux: bool | None = None

    def __post_init__(self):
        if self.model not in (INCOMPRESSIBLE, WEAKLY_COMPRESSIBLE):
            raise ValueError(f"unknown model kind {self.model!r}")
        if not self.gamma > 1.0:
            raise ValueError("gamma must exceed 1")
        if not self.cv > 0.0:
            raise ValueError("cv must be positive")
        if self.cs < 0.0 or self.ch < 0.0:
            raise ValueError("cs and ch must be nonnegative")
        if not self.rho0 > 0.0:
            raise ValueError("rho0 must be positive")
        if self.tau1 is None:
            if self.mu is not None and self.cs > 0.0:
                self.tau1 = 6.0 * self.mu / (self.rho0 * self.cs**2)
            else:
                self.tau1 = 1e20
        if self.tau2 is None:
            if self.kappa is not None and self.ch > 0.0:
                self.tau2 = self.kappa / (self.rho0 * self.T0 * self.ch**2)
            else:
                self.tau2 = 1e20
        if not (self.tau1 > 0.0 and self.tau2 > 0.0):
            raise ValueError("relaxation times must be positive")
        if self.heat_flux is None:
            self.heat_flux = (self.ch > 0.0
                              and self.model == WEAKLY_COMPRESSIBLE)
        self.gravity = tuple(float(g) for g in self.gravity)
        if len(self.gravity) == 2:
            self.gravity = (*self.gravity, 0.0)

    @property
    def incompressible(self):
        return self.model == INCOMPRESSIBLE


def det3(A):
    """Determinant of batched 3x3 matrices (direct cofactor expansion)."""
    return (A[..., 0, 0] * (A[..., 1, 1] * A[..., 2, 2]
                            - A[..., 1, 2] * A[..., 2, 1])
            - A[..., 0, 1] * (A[..., 1, 0] * A[..., 2, 2]
                              - A[..., 1, 2] * A[..., 2, 0])
            + A[..., 0, 2] * (A[..., 1, 0] * A[..., 2, 1]
                              - A[..., 1, 1] * A[..., 2, 0]))


def metric_devG(A):
    """Metric tensor G = A^T A and its trace-free part."""
    A = np.asarray(A, dtype=float)
    G = np.matmul(np.swapaxes(A, -1, -2), A)
    tr = G[..., 0, 0] + G[..., 1, 1] + G[..., 2, 2]
    Gdev = G - (tr / 3.0)[..., None, None] * _I3
    return G, Gdev


def shear_stress(rho, A, params):
    """sigma = rho cs^2 G Gdev (symmetric, zero for an undeformed medium)."""
    if params.cs == 0.0:
        return np.zeros(np.asarray(A).shape)
    G, Gdev = metric_devG(A)
    return (np.asarray(rho)[..., None, None] * params.cs**2
            * np.einsum("...ij,...jk->...ik", G, Gdev))


def thermal_stress(rho, J, params):
    """omega = rho ch^2 J (x) J."""
    J = np.asarray(J, dtype=float)
    return (np.asarray(rho)[..., None, None] * params.ch**2
            * np.einsum("...i,...j->...ij", J, J))


def temperature(rho, p, params):
    """Ideal-gas closure T = p / (rho (gamma - 1) cv)."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho <= 0.0):
        raise InvalidState("nonpositive density in temperature()")
    return np.asarray(p) / (rho * (params.gamma - 1.0) * params.cv)


def heat_flux(rho, p, J, params):
    """q = rho ch^2 T J."""
    T = temperature(rho, p, params)
    return (np.asarray(rho) * params.ch**2 * T)[..., None] * np.asarray(J)


def energy_gradients(A, J, params):
    """Derivatives of the specific energy: E_A = cs^2 A Gdev, E_J = ch^2 J."""
    _, Gdev = metric_devG(A)
    EA = params.cs**2 * np.einsum("...ij,...jk->...ik", np.asarray(A), Gdev)
    EJ = params.ch**2 * np.asarray(J, dtype=float)
    return EA, EJ


def relaxation_functions(rho, p, A, params):
    """Relaxation functions theta1(A), theta2(T).

    theta1 = rho0 tau1 cs^2 |A|^(-5/3) / 3 needs det A > 0 (orientation
    preserved); theta2 = rho0 T0 tau2 ch^2 / T needs T > 0.
    """
    detA = np.linalg.det(np.asarray(A, dtype=float))
    if np.any(detA <= 0.0):
        raise InvalidState("det A <= 0: distortion lost orientation")
    theta1 = (params.rho0 * params.tau1 * params.cs**2 / 3.0
              * detA**(-5.0 / 3.0))
    T = temperature(rho, p, params)
    with np.errstate(divide="ignore"):
        theta2 = params.rho0 * params.T0 * params.tau2 * params.ch**2 / T
    return theta1, theta2


def total_energy(rho, u, A, J, p, params):
    """Specific total energy (diagnostic): kinetic + distortion + thermal
    impulse + internal contributions."""
    u = np.asarray(u, dtype=float)
    e1 = 0.5 * np.einsum("...i,...i->...", u, u)
    _, Gdev = metric_devG(A)
    e2 = 0.25 * params.cs**2 * np.einsum("...ij,...ij->...", Gdev, Gdev)
    J = np.asarray(J, dtype=float)
    e3 = 0.5 * params.ch**2 * np.einsum("...i,...i->...", J, J)
    if not params.heat_flux:
        e3 = np.zeros_like(e1)
    e4 = np.asarray(p) / (np.asarray(rho) * (params.gamma - 1.0))
    return e1 + e2 + e3 + e4


def sound_like_speed(rho, p, u, params):
    """Characteristic speed of the explicit subsystem for one side."""
    if params.incompressible:
        u = np.asarray(u, dtype=float)
        return np.sqrt(4.0 / 3.0 * params.cs**2
                       + 0.25 * np.einsum("...i,...i->...", u, u))
    T = temperature(rho, p, params)
    return np.sqrt(4.0 / 3.0 * params.cs**2
                   + 2.0 * params.ch**2 * T
                   / (np.asarray(rho)**2 * params.cv))


def signal_speed(rho_i, p_i, u_i, rho_j, p_j, u_j, n, params):
    """Maximum signal speed of the explicit subsystem across an edge.

    The incompressible variant carries an extra branch pair with a 3/2 factor
    on the normal velocity; the weakly compressible one folds the thermal
    characteristic into the sound-like speed.
    """
    n = np.asarray(n, dtype=float)
    u_i = np.asarray(u_i, dtype=float)
    u_j = np.asarray(u_j, dtype=float)
    un_i = np.einsum("...i,...i->...", u_i[..., :n.shape[-1]], n)
    un_j = np.einsum("...i,...i->...", u_j[..., :n.shape[-1]], n)
    c_i = sound_like_speed(rho_i, p_i, u_i, params)
    c_j = sound_like_speed(rho_j, p_j, u_j, params)
    if params.incompressible:
        return np.maximum.reduce([
            np.abs(un_i) + params.cs, 1.5 * np.abs(un_i) + c_i,
            np.abs(un_j) + params.cs, 1.5 * np.abs(un_j) + c_j,
        ])
    return np.maximum(np.abs(un_i) + c_i, np.abs(un_j) + c_j)


@dataclass
class Fields:
    """Per-dual-cell unknowns plus the primal-vertex pressure.

    ``p`` is the dual-cell copy of the pressure used by the transport stage of
    the weakly compressible model; ``p_vertex`` (length ``n_vertices_eff``) is
    the primal field the projection stage solves for.
    """

    rho: np.ndarray           # (nc,)
    m: np.ndarray             # (nc, 3) momentum
    A: np.ndarray             # (nc, 3, 3)
    J: np.ndarray             # (nc, 3)
    p: np.ndarray             # (nc,)
    p_vertex: np.ndarray      # (n_vertices_eff,)

    @classmethod
    def uniform(cls, n_cells, n_vertices, rho=1.0, p=0.0):
        return cls(rho=np.full(n_cells, float(rho)),
                   m=np.zeros((n_cells, 3)),
                   A=np.tile(_I3, (n_cells, 1, 1)),
                   J=np.zeros((n_cells, 3)),
                   p=np.full(n_cells, float(p)),
                   p_vertex=np.full(n_vertices, float(p)))

    @property
    def u(self):
        return self.m / self.rho[:, None]

    def copy(self):
        return Fields(self.rho.copy(), self.m.copy(), self.A.copy(),
                      self.J.copy(), self.p.copy(), self.p_vertex.copy())

    def pack(self):
        """Packed (nc, 17) state for the transport stage."""
        Q = np.empty((self.rho.shape[0], NV))
        Q[:, IRHO] = self.rho
        Q[:, IM] = self.m
        Q[:, IA] = self.A.reshape(-1, 9)
        Q[:, IJ] = self.J
        Q[:, IP] = self.p
        return Q

    def unpack(self, Q):
        self.rho = Q[:, IRHO].copy()
        self.m = Q[:, IM].copy()
        self.A = Q[:, IA].reshape(-1, 3, 3).copy()
        self.J = Q[:, IJ].copy()
        self.p = Q[:, IP].copy()


def active_components(params):
    """Mask of packed components evolved by the transport stage."""
    mask = np.zeros(NV, dtype=bool)
    mask[IM] = True
    mask[IA] = True
    if not params.incompressible:
        mask[IRHO] = True
        mask[IP] = True
        if params.heat_flux:
            mask[IJ] = True
    return mask
