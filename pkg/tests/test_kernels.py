"""The JIT kernels must agree with the reference numpy implementations to
round-off on random states; these tests pin the two backends together."""

import numpy as np
import pytest

from dualflow import _kernels
from dualflow import transport as tr
from dualflow.mesh import build_dual, build_primal, pair_periodic, \
    structured_rect, TAG_BOTTOM, TAG_LEFT, TAG_RIGHT, TAG_TOP
from dualflow.relaxation import relax_rhs
from dualflow.state import (Fields, IA, IJ, IM, IP, IRHO, INCOMPRESSIBLE,
                            ModelParams, NV)

pytestmark = pytest.mark.skipif(not _kernels.AVAILABLE,
                                reason="numba kernels unavailable")

RNG = np.random.default_rng(99)


def random_states(n, p_floor=0.5):
    Q = np.zeros((n, NV))
    Q[:, IRHO] = RNG.uniform(0.5, 2.0, n)
    Q[:, IM] = RNG.normal(0.0, 0.4, (n, 3))
    Q[:, IA] = (np.eye(3).reshape(9) + 0.2 * RNG.normal(size=(n, 9)))
    Q[:, IJ] = 0.3 * RNG.normal(size=(n, 3))
    Q[:, IP] = RNG.uniform(p_floor, 2.0, n)
    return Q


PARAM_SETS = [
    ModelParams(cs=1.1, ch=0.7, gamma=1.4, cv=2.5),
    ModelParams(cs=0.0, ch=0.0, gamma=1.4, cv=2.5),
    ModelParams(model=INCOMPRESSIBLE, cs=1.3),
]
CFG_SETS = [
    tr.TransportConfig(),
    tr.TransportConfig(c_alpha=0.7, rusanov_half=False),
    tr.TransportConfig(distortion_flux_form=True),
]


class TestEdgeKernel:
    @pytest.mark.parametrize("pi", range(len(PARAM_SETS)))
    @pytest.mark.parametrize("ci", range(len(CFG_SETS)))
    def test_matches_numpy(self, pi, ci):
        params, cfg = PARAM_SETS[pi], CFG_SETS[ci]
        n = 257
        QL = random_states(n)
        QR = random_states(n)
        eta = RNG.normal(size=(n, 2))
        half = 0.5 if cfg.rusanov_half else 1.0
        F1, D1, a1 = _kernels.edge_fluxes(
            QL, QR, eta, params.cs, params.ch, params.gamma, params.cv,
            params.incompressible, bool(params.heat_flux),
            cfg.distortion_flux_form, half * (1.0 + cfg.c_alpha))
        F2, a2 = tr.rusanov_flux(QL, QR, eta, params, cfg)
        D2 = 0.5 * tr.ncp_jump(QL, QR, eta, params, cfg)
        scale = np.abs(F2).max() + 1.0
        assert np.abs(F1 - F2).max() <= 1e-12 * scale
        assert np.abs(D1 - D2).max() <= 1e-12 * scale
        assert np.abs(a1 - a2).max() <= 1e-12 * (a2.max() + 1.0)


class TestFluxDivergenceKernel:
    def test_matches_numpy(self):
        params = PARAM_SETS[0]
        cfg = tr.TransportConfig()
        n = 129
        Q = random_states(n)
        g = 0.3 * RNG.normal(size=(n, NV, 2))
        out1 = _kernels.flux_divergence(
            Q, g, params.cs, params.ch, params.gamma, params.cv,
            params.incompressible, bool(params.heat_flux),
            cfg.distortion_flux_form)
        # reference central-difference path
        out2 = np.zeros_like(Q)
        scale = max(1.0, np.abs(Q).max())
        for d in range(2):
            nvec = np.zeros(2)
            nvec[d] = 1.0
            v = g[..., d]
            h = 1e-7 * scale / np.abs(v).max()
            Fp = tr.physical_flux(Q + h * v, nvec, params, cfg)
            Fm = tr.physical_flux(Q - h * v, nvec, params, cfg)
            out2 += (Fp - Fm) / (2.0 * h)
        assert np.abs(out1 - out2).max() <= 1e-6 * (np.abs(out2).max() + 1.0)


class TestReconstructKernels:
    def make(self, limiter):
        v, t, tags = structured_rect(6, 6)
        m = build_primal(v, t, tags)
        d = build_dual(m)
        d = pair_periodic(m, d, [(TAG_LEFT, TAG_RIGHT), (TAG_BOTTOM, TAG_TOP)])
        Q = random_states(d.n_cells)
        bases = Q + 0.01 * RNG.normal(size=Q.shape)
        gradT = tr.cr_gradients(m, d, Q)
        return m, d, Q, bases, gradT

    @pytest.mark.parametrize("limiter", ["eno", "min-mod", "barth-jespersen"])
    def test_matches_numpy(self, limiter, monkeypatch):
        m, d, Q, bases, gradT = self.make(limiter)
        cfg = tr.TransportConfig(limiter=limiter, eno_margin=10.0)
        QL1, QR1 = tr.reconstruct(m, d, Q, gradT, cfg, None, bases=bases)
        monkeypatch.setattr(_kernels, "AVAILABLE", False)
        QL2, QR2 = tr.reconstruct(m, d, Q, gradT, cfg, None, bases=bases)
        scale = np.abs(Q).max()
        assert np.abs(QL1 - QL2).max() <= 1e-13 * scale
        assert np.abs(QR1 - QR2).max() <= 1e-13 * scale

    @pytest.mark.parametrize("margin", [0.0, 0.35, np.inf])
    def test_eno_margins_match(self, margin, monkeypatch):
        m, d, Q, bases, gradT = self.make("eno")
        cfg = tr.TransportConfig(limiter="eno", eno_margin=margin)
        QL1, QR1 = tr.reconstruct(m, d, Q, gradT, cfg, None, bases=bases)
        monkeypatch.setattr(_kernels, "AVAILABLE", False)
        QL2, QR2 = tr.reconstruct(m, d, Q, gradT, cfg, None, bases=bases)
        assert np.abs(QL1 - QL2).max() <= 1e-13 * np.abs(Q).max()
        assert np.abs(QR1 - QR2).max() <= 1e-13 * np.abs(Q).max()


class TestRK4Kernel:
    def test_matches_numpy_loop(self):
        params = ModelParams(cs=1.0, tau1=3e-2)
        n = 64
        A = np.eye(3) + 0.1 * RNG.normal(size=(n, 3, 3))
        from dualflow.state import det3
        k = 3.0 * det3(A)**(5.0 / 3.0) / (params.rho0 * params.tau1)
        out1 = _kernels.rk4_distortion(A.copy(), k, 1e-3, 4)
        # same algebra through the reference rhs
        zJ = np.zeros((n, 3))
        h = 1e-3 / 4
        B = A.copy()
        for _ in range(4):
            k1, _ = relax_rhs(B, zJ, 0.0, params, k_frozen=k)
            k2, _ = relax_rhs(B + 0.5 * h * k1, zJ, 0.0, params, k_frozen=k)
            k3, _ = relax_rhs(B + 0.5 * h * k2, zJ, 0.0, params, k_frozen=k)
            k4, _ = relax_rhs(B + h * k3, zJ, 0.0, params, k_frozen=k)
            B = B + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        assert np.abs(out1 - B).max() <= 1e-13


class TestTransportEquivalence:
    def test_full_update_matches(self, monkeypatch):
        v, t, tags = structured_rect(8, 8, 0, 2 * np.pi, 0, 2 * np.pi)
        m = build_primal(v, t, tags)
        d = pair_periodic(m, build_dual(m),
                          [(TAG_LEFT, TAG_RIGHT), (TAG_BOTTOM, TAG_TOP)])
        params = ModelParams(cs=0.8, ch=0.5, gamma=1.4, cv=2.5)
        cfg = tr.TransportConfig(limiter="eno")
        xy = d.centers
        Q = np.zeros((d.n_cells, NV))
        Q[:, IRHO] = 1.0 + 0.1 * np.sin(xy[:, 0])
        Q[:, IM] = Q[:, IRHO][:, None] * np.stack(
            [np.sin(xy[:, 1]), np.cos(xy[:, 0]), np.zeros(d.n_cells)], 1)
        Q[:, IA] = np.eye(3).reshape(9)
        Q[:, IA.start] += 0.05 * np.cos(xy[:, 1])
        Q[:, IJ] = 0.02
        Q[:, IP] = 1.0 + 0.05 * np.cos(xy[:, 0])
        Q1, lam1 = tr.transport_update(m, d, Q, params, cfg, 1e-3)
        monkeypatch.setattr(_kernels, "AVAILABLE", False)
        Q2, lam2 = tr.transport_update(m, d, Q, params, cfg, 1e-3)
        assert np.abs(Q1 - Q2).max() <= 1e-11
        assert np.abs(lam1 - lam2).max() <= 1e-12
