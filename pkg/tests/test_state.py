import numpy as np
import pytest

from dualflow.state import (Fields, INCOMPRESSIBLE, InvalidState, ModelParams,
                            WEAKLY_COMPRESSIBLE, active_components,
                            energy_gradients, heat_flux, metric_devG,
                            relaxation_functions, shear_stress, signal_speed,
                            temperature, thermal_stress, total_energy)

RNG = np.random.default_rng(20240811)


def rand_A(n=1, eps=0.3):
    return np.eye(3) + eps * RNG.uniform(-1, 1, size=(n, 3, 3))


def rotation(theta, axis=2):
    c, s = np.cos(theta), np.sin(theta)
    R = np.eye(3)
    i, j = [(1, 2), (0, 2), (0, 1)][axis]
    R[i, i] = c
    R[j, j] = c
    R[i, j] = -s
    R[j, i] = s
    return R


class TestModelParams:
    def test_viscosity_mapping(self):
        p = ModelParams(model=INCOMPRESSIBLE, cs=1.0, mu=1e-2)
        assert p.tau1 == pytest.approx(6e-2)

    def test_conductivity_mapping(self):
        p = ModelParams(ch=2.0, kappa=4e-2, cv=2.5, T0=1.0)
        assert p.tau2 == pytest.approx(4e-2 / (1.0 * 1.0 * 4.0))

    def test_explicit_tau_wins(self):
        p = ModelParams(cs=1.0, tau1=1e20)
        assert p.tau1 == 1e20

    @pytest.mark.parametrize("kwargs", [
        dict(gamma=1.0), dict(cv=0.0), dict(cs=-1.0), dict(rho0=0.0),
        dict(tau1=0.0), dict(model="bogus"),
    ])
    def test_invalid_rejected(self, kwargs):
        with pytest.raises(ValueError):
            ModelParams(**kwargs)

    def test_heat_flux_default(self):
        assert ModelParams(ch=1.0).heat_flux
        assert not ModelParams(ch=0.0).heat_flux
        assert not ModelParams(model=INCOMPRESSIBLE, ch=1.0).heat_flux


class TestMetric:
    def test_identity(self):
        G, Gdev = metric_devG(np.eye(3))
        assert np.allclose(G, np.eye(3))
        assert np.allclose(Gdev, 0.0)

    def test_diagonal_case(self):
        G, Gdev = metric_devG(np.diag([2.0, 1.0, 1.0]))
        assert np.allclose(G, np.diag([4.0, 1.0, 1.0]))
        assert np.allclose(Gdev, np.diag([2.0, -1.0, -1.0]))

    def test_trace_free(self):
        A = rand_A(64)
        G, Gdev = metric_devG(A)
        trG = np.trace(G, axis1=-2, axis2=-1)
        trdev = np.trace(Gdev, axis1=-2, axis2=-1)
        assert np.all(np.abs(trdev) <= 1e-14 * np.abs(trG))


class TestStresses:
    def test_undeformed_is_stress_free(self):
        p = ModelParams(cs=3.0)
        assert np.allclose(shear_stress(2.0, np.eye(3), p), 0.0)

    def test_diagonal_value(self):
        p = ModelParams(cs=1.0)
        sigma = shear_stress(1.0, np.diag([2.0, 1.0, 1.0]), p)
        assert np.allclose(sigma, np.diag([8.0, -1.0, -1.0]))

    def test_euler_limit(self):
        p = ModelParams(cs=0.0)
        assert np.allclose(shear_stress(1.0, rand_A(4), p), 0.0)

    def test_symmetry(self):
        p = ModelParams(cs=1.3, ch=0.7)
        A = rand_A(32)
        sigma = shear_stress(1.0, A, p)
        scale = np.abs(sigma).max()
        assert np.abs(sigma - np.swapaxes(sigma, -1, -2)).max() <= 1e-13 * scale
        J = RNG.normal(size=(32, 3))
        omega = thermal_stress(1.5, J, p)
        assert np.allclose(omega, np.swapaxes(omega, -1, -2))

    def test_thermal_rank_one(self):
        p = ModelParams(ch=1.0)
        omega = thermal_stress(2.0, [1.0, 0.0, 0.0], p)
        assert np.allclose(omega, np.diag([2.0, 0.0, 0.0]))
        assert np.allclose(thermal_stress(2.0, [0.0, 0.0, 0.0], p), 0.0)


class TestEOS:
    def test_reference_value(self):
        p = ModelParams(gamma=1.4, cv=2.5)
        assert temperature(1.0, 1.0, p) == pytest.approx(1.0)

    def test_zero_pressure(self):
        p = ModelParams()
        assert temperature(1.0, 0.0, p) == 0.0

    def test_linearity(self):
        p = ModelParams()
        assert temperature(1.0, 2.0, p) == pytest.approx(
            2.0 * temperature(1.0, 1.0, p))

    def test_invalid_density(self):
        with pytest.raises(InvalidState):
            temperature(-1.0, 1.0, ModelParams())

    def test_heat_flux_vector(self):
        p = ModelParams(gamma=1.4, cv=2.5, ch=2.0)
        q = heat_flux(1.0, 1.0, [0.5, 0.0, 0.0], p)
        assert np.allclose(q, [2.0, 0.0, 0.0])
        assert np.allclose(heat_flux(1.0, 1.0, [0, 0, 0], p), 0.0)
        p0 = ModelParams(ch=0.0)
        assert np.allclose(heat_flux(1.0, 1.0, [1, 1, 1], p0), 0.0)

    def test_heat_flux_parallel_to_J(self):
        p = ModelParams(ch=1.1)
        J = RNG.normal(size=3)
        q = heat_flux(1.7, 0.8, J, p)
        assert np.linalg.norm(np.cross(q, J)) <= 1e-13 * np.linalg.norm(q)


class TestEnergyGradients:
    def test_equilibrium(self):
        p = ModelParams(cs=1.0, ch=1.0)
        EA, EJ = energy_gradients(np.eye(3), np.zeros(3), p)
        assert np.allclose(EA, 0.0)
        assert np.allclose(EJ, 0.0)

    def test_values(self):
        p = ModelParams(cs=1.0, ch=2.0)
        EA, EJ = energy_gradients(np.diag([2.0, 1.0, 1.0]), [1.0, 1.0, 0.0], p)
        assert np.allclose(EA, np.diag([4.0, -1.0, -1.0]))
        assert np.allclose(EJ, [4.0, 4.0, 0.0])


class TestRelaxationFunctions:
    def test_theta1_reference(self):
        p = ModelParams(cs=1.0, tau1=6e-3)
        th1, _ = relaxation_functions(1.0, 1.0, np.eye(3), p)
        assert th1 == pytest.approx(2e-3)

    def test_theta2_all_ones(self):
        p = ModelParams(ch=1.0, tau2=1.0, gamma=1.4, cv=2.5)
        _, th2 = relaxation_functions(1.0, 1.0, np.eye(3), p)
        assert th2 == pytest.approx(1.0)

    def test_theta1_power_law(self):
        p = ModelParams(cs=1.0, tau1=1.0)
        A1 = np.eye(3)
        A2 = 2.0**(1.0 / 3.0) * np.eye(3)   # det doubled
        th1a, _ = relaxation_functions(1.0, 1.0, A1, p)
        th1b, _ = relaxation_functions(1.0, 1.0, A2, p)
        assert th1b / th1a == pytest.approx(2.0**(-5.0 / 3.0), rel=1e-12)

    def test_orientation_loss_rejected(self):
        p = ModelParams(cs=1.0)
        with pytest.raises(InvalidState):
            relaxation_functions(1.0, 1.0, -np.eye(3), p)

    def test_smooth_in_A(self):
        # finite-difference derivative exists away from det A = 0
        p = ModelParams(cs=1.0, tau1=0.3)
        A = np.eye(3) + 0.1
        eps = 1e-6
        dA = np.zeros((3, 3))
        dA[0, 0] = eps
        f = lambda a: relaxation_functions(1.0, 1.0, a, p)[0]
        d1 = (f(A + dA) - f(A - dA)) / (2 * eps)
        d2 = (f(A + 2 * dA) - f(A - 2 * dA)) / (4 * eps)
        assert d1 == pytest.approx(d2, rel=1e-4)


class TestTotalEnergy:
    def test_rest_state(self):
        p = ModelParams(gamma=1.4)
        E = total_energy(1.0, np.zeros(3), np.eye(3), np.zeros(3), 1.0, p)
        assert E == pytest.approx(2.5)

    def test_kinetic_and_thermal_increments(self):
        p = ModelParams(gamma=1.4, ch=1.0, heat_flux=True)
        E0 = total_energy(1.0, np.zeros(3), np.eye(3), np.zeros(3), 1.0, p)
        Eu = total_energy(1.0, [1.0, 0, 0], np.eye(3), np.zeros(3), 1.0, p)
        EJ = total_energy(1.0, np.zeros(3), np.eye(3), [1.0, 0, 0], 1.0, p)
        assert Eu - E0 == pytest.approx(0.5)
        assert EJ - E0 == pytest.approx(0.5)

    def test_frame_indifference(self):
        p = ModelParams(gamma=1.4, cs=1.2, ch=0.8, heat_flux=True)
        u = RNG.normal(size=3)
        A = np.eye(3) + 0.2 * RNG.normal(size=(3, 3))
        J = RNG.normal(size=3)
        E0 = total_energy(1.1, u, A, J, 0.9, p)
        for theta, axis in [(0.3, 2), (1.1, 0), (2.4, 1)]:
            R = rotation(theta, axis)
            E1 = total_energy(1.1, R @ u, A @ R.T, R @ J, 0.9, p)
            assert E1 == pytest.approx(E0, rel=1e-12)


class TestSignalSpeed:
    def test_weak_at_rest(self):
        p = ModelParams(cs=1.0, ch=0.0)
        a = signal_speed(1.0, 1.0, np.zeros(3), 1.0, 1.0, np.zeros(3),
                         [1.0, 0.0], p)
        assert a == pytest.approx(np.sqrt(4.0 / 3.0))

    def test_weak_with_normal_velocity(self):
        p = ModelParams(cs=1.0, ch=0.0)
        u = np.array([0.5, 0.0, 0.0])
        a = signal_speed(1.0, 1.0, u, 1.0, 1.0, u, [1.0, 0.0], p)
        assert a == pytest.approx(0.5 + np.sqrt(4.0 / 3.0))

    def test_incompressible_at_rest(self):
        p = ModelParams(model=INCOMPRESSIBLE, cs=1.0)
        a = signal_speed(1.0, 0.0, np.zeros(3), 1.0, 0.0, np.zeros(3),
                         [0.0, 1.0], p)
        assert a == pytest.approx(max(1.0, np.sqrt(4.0 / 3.0)))

    def test_dominates_normal_velocity(self):
        p = ModelParams(cs=0.7, ch=0.4, gamma=1.4, cv=2.5)
        for _ in range(20):
            u_i = RNG.normal(size=3)
            u_j = RNG.normal(size=3)
            n = RNG.normal(size=2)
            n /= np.linalg.norm(n)
            a = signal_speed(1.0, 1.0, u_i, 1.2, 0.8, u_j, n, p)
            assert a >= abs(u_i[:2] @ n) - 1e-14
            assert a >= abs(u_j[:2] @ n) - 1e-14


class TestFields:
    def test_pack_unpack_roundtrip(self):
        f = Fields.uniform(7, 5, rho=1.2, p=0.3)
        f.m = RNG.normal(size=(7, 3))
        f.A = rand_A(7)
        f.J = RNG.normal(size=(7, 3))
        Q = f.pack()
        g = Fields.uniform(7, 5)
        g.unpack(Q)
        assert np.allclose(g.rho, f.rho)
        assert np.allclose(g.m, f.m)
        assert np.allclose(g.A, f.A)
        assert np.allclose(g.J, f.J)
        assert np.allclose(g.p, f.p)

    def test_active_components(self):
        inc = active_components(ModelParams(model=INCOMPRESSIBLE, cs=1.0))
        assert not inc[0] and not inc[16]
        assert inc[1:13].all()
        weak = active_components(ModelParams(ch=1.0))
        assert weak.all()
        weak_nh = active_components(ModelParams(ch=0.0))
        assert not weak_nh[13:16].any()
