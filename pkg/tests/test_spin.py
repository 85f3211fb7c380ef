import numpy as np
import pytest
import scipy.linalg
from hypothesis import given
from hypothesis import strategies as st

from sordor import spin
from sordor._accel import get_kernels
from sordor.errors import InvalidArgumentError

from conftest import random_hermitian

finite = st.floats(-1e4, 1e4, allow_nan=False)


class TestMemberHamiltonian:
    def test_zero(self):
        assert np.all(spin.member_hamiltonian(0.0, 0.0, 0.0) == 0)

    def test_offset_and_x_drive(self):
        # spin-1/2 operators: the "2 sigma_z + sigma_x" case reads 2 Sz + Sx
        h = spin.member_hamiltonian(0.0, 1.0, 2.0)
        np.testing.assert_allclose(h, 2 * spin.SZ + spin.SX, atol=1e-15)

    def test_y_drive(self):
        h = spin.member_hamiltonian(np.pi / 2, 1.0, 0.0)
        np.testing.assert_allclose(h, spin.SY, atol=1e-15)

    @pytest.mark.parametrize("bad", [np.nan, np.inf])
    def test_non_finite(self, bad):
        with pytest.raises(InvalidArgumentError):
            spin.member_hamiltonian(bad, 1.0, 0.0)

    @given(finite, finite, finite)
    def test_hermitian(self, phi, a, w):
        h = spin.member_hamiltonian(phi, a, w)
        np.testing.assert_allclose(h, h.conj().T, atol=0)


class TestCommutationSuperoperator:
    def test_zero(self):
        assert np.all(spin.commutation_superoperator(np.zeros((2, 2))) == 0)

    def test_pauli_pair(self):
        l = spin.commutation_superoperator(spin.PAULI_Z)
        np.testing.assert_allclose(l @ spin.vec(spin.PAULI_X), spin.vec(2j * spin.PAULI_Y), atol=1e-15)

    def test_random_pairs_against_commutator(self, rng):
        worst = 0.0
        for _ in range(100):
            h = random_hermitian(rng)
            rho = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
            got = spin.commutation_superoperator(h) @ spin.vec(rho)
            want = spin.vec(h @ rho - rho @ h)
            worst = max(worst, np.max(np.abs(got - want)))
        assert worst <= 1e-12

    def test_vec_unvec(self, rng):
        rho = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
        np.testing.assert_array_equal(spin.unvec(spin.vec(rho)), rho)


class TestExpm:
    def test_zero(self):
        np.testing.assert_array_equal(spin.expm(np.zeros((4, 4))), np.eye(4))

    def test_diagonal(self):
        d = np.array([0.3, -2.0 + 1j, 5j, -40.0])
        np.testing.assert_allclose(spin.expm(np.diag(d)), np.diag(np.exp(d)), rtol=1e-13, atol=1e-300)

    def test_nilpotent(self, rng):
        m = np.zeros((4, 4), dtype=complex)
        m[0, 2:] = rng.normal(size=2)
        m[1, 2:] = rng.normal(size=2)
        np.testing.assert_allclose(spin.expm(m), np.eye(4) + m, atol=1e-14)

    @pytest.mark.parametrize("n", [4, 8])
    @pytest.mark.parametrize("scale", [1e-3, 1.0, 30.0, 1e3])
    def test_anti_hermitian_against_scipy(self, rng, n, scale):
        m = -1j * random_hermitian(rng, n, scale / n)
        want = scipy.linalg.expm(m)
        err = np.max(np.abs(spin.expm(m) - want))
        assert err <= 1e-12 * max(1.0, scale)

    def test_general_against_scipy(self, rng):
        m = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        want = scipy.linalg.expm(m)
        assert np.max(np.abs(spin.expm(m) - want)) <= 1e-12 * np.max(np.abs(want))

    @pytest.mark.parametrize("backend", ["numba", "numpy"])
    def test_backends_agree(self, rng, backend):
        m = -1j * random_hermitian(rng, 8, 10.0)
        got = get_kernels(backend).expm(np.ascontiguousarray(m))
        np.testing.assert_allclose(got, scipy.linalg.expm(m), atol=1e-12)

    def test_rejects_non_square(self):
        with pytest.raises(InvalidArgumentError):
            spin.expm(np.zeros((2, 3)))

    def test_rejects_nan(self):
        m = np.zeros((4, 4))
        m[1, 1] = np.nan
        with pytest.raises(InvalidArgumentError):
            spin.expm(m)


class TestStepWithDerivatives:
    def test_zero_dt(self, rng):
        l = spin.commutation_superoperator(random_hermitian(rng))
        step = spin.step_with_derivatives(l, dt=0.0)
        np.testing.assert_array_equal(step.propagator, np.eye(4))
        assert np.all(step.d_dx == 0) and np.all(step.d_dy == 0)

    def test_zero_generator(self):
        dt = 0.37
        step = spin.step_with_derivatives(np.zeros((4, 4)), dt=dt)
        np.testing.assert_allclose(step.d_dx, -1j * dt * spin.LX, atol=1e-15)
        np.testing.assert_allclose(step.d_dy, -1j * dt * spin.LY, atol=1e-15)

    def test_negative_dt(self):
        with pytest.raises(InvalidArgumentError):
            spin.step_with_derivatives(np.zeros((4, 4)), dt=-1e-6)

    def test_finite_difference(self, rng):
        # 50 random (L, D, dt) triples at pulse-like scales
        worst = 0.0
        for _ in range(50):
            l = spin.commutation_superoperator(random_hermitian(rng, scale=10 ** rng.uniform(3, 5.5)))
            d = spin.commutation_superoperator(random_hermitian(rng))
            dt = 10 ** rng.uniform(-7, -5)
            step = spin.step_with_derivatives(l, d, spin.LY, dt)
            eps = 1e-9 / dt  # keeps eps * dt * norm(D) near 1e-9
            fd = (spin.propagator(l + eps * d, dt) - spin.propagator(l - eps * d, dt)) / (2 * eps)
            worst = max(worst, np.max(np.abs(step.d_dx - fd)) / np.max(np.abs(fd)))
        assert worst <= 1e-6

    def test_x_and_y_directions(self, rng):
        l = spin.commutation_superoperator(random_hermitian(rng, scale=1e5))
        step = spin.step_with_derivatives(l, dt=1e-6)
        for d, got in ((spin.LX, step.d_dx), (spin.LY, step.d_dy)):
            np.testing.assert_allclose(got, spin.directional_derivative(l, d, 1e-6)[1], atol=0)

    def test_unitarity(self, rng):
        worst = 0.0
        for _ in range(200):
            h = random_hermitian(rng, scale=10 ** rng.uniform(-3, 6))
            dt = 10 ** rng.uniform(-8, -3)
            p = spin.propagator(spin.commutation_superoperator(h), dt)
            worst = max(worst, np.max(np.abs(p.conj().T @ p - np.eye(4))))
        assert worst <= 1e-10

    @given(st.floats(0, 2 * np.pi), st.floats(0, 1e5), st.floats(-1e5, 1e5),
           st.floats(1e-8, 1e-5), st.floats(1e-8, 1e-5))
    def test_composition(self, phi, a, w, t1, t2):
        l = spin.commutation_superoperator(spin.member_hamiltonian(phi, a, w))
        both = spin.propagator(l, t1 + t2)
        np.testing.assert_allclose(spin.propagator(l, t2) @ spin.propagator(l, t1), both, atol=1e-11)
