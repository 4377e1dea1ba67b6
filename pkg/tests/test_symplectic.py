import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from ionsep._validation import NumericalFailure, SymplecticError, check_symplectic
from ionsep.symplectic import (
    GaussianState,
    TransferMatrix,
    commutation_matrix,
    evolve_covariance,
    ground_state_covariance,
    integrate_transfer,
    occupation_number,
    symplectic_defect,
)


def random_symplectic(rng, n, scale=0.5):
    a = rng.normal(size=(2 * n, 2 * n)) * scale
    return expm(commutation_matrix(n) @ (a + a.T))


def rotation(w, t):
    # analytic oscillator map for (p, x) with h = diag(1, w^2)
    return np.array([[math.cos(w * t), -w * math.sin(w * t)],
                     [math.sin(w * t) / w, math.cos(w * t)]])


class TestCommutationMatrix:
    def test_two_modes(self):
        c = commutation_matrix(2)
        assert c.tolist() == [[0, 0, -1, 0], [0, 0, 0, -1], [1, 0, 0, 0], [0, 1, 0, 0]]

    def test_square_is_minus_identity(self):
        c = commutation_matrix(3)
        assert np.array_equal(c @ c, -np.eye(6, dtype=int))

    def test_rejects_zero_modes(self):
        with pytest.raises(ValueError):
            commutation_matrix(0)


class TestGaussianState:
    def test_ground_state(self):
        s = ground_state_covariance([2.0, 0.5])
        assert np.allclose(np.diag(s.v), [1.0, 0.25, 0.25, 1.0])
        assert np.allclose(s.occupations(), 0.0, atol=1e-15)

    def test_ground_state_is_minimal_uncertainty(self):
        s = ground_state_covariance([1.3])
        assert np.linalg.det(2 * s.v) == pytest.approx(1.0)
        assert s.physicality() == pytest.approx(0.0, abs=1e-12)

    def test_thermal_occupation(self):
        w, nbar = 1.7, 0.8
        v = (nbar + 0.5) * np.diag([w, 1 / w])
        assert occupation_number(GaussianState(v), 0, w) == pytest.approx(nbar)

    def test_coherent_occupation_counts_mean(self):
        w = 2.0
        state = GaussianState(ground_state_covariance([w]).v, [0.0, 1.0])
        # |alpha|^2 = w x^2 / 2
        assert occupation_number(state, 0, w) == pytest.approx(w / 2)

    def test_rejects_asymmetric(self):
        with pytest.raises(ValueError):
            GaussianState(np.array([[1.0, 0.2], [0.0, 1.0]]))

    def test_rejects_bad_mean(self):
        with pytest.raises(ValueError):
            GaussianState(np.eye(2), [0.0, 0.0, 0.0])

    def test_block(self):
        s = ground_state_covariance([1.0, 2.0, 3.0]).block([2])
        assert np.allclose(s.v, np.diag([1.5, 1 / 6]))
        assert s.ref_freqs.tolist() == [3.0]


class TestTransferMatrix:
    def test_inverse(self, rng):
        m = TransferMatrix(random_symplectic(rng, 2))
        assert np.allclose((m.inverse() @ m).m, np.eye(4), atol=1e-10)

    def test_evolution_shape_mismatch(self):
        with pytest.raises(ValueError):
            evolve_covariance(np.eye(4), ground_state_covariance([1.0]))

    def test_check_symplectic_rejects(self):
        with pytest.raises(SymplecticError):
            check_symplectic(np.diag([2.0, 2.0]))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 3))
    def test_random_symplectic_products(self, seed, n):
        rng = np.random.default_rng(seed)
        m = random_symplectic(rng, n) @ random_symplectic(rng, n)
        assert symplectic_defect(m) < 1e-9 * max(1.0, np.max(np.abs(m)) ** 2)

    @given(st.integers(0, 2**32 - 1))
    def test_evolution_preserves_physicality(self, seed):
        rng = np.random.default_rng(seed)
        m = random_symplectic(rng, 2, 0.3)
        s = evolve_covariance(m, ground_state_covariance([1.0, 0.6]))
        assert s.physicality() > -1e-9
        assert np.linalg.det(2 * s.v) == pytest.approx(1.0, rel=1e-8)


class TestIntegrateTransfer:
    def test_oscillator_oracle_ten_periods(self):
        w = 2 * math.pi
        m = integrate_transfer(lambda t: np.diag([1.0, w * w]), 0.0, 10.0, dt=1e-3)
        assert np.max(np.abs(m.m - rotation(w, 10.0))) < 1e-8
        assert m.defect < 1e-9

    def test_two_mode_constant_form_matches_expm(self, rng):
        a = rng.normal(size=(4, 4))
        h = a @ a.T + np.eye(4)
        m = integrate_transfer(lambda t: h, 0.0, 1.0, dt=1e-3)
        assert np.allclose(m.m, expm(commutation_matrix(2) @ h), atol=1e-9)

    def test_convergence_estimate(self):
        m = integrate_transfer(lambda t: np.diag([1.0, 4.0 + math.sin(t)]), 0.0, 2.0, dt=1e-2,
                               check_convergence=True)
        assert m.convergence < 1e-6

    def test_large_step_flags_failure(self):
        with pytest.raises(NumericalFailure):
            integrate_transfer(lambda t: np.diag([1.0, 400.0]), 0.0, 5.0, dt=0.2, tol=1e-9)

    def test_rejects_reversed_interval(self):
        with pytest.raises(ValueError):
            integrate_transfer(lambda t: np.eye(2), 1.0, 0.0)

    @given(st.floats(0.3, 5.0), st.floats(0.1, 3.0))
    def test_matches_rotation(self, w, t):
        m = integrate_transfer(lambda s: np.diag([1.0, w * w]), 0.0, t, dt=1e-3)
        assert np.allclose(m.m, rotation(w, t), atol=1e-9)
