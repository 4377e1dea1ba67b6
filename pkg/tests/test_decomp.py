import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.linalg import expm

from ionsep._validation import NumericalFailure, SymplecticError, symplectic_defect
from ionsep.decomp import (
    BeamSplitterParams,
    InterferometerParams,
    RotationParams,
    SqueezeParams,
    beamsplitter_matrix,
    bloch_messiah_2,
    bloch_messiah_4,
    direct_sum,
    interferometer_matrix,
    mode_squeezes,
    precompensation_double,
    precompensation_single,
    rotation_matrix,
    squeezer_matrix,
    state_squeezing,
)
from ionsep.symplectic import (
    GaussianState,
    commutation_matrix,
    evolve_covariance,
    ground_state_covariance,
)

seeds = st.integers(0, 2**32 - 1)
freqs = st.floats(0.3, 8.0)


def random_symplectic(rng, n, scale=0.5):
    a = rng.normal(size=(2 * n, 2 * n)) * scale
    return expm(commutation_matrix(n) @ (a + a.T))


def scaled(m, w):
    s = np.sqrt(np.asarray(w, dtype=float))
    d = np.diag(np.concatenate([1 / s, s]))
    return d @ m @ np.linalg.inv(d)


class TestParams:
    def test_negative_r_absorbed_into_phase(self):
        p = SqueezeParams(-0.3, 0.2)
        assert p.r == 0.3
        assert p.phi == pytest.approx(0.2 - math.pi)
        assert np.allclose(squeezer_matrix(p), squeezer_matrix(SqueezeParams(0.3, 0.2 + math.pi)))

    def test_phase_wrapped(self):
        assert SqueezeParams(0.1, 7.0).phi == pytest.approx(7.0 - 2 * math.pi)
        assert SqueezeParams(0.1, -math.pi).phi == pytest.approx(math.pi)

    def test_no_negative_zero(self):
        assert math.copysign(1.0, SqueezeParams(-0.0).r) == 1.0


class TestGateMatrices:
    @given(st.floats(0, 3), st.floats(-4, 4), freqs)
    def test_squeezer_symplectic_and_strength(self, r, phi, w):
        m = squeezer_matrix(SqueezeParams(r, phi, w))
        assert symplectic_defect(m) < 1e-9 * math.cosh(r) ** 2
        sv = np.linalg.svd(scaled(m, [w]), compute_uv=False)
        assert np.allclose(sv, [math.exp(r), math.exp(-r)], rtol=1e-10)

    @given(st.floats(0, 2.5), freqs)
    def test_squeezed_vacuum_occupation(self, r, w):
        s = evolve_covariance(squeezer_matrix(SqueezeParams(r, 0.4, w)), ground_state_covariance([w]))
        assert s.occupations()[0] == pytest.approx(math.sinh(r) ** 2, rel=1e-9, abs=1e-12)

    @given(st.floats(-6, 6), freqs)
    def test_rotation_keeps_ground_state(self, theta, w):
        s = evolve_covariance(rotation_matrix(RotationParams(theta, w)), ground_state_covariance([w]))
        assert np.allclose(s.v, ground_state_covariance([w]).v, atol=1e-12)

    @given(st.floats(-4, 4), st.floats(-4, 4), freqs, freqs)
    def test_beamsplitter_passive(self, theta, phi, wa, wb):
        m = beamsplitter_matrix(BeamSplitterParams(theta, phi, wa, wb))
        assert symplectic_defect(m) < 1e-9 * max(1, np.max(np.abs(m)) ** 2)
        o = scaled(m, [wa, wb])
        assert np.allclose(o @ o.T, np.eye(4), atol=1e-12)
        g = ground_state_covariance([wa, wb])
        assert np.allclose(evolve_covariance(m, g).v, g.v, atol=1e-12)

    @given(st.floats(-4, 4), st.floats(-4, 4))
    def test_beamsplitter_equivalences(self, theta, phi):
        b = lambda t, p: beamsplitter_matrix(BeamSplitterParams(t, p, 1.3, 0.7))  # noqa: E731
        assert np.allclose(b(math.pi - theta, phi + math.pi), -b(theta, phi), atol=1e-12)
        assert np.allclose(b(-theta, phi), b(theta, phi + math.pi), atol=1e-12)

    def test_full_beamsplitter_swaps_excitation(self):
        # one mode squeezed, the other in vacuum; theta = pi/2 swaps them
        wa, wb = 1.0, 2.0
        sq = direct_sum(squeezer_matrix(SqueezeParams(0.5, 0.0, wa)), np.eye(2))
        s = evolve_covariance(sq, ground_state_covariance([wa, wb]))
        out = evolve_covariance(beamsplitter_matrix(BeamSplitterParams(math.pi / 2, 0.3, wa, wb)), s)
        assert np.allclose(out.occupations(), [0.0, math.sinh(0.5) ** 2], atol=1e-12)

    def test_interferometer_composition(self):
        p = InterferometerParams(BeamSplitterParams(0.3, 0.2, 1.0, 2.0), 0.5, -0.1)
        expected = beamsplitter_matrix(p.beamsplitter) @ direct_sum(
            rotation_matrix(RotationParams(0.5, 1.0)), rotation_matrix(RotationParams(-0.1, 2.0)))
        assert np.allclose(interferometer_matrix(p), expected)


class TestBlochMessiah:
    @given(seeds, freqs)
    def test_two_by_two_round_trip(self, seed, w):
        m = random_symplectic(np.random.default_rng(seed), 1)
        theta2, sq, theta1 = bloch_messiah_2(m, w)
        assert theta2 == 0.0
        rebuilt = squeezer_matrix(sq) @ rotation_matrix(RotationParams(theta1, w))
        assert np.allclose(rebuilt, m, atol=1e-10 * max(1, np.max(np.abs(m))))

    def test_two_by_two_identity(self):
        _, sq, theta1 = bloch_messiah_2(np.eye(2), 1.0)
        assert sq.r == 0.0 and theta1 == 0.0

    @given(seeds, freqs, freqs)
    def test_four_by_four_round_trip(self, seed, wa, wb):
        m = random_symplectic(np.random.default_rng(seed), 2)
        f = bloch_messiah_4(m, [wa, wb])
        assert np.allclose(f.matrix(), m, atol=1e-9 * max(1, np.max(np.abs(m))))
        r = [q.r for q in f.squeezes]
        assert r[0] >= r[1] >= 0

    @given(seeds)
    def test_four_by_four_distinct_output_frequencies(self, seed):
        m = random_symplectic(np.random.default_rng(seed), 2)
        f = bloch_messiah_4(m, [3.0, 2.0], [1.0, 0.6])
        assert np.allclose(f.matrix(), m, atol=1e-9 * max(1, np.max(np.abs(m))))

    def test_known_squeezes_recovered(self):
        m = direct_sum(squeezer_matrix(SqueezeParams(0.7, 0.0)), squeezer_matrix(SqueezeParams(0.2)))
        f = bloch_messiah_4(m, [1.0, 1.0])
        assert [q.r for q in f.squeezes] == pytest.approx([0.7, 0.2])

    def test_rejects_non_symplectic(self):
        with pytest.raises(SymplecticError):
            bloch_messiah_4(np.diag([2.0, 1.0, 1.0, 1.0]), [1.0, 1.0])


class TestStateSqueezing:
    def test_single_mode(self):
        s = evolve_covariance(squeezer_matrix(SqueezeParams(0.4, 1.0, 2.0)), ground_state_covariance([2.0]))
        assert state_squeezing(s) == pytest.approx([0.4])
        assert mode_squeezes(s) == pytest.approx([0.4])

    def test_mode_assignment(self):
        m = direct_sum(squeezer_matrix(SqueezeParams(0.1, 0.0, 1.0)),
                       squeezer_matrix(SqueezeParams(0.6, 0.0, 2.0)))
        s = evolve_covariance(m, ground_state_covariance([1.0, 2.0]))
        assert state_squeezing(s) == pytest.approx([0.6, 0.1])
        assert mode_squeezes(s) == pytest.approx([0.1, 0.6])


class TestPrecompensation:
    def test_sudden_frequency_change(self):
        # identity map between wells at wi and wf: squeeze by ln(wi/wf)/2 along x
        wi, wf = math.sqrt(3), 1.0
        sq = precompensation_single(np.eye(2), wi, wf)
        assert sq.r == pytest.approx(0.25 * math.log(3), rel=1e-10)
        assert sq.phi == pytest.approx(0.0, abs=1e-10)

    @given(seeds, freqs, freqs)
    def test_single_mode_random(self, seed, wi, wf):
        mf = random_symplectic(np.random.default_rng(seed), 1)
        sq = precompensation_single(mf, wi, wf)
        final = evolve_covariance(mf @ squeezer_matrix(sq), ground_state_covariance([wi]))
        assert final.occupations([wf])[0] < 1e-9

    def test_two_mode_random(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            mf = random_symplectic(rng, 2)
            wi, wf = rng.uniform(0.5, 3, 2), rng.uniform(0.5, 3, 2)
            comp = precompensation_double(mf, wi, wf)
            final = evolve_covariance(mf @ comp.matrix(), ground_state_covariance(wi))
            assert np.all(final.occupations(wf) < 1e-8)
            assert 0 <= comp.beamsplitter.theta_bs <= math.pi / 2 + 1e-12

    def test_two_mode_rejects_wrong_shape(self):
        with pytest.raises(ValueError):
            precompensation_double(np.eye(2), [1.0, 1.0], [1.0, 1.0])

    def test_single_mode_failure_is_reported(self):
        with pytest.raises(NumericalFailure):
            precompensation_single(np.eye(2), 1.0, 2.0, tol=-1.0)

    def test_compensated_state_is_pure(self):
        rng = np.random.default_rng(3)
        mf = random_symplectic(rng, 2)
        comp = precompensation_double(mf, [1.0, 2.0], [1.5, 0.5])
        s = evolve_covariance(comp.matrix(), ground_state_covariance([1.0, 2.0]))
        assert isinstance(s, GaussianState)
        assert np.linalg.det(2 * s.v) == pytest.approx(1.0, rel=1e-9)
