import math

import pytest

from ionsep.constants import COULOMB_CONSTANT, HBAR, MASS_BE9, MASS_MG25

# hand conversion from literal CODATA 2022 SI values
E = 1.602176634e-19
EPS0 = 8.8541878188e-12
AMU = 1.66053906892e-27
HBAR_SI = 1.054571817e-34
UNIT_FORCE_LENGTH2 = AMU * 1e-18 / 1e-12  # amu um^3 / us^2 in J m
UNIT_ACTION = AMU * 1e-12 / 1e-6  # amu um^2 / us in J s


class TestConstants:
    def test_coulomb_constant_matches_hand_conversion(self):
        expected = E**2 / (4 * math.pi * EPS0) / UNIT_FORCE_LENGTH2
        assert COULOMB_CONSTANT == pytest.approx(expected, rel=1e-9)
        assert COULOMB_CONSTANT == pytest.approx(1.389e5, rel=1e-3)

    def test_hbar_matches_hand_conversion(self):
        assert HBAR == pytest.approx(HBAR_SI / UNIT_ACTION, rel=1e-9)
        assert HBAR == pytest.approx(6.35e-2, rel=1e-3)

    def test_ion_masses_exclude_one_electron(self):
        m_e = 5.48579909065e-4
        assert MASS_BE9 == pytest.approx(9.0121831 - m_e, abs=1e-9)
        assert MASS_MG25 == pytest.approx(24.9858370 - m_e, abs=1e-9)
