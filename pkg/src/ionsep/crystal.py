"""Axial physics of a symmetric data-helper-data ion crystal.

Positions are measured from the trap centre.  The helper ion sits at the
origin and the two data ions at ``-c`` and ``+c``.  Curvatures ``k`` are in
amu/us^2, so ``k / m`` is an angular frequency squared in rad^2/us^2.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_positive
from .constants import COULOMB_CONSTANT, HBAR, MASS_BE9, MASS_MG25, TWO_PI


@dataclass(frozen=True)
class IonSpecies:
    mass: float
    charge: int = 1
    name: str = ""

    def __post_init__(self):
        check_positive(self.mass, "mass")
        if self.charge != 1:
            raise ValueError("only singly charged ions are supported")


BE9 = IonSpecies(MASS_BE9, 1, "9Be+")
MG25 = IonSpecies(MASS_MG25, 1, "25Mg+")


@dataclass(frozen=True)
class CrystalConfig:
    """Ion species, the reference frequency and the physical constants.

    ``omega0`` is the single-ion frequency of a data ion in the initial well
    (``k_D(0) = m_D omega0^2``); the initial in-phase frequency follows as
    ``omega0 sqrt(13/5)``.  Use :meth:`from_in_phase_frequency` to pin the
    in-phase frequency instead.
    """

    data_ion: IonSpecies = BE9
    helper_ion: IonSpecies = MG25
    omega0: float = TWO_PI
    coulomb_constant: float = COULOMB_CONSTANT
    hbar: float = HBAR

    def __post_init__(self):
        check_positive(self.omega0, "omega0")
        check_positive(self.coulomb_constant, "coulomb_constant")
        check_positive(self.hbar, "hbar")

    @classmethod
    def from_in_phase_frequency(cls, omega_ip, **kwargs):
        check_positive(omega_ip, "omega_ip")
        return cls(omega0=omega_ip * math.sqrt(5 / 13), **kwargs)

    @property
    def m_d(self):
        return self.data_ion.mass

    @property
    def m_h(self):
        return self.helper_ion.mass

    @property
    def omega_ip_initial(self):
        return self.omega0 * math.sqrt(13 / 5)

    @property
    def k0(self):
        return self.m_d * self.omega0**2

    @property
    def beta_b(self):
        return math.sqrt(self.m_d / self.m_h)

    @property
    def c0(self):
        return equilibrium_half_spacing(self, self.k0)

    def curvature(self, omega):
        """Signed curvature ``m_D omega |omega|`` used for every well."""
        return self.m_d * omega * np.abs(omega)


def equilibrium_half_spacing(config, k_d):
    """Half spacing of the symmetric crystal in equal wells of curvature ``k_d``.

    Solves ``k_d c = k_e (1/c^2 + 1/(4 c^2))``.
    """
    check_positive(k_d, "k_D")
    return (5 * config.coulomb_constant / (4 * k_d)) ** (1 / 3)


@dataclass(frozen=True)
class ModeGeometry:
    """Instantaneous axial mode structure.  Fields may be scalars or arrays."""

    c: float
    k_d: float
    k_h: float
    omega_op: float
    omega_ip: float
    omega_h: float
    omega_coupling_sq: float
    theta: float
    theta_dot: float
    omega_a: float
    omega_b: float
    gamma: float
    potential_ab: np.ndarray = field(default=None, repr=False)


def _theta_rate(config, c, c_dot, k_d_dot, k_h_dot, u, v):
    g = config.coulomb_constant / c**3
    u_dot = -3 * u * c_dot / c
    v_dot = (
        k_h_dot / config.m_h
        - k_d_dot / config.m_d
        - 3 * (c_dot / c) * (4 * g / config.m_h - 2 * g / config.m_d)
    )
    return 0.5 * (u_dot * v - u * v_dot) / (u * u + v * v)


def mode_geometry(config, k_d, k_h, c, k_d_dot=0.0, c_dot=0.0, k_h_dot=0.0, theta_ref=None):
    """Bare frequencies, ip-H coupling, rotation angle and a/b frequencies.

    Accepts scalars or equal-length arrays.  ``theta`` is taken on the branch
    ``(-pi/2, pi/2]`` of ``atan2`` unless ``theta_ref`` is given, in which case
    the branch closest to it is chosen; arrays are unwrapped along their axis.
    """
    c = np.asarray(c, dtype=float)
    if np.any(c <= 0):
        raise ValueError("half spacing c must be positive")
    k_d = np.asarray(k_d, dtype=float)
    k_h = np.asarray(k_h, dtype=float)
    md, mh, ke = config.m_d, config.m_h, config.coulomb_constant
    g = ke / c**3
    w_op2 = k_d / md + 2.5 * g / md
    w_ip2 = k_d / md + 2 * g / md
    w_h2 = k_h / mh + 4 * g / mh
    coup = 2 * math.sqrt(2) * g / math.sqrt(md * mh)
    u = 2 * coup
    v = w_h2 - w_ip2
    gamma = np.sqrt(u * u + v * v)
    theta = 0.5 * np.arctan2(u, v)
    if theta.ndim:
        theta = np.unwrap(theta, period=math.pi)
    if theta_ref is not None:
        theta = theta + math.pi * np.round((np.asarray(theta_ref) - theta) / math.pi)
    theta_dot = _theta_rate(config, c, np.asarray(c_dot, float), np.asarray(k_d_dot, float),
                            np.asarray(k_h_dot, float), u, v)
    wa2 = 0.5 * (w_ip2 + w_h2 + gamma)
    wb2 = 0.5 * (w_ip2 + w_h2 - gamma)
    pot = np.array([[w_ip2, -coup], [-coup, w_h2]])

    def out(x):
        x = np.asarray(x, dtype=float)
        return float(x) if x.ndim == 0 else x

    return ModeGeometry(
        c=out(c),
        k_d=out(k_d),
        k_h=out(k_h),
        omega_op=out(_signed_sqrt(w_op2)),
        omega_ip=out(_signed_sqrt(w_ip2)),
        omega_h=out(_signed_sqrt(w_h2)),
        omega_coupling_sq=out(coup),
        theta=out(theta),
        theta_dot=out(theta_dot),
        omega_a=out(_signed_sqrt(wa2)),
        omega_b=out(_signed_sqrt(wb2)),
        gamma=out(gamma),
        potential_ab=pot,
    )


def _signed_sqrt(x):
    # anti-confining directions are reported as negative frequencies
    return np.sign(x) * np.sqrt(np.abs(x))


def _sq(w):
    return np.sign(w) * w * w


def h_op(geometry):
    """Quadratic form ``diag(1, omega_op^2)`` of the out-of-phase mode."""
    return np.diag([1.0, _sq(geometry.omega_op)])


def h_ab(geometry):
    """Quadratic form of the rotated (a, b) pair, ordered ``(p_a, p_b, x_a, x_b)``."""
    td = geometry.theta_dot
    return np.array(
        [
            [1.0, 0.0, 0.0, -td],
            [0.0, 1.0, td, 0.0],
            [0.0, td, _sq(geometry.omega_a), 0.0],
            [-td, 0.0, 0.0, _sq(geometry.omega_b)],
        ]
    )


def equilibrium_geometry(config, k_d=None, k_h=None):
    """Mode geometry of the static crystal; defaults to the initial wells."""
    k_d = config.k0 if k_d is None else k_d
    k_h = k_d if k_h is None else k_h
    return mode_geometry(config, k_d, k_h, equilibrium_half_spacing(config, k_d))


def initial_frequencies(config):
    """``(omega_op, omega_a, omega_b)`` in the initial single well."""
    g = equilibrium_geometry(config)
    return np.array([g.omega_op, g.omega_a, g.omega_b])


def final_frequencies(config):
    """``(omega_op, omega_a, omega_b)`` of fully separated ions in wells of curvature ``k0``."""
    w0 = config.omega0
    return np.array([w0, w0, config.beta_b * w0])
