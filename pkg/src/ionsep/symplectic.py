"""Gaussian states and transfer matrices for quadratic Hamiltonians.

Phase-space vectors are ordered ``(p_1, ..., p_N, x_1, ..., x_N)`` and use
mass-weighted coordinates with hbar = 1, so a single mode of angular frequency
``w`` has ground-state covariance ``diag(w/2, 1/(2w))``.
"""

from dataclasses import dataclass, field

import numpy as np

from ._validation import (
    NumericalFailure,
    check_frequencies,
    check_positive,
    check_square,
    check_symmetric,
    symplectic_defect,
)

__all__ = [
    "GaussianState",
    "TransferMatrix",
    "commutation_matrix",
    "evolve_covariance",
    "ground_state_covariance",
    "integrate_transfer",
    "occupation_number",
    "symplectic_defect",
]


def commutation_matrix(n_modes):
    """Return ``[[0, -I], [I, 0]]`` for ``n_modes`` modes (integer entries)."""
    n_modes = int(n_modes)
    if n_modes < 1:
        raise ValueError(f"n_modes must be >= 1, got {n_modes}")
    z = np.zeros((n_modes, n_modes), dtype=int)
    i = np.eye(n_modes, dtype=int)
    return np.block([[z, -i], [i, z]])


@dataclass(frozen=True)
class TransferMatrix:
    """Linear map from phase-space operators at ``t_start`` to ``t_end``."""

    m: np.ndarray
    t_start: float = 0.0
    t_end: float = 0.0
    convergence: float = None

    def __post_init__(self):
        object.__setattr__(self, "m", check_square(self.m, "transfer matrix", even=True))

    @property
    def n_modes(self):
        return self.m.shape[0] // 2

    @property
    def defect(self):
        return symplectic_defect(self.m)

    def inverse(self):
        # M^{-1} = -C M^T C for symplectic M
        c = commutation_matrix(self.n_modes)
        return TransferMatrix(-c @ self.m.T @ c, self.t_end, self.t_start)

    def __matmul__(self, other):
        if isinstance(other, TransferMatrix):
            return TransferMatrix(self.m @ other.m, other.t_start, self.t_end)
        return self.m @ np.asarray(other)


@dataclass(frozen=True)
class GaussianState:
    """Covariance, mean and reference frequencies of an N-mode Gaussian state."""

    v: np.ndarray
    mean: np.ndarray = None
    ref_freqs: np.ndarray = field(default=None)

    def __post_init__(self):
        v = check_symmetric(self.v, "covariance", rtol=1e-9)
        v = 0.5 * (v + v.T)
        n2 = v.shape[0]
        if n2 % 2:
            raise ValueError("covariance must have even dimension")
        mean = np.zeros(n2) if self.mean is None else np.asarray(self.mean, dtype=float)
        if mean.shape != (n2,):
            raise ValueError(f"mean must have shape ({n2},), got {mean.shape}")
        ref = self.ref_freqs
        if ref is not None:
            ref = check_frequencies(ref, "ref_freqs")
            if ref.size != n2 // 2:
                raise ValueError("ref_freqs must have one entry per mode")
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "ref_freqs", ref)

    @property
    def n_modes(self):
        return self.v.shape[0] // 2

    def physicality(self):
        """Smallest eigenvalue of ``V + iC/2``; non-negative for physical states."""
        c = commutation_matrix(self.n_modes)
        return float(np.min(np.linalg.eigvalsh(self.v + 0.5j * c)))

    def occupations(self, ref_freqs=None):
        ref = self.ref_freqs if ref_freqs is None else check_frequencies(ref_freqs)
        if ref is None:
            raise ValueError("no reference frequencies given")
        return np.array([occupation_number(self, k, w) for k, w in enumerate(ref)])

    def block(self, modes):
        """Reduced state of the listed modes."""
        modes = list(modes)
        n = self.n_modes
        idx = modes + [n + k for k in modes]
        ref = None if self.ref_freqs is None else self.ref_freqs[modes]
        return GaussianState(self.v[np.ix_(idx, idx)], self.mean[idx], ref)


def ground_state_covariance(freqs):
    """Vacuum state of uncoupled oscillators with the given angular frequencies."""
    freqs = check_frequencies(freqs)
    v = np.diag(np.concatenate([freqs / 2, 1 / (2 * freqs)]))
    return GaussianState(v, None, freqs)


def evolve_covariance(m, state):
    """Apply a transfer matrix: ``V -> M V M^T`` and ``mean -> M mean``."""
    mm = m.m if isinstance(m, TransferMatrix) else np.asarray(m, dtype=float)
    if mm.shape != state.v.shape:
        raise ValueError(
            f"transfer matrix shape {mm.shape} does not match state {state.v.shape}"
        )
    return GaussianState(mm @ state.v @ mm.T, mm @ state.mean, state.ref_freqs)


def occupation_number(state, mode_index, omega_ref):
    """Mean phonon number of one mode measured against ``omega_ref``.

    The coherent part of the state (its mean vector) is included, so displaced
    states report their full energy in quanta.
    """
    w = check_positive(omega_ref, "omega_ref")
    n = state.n_modes
    if not 0 <= mode_index < n:
        raise IndexError(f"mode_index {mode_index} out of range for {n} modes")
    vpp = state.v[mode_index, mode_index]
    vxx = state.v[n + mode_index, n + mode_index]
    mp = state.mean[mode_index]
    mx = state.mean[n + mode_index]
    return (0.5 * vpp + 0.5 * w * w * vxx) / w - 0.5 + (mp * mp + w * w * mx * mx) / (2 * w)


def _rk4(h_of_t, c, m, t0, dt, n_steps):
    def f(t, y):
        return c @ np.asarray(h_of_t(t), dtype=float) @ y

    for i in range(n_steps):
        t = t0 + i * dt
        k1 = f(t, m)
        k2 = f(t + dt / 2, m + dt / 2 * k1)
        k3 = f(t + dt / 2, m + dt / 2 * k2)
        k4 = f(t + dt, m + dt * k3)
        m = m + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return m


def integrate_transfer(h_of_t, t0, t1, dt=1e-4, check_convergence=False, tol=1e-6):
    """Integrate ``dM/dt = C h(t) M`` from ``M(t0) = I`` with fixed-step RK4.

    ``h_of_t`` maps a time (us) to the symmetric 2N x 2N quadratic form.  The
    step is shrunk slightly so that an integer number of steps spans
    ``[t0, t1]``.  With ``check_convergence`` the run is repeated at half the
    step and the largest relative entry change is stored in the returned
    object's ``convergence`` attribute.
    """
    if not t1 > t0:
        raise ValueError(f"t1 must exceed t0 (got {t0}, {t1})")
    check_positive(dt, "dt")
    h0 = check_symmetric(h_of_t(t0), "h(t0)", rtol=1e-12)
    n = h0.shape[0] // 2
    c = commutation_matrix(n).astype(float)
    n_steps = max(1, int(np.ceil((t1 - t0) / dt - 1e-9)))
    step = (t1 - t0) / n_steps
    m = _rk4(h_of_t, c, np.eye(2 * n), t0, step, n_steps)
    defect = symplectic_defect(m)
    if defect > tol:
        raise NumericalFailure(
            f"symplecticity defect {defect:.2e} after integration; reduce dt (now {step:g})"
        )
    rel = None
    if check_convergence:
        m_half = _rk4(h_of_t, c, np.eye(2 * n), t0, step / 2, 2 * n_steps)
        rel = float(np.max(np.abs(m_half - m)) / max(np.max(np.abs(m_half)), 1.0))
    return TransferMatrix(m, t0, t1, rel)
