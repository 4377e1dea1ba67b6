"""Number-basis populations of one- and two-mode pure Gaussian states.

The state is rebuilt as ``D(alpha) B R S |0>`` from its covariance and mean,
with each Gaussian unitary applied as the exponential of its truncated ladder
operator generator.  Work happens in a padded space so the populations up to
``n_max`` are unaffected by the truncation edge.
"""

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import expm
from scipy.sparse import diags
from scipy.special import gammaln

from ._validation import NumericalFailure, check_frequencies
from .decomp import _interferometer_from_unitary, _passive_eigenbasis, _scaling, _unitary

DEFAULT_N_MAX = 40
MAX_N_MAX = 160


class TruncationError(NumericalFailure):
    """The requested number cut-off leaves too much probability outside it."""


@dataclass(frozen=True)
class FockDistribution:
    """Populations ``P[n]`` (one mode) or ``P[n, m]`` (two modes) for ``n, m <= n_max``."""

    populations: np.ndarray
    n_max: int
    truncation_defect: float

    @property
    def n_modes(self):
        return self.populations.ndim

    def __getitem__(self, idx):
        return float(self.populations[idx])

    def as_dict(self, threshold=0.0):
        return {
            tuple(int(i) for i in idx): float(p)
            for idx, p in np.ndenumerate(self.populations)
            if p > threshold
        }

    def mean_occupations(self):
        n = np.arange(self.n_max + 1)
        if self.n_modes == 1:
            return np.array([n @ self.populations])
        return np.array([n @ self.populations.sum(axis=1), n @ self.populations.sum(axis=0)])

    def table(self, size=4):
        """Leading ``size`` (x ``size``) block as nested lists."""
        if self.n_modes == 1:
            return self.populations[:size].tolist()
        return self.populations[:size, :size].tolist()


def squeezed_vacuum_populations(r, n_max=DEFAULT_N_MAX):
    """Closed-form populations of a single-mode squeezed vacuum."""
    r = float(r)
    if r < 0:
        raise ValueError("r must be non-negative")
    p = np.zeros(n_max + 1)
    if r == 0:
        p[0] = 1.0
    else:
        n = np.arange(0, n_max // 2 + 1)
        logp = (gammaln(2 * n + 1) - 2 * gammaln(n + 1) - n * math.log(4)
                + 2 * n * math.log(math.tanh(r)) - math.log(math.cosh(r)))
        p[2 * n] = np.exp(logp)
    return FockDistribution(p, n_max, 1.0 - float(p.sum()))


def _ladder(dim):
    return diags(np.sqrt(np.arange(1, dim)), 1, format="csr")


def _squeezed_column(r, dim):
    # U = exp(r/2 (a^dag^2 - a^2)) stretches x and compresses p for r > 0
    a = _ladder(dim).toarray()
    gen = 0.5 * r * (a.T @ a.T - a @ a)
    return expm(gen)[:, 0]


def _displacement(alpha, dim):
    a = _ladder(dim).toarray()
    return expm(alpha * a.T - np.conj(alpha) * a)


@lru_cache(maxsize=512)
def _block_eigenbasis(total):
    # i (J+ - J-) on |n, total - n> is Hermitian; its eigenbasis fixes the block for every theta
    n = np.arange(total)
    s = np.sqrt((n + 1.0) * (total - n))
    gen = np.diag(s, -1).astype(complex) - np.diag(s, 1)
    lam, vec = np.linalg.eigh(1j * gen)
    return lam, vec


def _apply_beamsplitter(psi, theta, phi, n_keep):
    """``exp(theta (e^{i phi} a1^dag a2 - e^{-i phi} a2^dag a1))`` on a two-mode amplitude grid.

    The generator conserves ``n + m``, so it acts blockwise on fixed totals,
    where it equals ``P exp(theta (J+ - J-)) P^dag`` with ``P = e^{i phi n}``.
    Blocks beyond ``2 n_keep`` cannot reach the kept ``n, m <= n_keep``
    corner and are dropped.
    """
    dim = psi.shape[0]
    out = np.zeros_like(psi)
    for total in range(0, min(2 * n_keep, 2 * (dim - 1)) + 1):
        n = np.arange(total + 1)
        inside = (n < dim) & (total - n < dim)
        vec = np.zeros(total + 1, dtype=complex)
        vec[inside] = psi[n[inside], total - n[inside]] * np.exp(-1j * phi * n[inside])
        lam, basis = _block_eigenbasis(total)
        res = basis @ (np.exp(-1j * theta * lam) * (basis.conj().T @ vec))
        out[n[inside], total - n[inside]] = res[inside] * np.exp(1j * phi * n[inside])
    return out


def _factorise(state, ref):
    """Squeezes, output interferometer and coherent amplitudes of a pure state."""
    d = _scaling(ref)
    vt = d @ state.v @ d
    n = ref.size
    det = np.linalg.det(2 * vt)
    if abs(det - 1.0) > 1e-6 * max(1.0, np.max(np.abs(vt)) ** (2 * n)):
        raise ValueError(f"state is not pure (det(2V) = {det:.6g}); only pure states are supported")
    o, lam = _passive_eigenbasis(np.linalg.cholesky(2 * vt))
    r = -0.5 * np.log(lam)
    mt = d @ state.mean
    alpha = (mt[n:] + 1j * mt[:n]) / math.sqrt(2)
    return o, r, alpha


def _amplitudes(state, ref, dim, n_keep):
    o, r, alpha = _factorise(state, ref)
    n = ref.size
    cols = [_squeezed_column(rk, dim) for rk in r]
    if n == 1:
        theta = math.atan2(o[1, 0], o[0, 0])
        psi = cols[0] * np.exp(-1j * theta * np.arange(dim))
        return _displacement(alpha[0], dim) @ psi
    inter = _interferometer_from_unitary(_unitary(o), 1.0, 1.0)
    num = np.arange(dim)
    psi = np.outer(cols[0] * np.exp(-1j * inter.theta_a * num),
                   cols[1] * np.exp(-1j * inter.theta_b * num))
    bs = inter.beamsplitter
    if abs(bs.theta_bs) > 0:
        psi = _apply_beamsplitter(psi, bs.theta_bs, bs.phi_bs, n_keep)
    if np.any(alpha != 0):
        psi = _displacement(alpha[0], dim) @ psi @ _displacement(alpha[1], dim).T
    return psi


def gaussian_to_fock(state, ref_freqs=None, n_max=DEFAULT_N_MAX, tol=1e-6, pad=None,
                     auto_grow=True):
    """Fock populations of a pure one- or two-mode Gaussian state.

    Occupation numbers are relative to the oscillators at ``ref_freqs``
    (defaults to the state's own).  With ``auto_grow`` the cut-off doubles up
    to 160 until the truncation defect is below ``tol``.
    """
    ref = state.ref_freqs if ref_freqs is None else check_frequencies(ref_freqs)
    if ref is None:
        raise ValueError("reference frequencies required")
    if state.n_modes not in (1, 2) or ref.size != state.n_modes:
        raise ValueError("only one- and two-mode states are supported")
    n_max = int(n_max)
    while True:
        dim = n_max + 1 + (max(20, n_max) if pad is None else int(pad))
        psi = _amplitudes(state, ref, dim, n_max)
        keep = (slice(0, n_max + 1),) * state.n_modes
        p = np.abs(psi[keep]) ** 2
        defect = 1.0 - float(p.sum())
        if defect < tol or not auto_grow or 2 * n_max > MAX_N_MAX:
            break
        n_max *= 2
    if defect >= tol:
        raise TruncationError(f"truncation defect {defect:.2e} at n_max = {n_max}")
    return FockDistribution(p, n_max, defect)


def displaced_populations(state, displacement, ref_freqs=None, n_max=DEFAULT_N_MAX, tol=1e-6):
    """Populations after adding a phase-space ``displacement`` to the state's mean."""
    from .symplectic import GaussianState

    shifted = GaussianState(state.v, state.mean + np.asarray(displacement, dtype=float),
                            state.ref_freqs)
    return gaussian_to_fock(shifted, ref_freqs, n_max, tol)
