"""Input validation helpers shared by the public functions and estimators."""

import numpy as np


class SymplecticError(ValueError):
    """Raised when a matrix that must be symplectic is not."""


class NumericalFailure(RuntimeError):
    """Raised when an integration or solver loses the required accuracy."""


def check_square(m, name="matrix", even=False):
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"{name} must be a square 2-D array, got shape {m.shape}")
    if even and m.shape[0] % 2:
        raise ValueError(f"{name} must have even dimension, got {m.shape[0]}")
    if not np.all(np.isfinite(m)):
        raise ValueError(f"{name} contains non-finite entries")
    return m


def check_symmetric(m, name="matrix", rtol=1e-12):
    m = check_square(m, name)
    scale = max(np.max(np.abs(m)), 1.0)
    if np.max(np.abs(m - m.T)) > rtol * scale:
        raise ValueError(f"{name} is not symmetric")
    return m


def check_positive(value, name):
    value = float(value)
    if not np.isfinite(value) or value <= 0:
        raise ValueError(f"{name} must be positive and finite, got {value}")
    return value


def check_frequencies(freqs, name="freqs"):
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    if freqs.ndim != 1 or freqs.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D sequence")
    if np.any(~np.isfinite(freqs)) or np.any(freqs <= 0):
        raise ValueError(f"{name} must all be positive, got {freqs}")
    return freqs


def symplectic_defect(m):
    """Max-norm of ``M C M^T - C``."""
    n = m.shape[0] // 2
    c = _comm(n)
    return float(np.max(np.abs(m @ c @ m.T - c)))


def check_symplectic(m, name="matrix", tol=1e-8):
    m = check_square(m, name, even=True)
    defect = symplectic_defect(m)
    if defect > tol * max(1.0, np.max(np.abs(m)) ** 2):
        raise SymplecticError(f"{name} is not symplectic (defect {defect:.3e})")
    return m


def _comm(n):
    z = np.zeros((n, n))
    i = np.eye(n)
    return np.block([[z, -i], [i, z]])
