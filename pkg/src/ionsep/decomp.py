"""Squeezer, rotation and beam-splitter matrices and their Bloch-Messiah factorisation.

All primitives act on phase-space vectors ordered ``(p..., x...)`` and carry the
mode reference frequency explicitly, matching the covariance conventions of
:mod:`ionsep.symplectic`.  Internally the decompositions work in
frequency-scaled quadratures ``(p / sqrt(w), x sqrt(w))`` where passive
operations are orthogonal and the vacuum covariance is ``I / 2``.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.linalg import polar
from scipy.optimize import least_squares

from ._validation import (
    NumericalFailure,
    check_frequencies,
    check_positive,
    check_symplectic,
)
from .symplectic import (
    GaussianState,
    TransferMatrix,
    commutation_matrix,
    evolve_covariance,
    ground_state_covariance,
)


def _wrap(phi):
    """Wrap an angle into (-pi, pi]."""
    w = math.remainder(phi, 2 * math.pi)
    return math.pi if w == -math.pi else w


@dataclass(frozen=True)
class SqueezeParams:
    r: float
    phi: float = 0.0
    omega_ref: float = 1.0

    def __post_init__(self):
        r, phi = float(self.r), float(self.phi)
        if r < 0:
            r, phi = -r, phi + math.pi
        object.__setattr__(self, "r", r + 0.0)
        object.__setattr__(self, "phi", _wrap(phi))
        object.__setattr__(self, "omega_ref", check_positive(self.omega_ref, "omega_ref"))


@dataclass(frozen=True)
class RotationParams:
    theta: float
    omega_ref: float = 1.0


@dataclass(frozen=True)
class BeamSplitterParams:
    theta_bs: float
    phi_bs: float
    omega_a: float = 1.0
    omega_b: float = 1.0


@dataclass(frozen=True)
class InterferometerParams:
    """Two-port interferometer ``B_BS(theta_bs, phi_bs) . (R_a(theta_a) + R_b(theta_b))``."""

    beamsplitter: BeamSplitterParams
    theta_a: float = 0.0
    theta_b: float = 0.0


def squeezer_matrix(p):
    """Single-mode squeezer acting on ``(p, x)``."""
    check_positive(p.omega_ref, "omega_ref")
    ch, sh = math.cosh(p.r), math.sinh(p.r)
    c, s = math.cos(p.phi), math.sin(p.phi)
    w = p.omega_ref
    return np.array([[ch - sh * c, w * sh * s], [sh * s / w, ch + sh * c]])


def rotation_matrix(p):
    """Phase-space rotation by ``theta`` of a mode at ``omega_ref``."""
    check_positive(p.omega_ref, "omega_ref")
    c, s = math.cos(p.theta), math.sin(p.theta)
    w = p.omega_ref
    return np.array([[c, -w * s], [s / w, c]])


def beamsplitter_matrix(p):
    """Two-mode beam splitter acting on ``(p_a, p_b, x_a, x_b)``."""
    wa = check_positive(p.omega_a, "omega_a")
    wb = check_positive(p.omega_b, "omega_b")
    ct = math.cos(p.theta_bs)
    cs = math.cos(p.phi_bs) * math.sin(p.theta_bs)
    ss = math.sin(p.phi_bs) * math.sin(p.theta_bs)
    rab, rba, g = math.sqrt(wa / wb), math.sqrt(wb / wa), math.sqrt(wa * wb)
    return np.array(
        [
            [ct, rab * cs, 0.0, g * ss],
            [-rba * cs, ct, g * ss, 0.0],
            [0.0, -ss / g, ct, rba * cs],
            [-ss / g, 0.0, -rab * cs, ct],
        ]
    )


def direct_sum(*blocks):
    """Direct sum of single-mode 2x2 maps into the ``(p..., x...)`` layout."""
    n = len(blocks)
    out = np.zeros((2 * n, 2 * n))
    for k, b in enumerate(blocks):
        idx = [k, n + k]
        out[np.ix_(idx, idx)] = b
    return out


def interferometer_matrix(p):
    bs = p.beamsplitter
    rot = direct_sum(
        rotation_matrix(RotationParams(p.theta_a, bs.omega_a)),
        rotation_matrix(RotationParams(p.theta_b, bs.omega_b)),
    )
    return beamsplitter_matrix(bs) @ rot


def _scaling(freqs):
    s = np.sqrt(np.asarray(freqs, dtype=float))
    return np.diag(np.concatenate([1 / s, s]))


def _passive_eigenbasis(a):
    """Factor ``g = a a^T`` (symmetric positive symplectic) as ``O diag(lam, 1/lam) O^T``.

    ``O`` is orthogonal and symplectic and ``lam`` ascends (most squeezed first).
    Working from the factor ``a`` via an SVD keeps strongly squeezed
    directions accurate.
    """
    n = a.shape[0] // 2
    c = commutation_matrix(n).astype(float)
    vecs, _, _ = np.linalg.svd(a)
    vecs = vecs[:, ::-1]
    chosen = []
    for idx in range(2 * n):
        v = vecs[:, idx].copy()
        for u in chosen:
            cu = c @ u
            v -= (u @ v) * u + (cu @ v) * cu
        nv = np.linalg.norm(v)
        if nv > 1e-6:
            chosen.append(v / nv)
        if len(chosen) == n:
            break
    u = np.column_stack(chosen)
    o = np.hstack([u, c @ u])
    lam = np.sum((a.T @ u) ** 2, axis=0)
    return o, lam


def _unitary(o):
    n = o.shape[0] // 2
    return o[:n, :n] + 1j * o[:n, n:]


def _interferometer_from_unitary(u, omega_a, omega_b):
    """Split a 2x2 unitary into ``U_BS(theta, phi) diag(e^{-i theta_a}, e^{-i theta_b})``."""
    c, s = abs(u[0, 0]), abs(u[0, 1])
    theta = math.atan2(s, c)
    tol = 1e-12
    if s < tol:
        phi, ta, tb = 0.0, -np.angle(u[0, 0]), -np.angle(u[1, 1])
    elif c < tol:
        tb = 0.0
        phi = np.angle(u[0, 1])
        ta = -np.angle(-u[1, 0]) - phi
    else:
        ta, tb = -np.angle(u[0, 0]), -np.angle(u[1, 1])
        phi = np.angle(u[0, 1]) + tb
    bs = BeamSplitterParams(theta, _wrap(phi), omega_a, omega_b)
    return InterferometerParams(bs, _wrap(ta), _wrap(tb))


def bloch_messiah_2(m, omega_ref):
    """Factor a 2x2 symplectic map as ``R(theta2) S(r, phi) R(theta1)``.

    The redundant outer rotation is fixed to ``theta2 = 0`` so the result is the
    polar form ``S(r, phi) R(theta1)``; identity and pure squeezers come back
    with both angles zero.
    """
    m = check_symplectic(m, "m")
    if m.shape != (2, 2):
        raise ValueError("bloch_messiah_2 expects a 2x2 matrix")
    w = check_positive(omega_ref, "omega_ref")
    d = _scaling([w])
    mt = d @ m @ np.linalg.inv(d)
    rot, p = polar(mt, side="left")
    r = math.acosh(max(1.0, 0.5 * (p[0, 0] + p[1, 1])))
    sh = math.sinh(r)
    phi = math.atan2(p[0, 1] / sh, (p[1, 1] - p[0, 0]) / (2 * sh)) if sh > 1e-14 else 0.0
    theta1 = math.atan2(rot[1, 0], rot[0, 0])
    return 0.0, SqueezeParams(r, phi, w), theta1


@dataclass(frozen=True)
class BlochMessiahFactors:
    """``M = B(post) . Q . [S_1 + ... + S_N] . B(pre)``.

    ``Q`` rescales from the input to the output reference frequencies and is
    the identity when they coincide.
    """

    pre_interferometer: InterferometerParams
    squeezes: tuple
    post_interferometer: InterferometerParams
    omega_in: np.ndarray
    omega_out: np.ndarray

    def rescaling(self):
        return np.linalg.inv(_scaling(self.omega_out)) @ _scaling(self.omega_in)

    def matrix(self):
        s = direct_sum(*(squeezer_matrix(q) for q in self.squeezes))
        return (
            interferometer_matrix(self.post_interferometer)
            @ self.rescaling()
            @ s
            @ interferometer_matrix(self.pre_interferometer)
        )


def bloch_messiah_4(m, omega_refs, omega_refs_out=None):
    """Bloch-Messiah factors of a two-mode symplectic map.

    Squeezes are returned with ``phi = 0`` and sorted by descending ``r``; all
    phases live in the interferometers.  ``omega_refs_out`` defaults to
    ``omega_refs``.
    """
    m = check_symplectic(m, "m")
    if m.shape != (4, 4):
        raise ValueError("bloch_messiah_4 expects a 4x4 matrix")
    w_in = check_frequencies(omega_refs, "omega_refs")
    w_out = w_in if omega_refs_out is None else check_frequencies(omega_refs_out)
    mt = _scaling(w_out) @ m @ np.linalg.inv(_scaling(w_in))
    o_left, lam = _passive_eigenbasis(mt)
    r = -0.5 * np.log(lam)
    sigma_inv = np.diag(np.exp(np.concatenate([r, -r])))
    o_right = sigma_inv @ o_left.T @ mt
    post = _interferometer_from_unitary(_unitary(o_left), *w_out)
    pre = _interferometer_from_unitary(_unitary(o_right), *w_in)
    squeezes = tuple(SqueezeParams(float(rk), 0.0, 1.0) for rk in r)
    return BlochMessiahFactors(pre, squeezes, post, w_in, w_out)


def state_squeezing(state, ref_freqs=None):
    """Squeezing parameters of a Gaussian state relative to the ground state at ``ref_freqs``.

    Returns ``r`` sorted in descending order; the mean vector is ignored.
    """
    ref = state.ref_freqs if ref_freqs is None else check_frequencies(ref_freqs)
    d = _scaling(ref)
    _, lam = _passive_eigenbasis(np.linalg.cholesky(2 * d @ state.v @ d))
    return np.sort(-0.5 * np.log(np.clip(lam, 1e-300, None)))[::-1]


def mode_squeezes(state, ref_freqs=None):
    """Bloch-Messiah squeezes of a state, each assigned to the mode it mostly occupies.

    For one mode this is just the state's squeezing parameter.  For two modes
    the squeeze whose output direction carries the larger weight on mode ``k``
    is reported at position ``k``.
    """
    ref = state.ref_freqs if ref_freqs is None else check_frequencies(ref_freqs)
    d = _scaling(ref)
    o, lam = _passive_eigenbasis(np.linalg.cholesky(2 * d @ state.v @ d))
    r = -0.5 * np.log(np.clip(lam, 1e-300, None))
    if r.size == 1:
        return r
    weight = np.abs(_unitary(o)) ** 2
    if weight[0, 0] >= weight[1, 0]:
        return r
    return r[::-1]


def _target_precovariance(m_f, omegas_f):
    minv = TransferMatrix(m_f).inverse().m
    v_f = ground_state_covariance(omegas_f).v
    return minv @ v_f @ minv.T


def precompensation_single(m_f, omega_i, omega_f, tol=1e-6):
    """Squeeze that, applied before ``m_f``, maps ground(omega_i) to ground(omega_f).

    Returns :class:`SqueezeParams` referenced to ``omega_i``.  The quadrant of
    ``phi`` is fixed from both the off-diagonal and the diagonal covariance
    match, so no sign ambiguity remains.
    """
    mf = m_f.m if isinstance(m_f, TransferMatrix) else np.asarray(m_f, dtype=float)
    mf = check_symplectic(mf, "m_f")
    wi = check_positive(omega_i, "omega_i")
    wf = check_positive(omega_f, "omega_f")
    vp = _target_precovariance(mf, [wf])
    ch2 = vp[0, 0] / wi + wi * vp[1, 1]
    two_r = math.acosh(max(1.0, ch2))
    sh2 = math.sinh(two_r)
    if sh2 > 1e-14:
        phi = math.atan2(2 * vp[0, 1] / sh2, (ch2 - 2 * vp[0, 0] / wi) / sh2)
    else:
        phi = 0.0
    sq = SqueezeParams(two_r / 2, phi, wi)
    final = evolve_covariance(mf @ squeezer_matrix(sq), ground_state_covariance([wi]))
    resid = final.occupations([wf])[0]
    if abs(resid) > tol:
        raise NumericalFailure(f"single-mode pre-compensation residual occupation {resid:.2e}")
    return sq


class TwoModeCompensation(NamedTuple):
    squeeze_a: SqueezeParams
    squeeze_b: SqueezeParams
    beamsplitter: BeamSplitterParams
    residual: float

    def matrix(self):
        s = direct_sum(squeezer_matrix(self.squeeze_a), squeezer_matrix(self.squeeze_b))
        return beamsplitter_matrix(self.beamsplitter) @ s


def _compensation_residual(params, mf, omegas_i, omegas_f):
    ra, pa, rb, pb, th, ph = params
    comp = TwoModeCompensation(
        SqueezeParams(ra, pa, omegas_i[0]),
        SqueezeParams(rb, pb, omegas_i[1]),
        BeamSplitterParams(th, ph, *omegas_i),
        0.0,
    )
    v = evolve_covariance(mf @ comp.matrix(), ground_state_covariance(omegas_i)).v
    d = _scaling(omegas_f)
    diff = d @ v @ d - 0.5 * np.eye(4)
    return diff[np.triu_indices(4)]


def precompensation_double(m_f, omegas_i, omegas_f, tol=1e-4, n_restarts=16, seed=0):
    """Squeezes and beam splitter that pre-compensate a two-mode separation map.

    The returned operations satisfy ``M_f . B_BS . (S_a + S_b)`` sending the
    ground state at ``omegas_i`` to the ground state at ``omegas_f``.  An
    analytic Bloch-Messiah solution seeds a Levenberg-Marquardt polish on the
    ten independent covariance entries; random restarts are used only if that
    fails to reach ``tol``.
    """
    mf = m_f.m if isinstance(m_f, TransferMatrix) else np.asarray(m_f, dtype=float)
    mf = check_symplectic(mf, "m_f")
    if mf.shape != (4, 4):
        raise ValueError("precompensation_double expects a 4x4 transfer matrix")
    wi = check_frequencies(omegas_i, "omegas_i")
    wf = check_frequencies(omegas_f, "omegas_f")

    d_i = _scaling(wi)
    g = 2 * d_i @ _target_precovariance(mf, wf) @ d_i
    o, lam = _passive_eigenbasis(np.linalg.cholesky(0.5 * (g + g.T)))
    r = -0.5 * np.log(lam)
    inter = _interferometer_from_unitary(_unitary(o), *wi)
    x0 = np.array(
        [
            r[0],
            -2 * inter.theta_a,
            r[1],
            -2 * inter.theta_b,
            inter.beamsplitter.theta_bs,
            inter.beamsplitter.phi_bs,
        ]
    )

    def solve(x):
        sol = least_squares(_compensation_residual, x, args=(mf, wi, wf), method="lm",
                            xtol=1e-15, ftol=1e-15, gtol=1e-15)
        return sol.x, float(np.max(np.abs(sol.fun)))

    best_x, best = solve(x0)
    if best > tol:
        rng = np.random.default_rng(seed)
        for _ in range(n_restarts):
            trial = np.concatenate([[3, math.pi, 3, math.pi, math.pi, math.pi] * rng.random(6)])
            x, res = solve(trial)
            if res < best:
                best_x, best = x, res
            if best <= tol:
                break
    if best > tol:
        raise NumericalFailure(f"two-mode pre-compensation failed, best residual {best:.2e}")
    ra, pa, rb, pb, th, ph = best_x
    return _canonical_two_mode(ra, pa, rb, pb, th, ph, wi, best)


def _canonical_two_mode(ra, pa, rb, pb, th, ph, wi, residual):
    # B(theta + pi, phi) = B(theta, phi) . (-I), and -I commutes with squeezers
    sa, sb = SqueezeParams(ra, pa, wi[0]), SqueezeParams(rb, pb, wi[1])
    th = math.remainder(th, math.pi)
    if th < 0:
        th, ph = -th, ph + math.pi
    return TwoModeCompensation(sa, sb, BeamSplitterParams(th, _wrap(ph), *wi), residual)
