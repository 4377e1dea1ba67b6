"""Fast invariant checks that need no test framework (used by ``ionsep selftest``)."""

import math

import numpy as np

from .crystal import CrystalConfig, equilibrium_geometry
from .decomp import bloch_messiah_4
from .fock import gaussian_to_fock, squeezed_vacuum_populations
from .protocols import ProtocolConfig, run_onthefly, run_reversed
from .symplectic import GaussianState, integrate_transfer, symplectic_defect
from .waveforms import BMB_COEFFICIENTS, bmb_segments, boundary_values


def _random_symplectic(rng, n):
    # exp of C times a random symmetric form
    from scipy.linalg import expm

    from .symplectic import commutation_matrix

    a = rng.normal(size=(2 * n, 2 * n)) * 0.4
    return expm(commutation_matrix(n) @ (a + a.T))


def check_oscillator():
    w = 2 * math.pi
    m = integrate_transfer(lambda t: np.diag([1.0, w * w]), 0.0, 10.0, dt=1e-3).m
    exact = np.array([[math.cos(w * 10), -w * math.sin(w * 10)],
                      [math.sin(w * 10) / w, math.cos(w * 10)]])
    err = float(np.max(np.abs(m - exact)))
    return err < 1e-8, f"max deviation {err:.1e}"


def check_mode_identities():
    cfg = CrystalConfig()
    g = equilibrium_geometry(cfg)
    rel_op = abs(g.omega_op / (math.sqrt(3) * cfg.omega0) - 1)
    pot = g.potential_ab
    ev = np.sqrt(np.linalg.eigvalsh(pot))
    rel_ab = max(abs(g.omega_a / ev[1] - 1), abs(g.omega_b / ev[0] - 1))
    ok = rel_op < 1e-9 and rel_ab < 1e-9
    return ok, f"omega_op error {rel_op:.1e}, a/b error {rel_ab:.1e}"


def check_fourier_boundaries():
    w0 = 2 * math.pi
    segs = bmb_segments(w0, coefficients=BMB_COEFFICIENTS, enforce_boundary_conditions=False)
    floor = w0 / 30
    want = {"down": (w0, 0, floor, 0), "catchB": (floor, 0, w0, 0), "catchM": (floor, 0, w0, 0)}
    worst = max(
        float(np.max(np.abs((boundary_values(s) - np.array(want[n])) / s.amplitude_ref)))
        for n, s in segs.items()
    )
    return worst < 0.01, f"worst normalized boundary error {worst:.4f}"


def check_fock_oracle():
    r = 0.5
    v = 0.5 * np.diag([math.exp(-2 * r), math.exp(2 * r)])
    fock = gaussian_to_fock(GaussianState(v, None, [1.0]), n_max=40)
    exact = squeezed_vacuum_populations(r, 40).populations
    err = float(np.max(np.abs(fock.populations - exact)))
    return err < 1e-10, f"max population error {err:.1e}"


def check_bloch_messiah():
    rng = np.random.default_rng(1)
    worst = 0.0
    for _ in range(20):
        m = _random_symplectic(rng, 2)
        f = bloch_messiah_4(m, np.array([1.0, 0.7]))
        worst = max(worst, float(np.max(np.abs(f.matrix() - m))))
    return worst < 1e-9, f"max reconstruction error {worst:.1e}"


def check_protocol_symplectic():
    res = run_onthefly(ProtocolConfig())
    defect = max(symplectic_defect(res.trajectory.m_op[-1]),
                 symplectic_defect(res.trajectory.m_ab[-1]))
    return defect < 1e-9, f"final defect {defect:.1e}, n = {np.round(res.final_occupations, 4)}"


def check_reversal():
    rev = run_reversed(ProtocolConfig())
    ident = max(rev.identity_error_op, rev.identity_error_ab)
    ok = rev.position_error < 1e-6 and ident < 1e-7
    return ok, f"position error {rev.position_error:.1e} um, identity error {ident:.1e}"


CHECKS = (
    ("oscillator oracle", check_oscillator),
    ("mode identities", check_mode_identities),
    ("Fourier boundary conditions", check_fourier_boundaries),
    ("Fock oracle", check_fock_oracle),
    ("Bloch-Messiah round trip", check_bloch_messiah),
    ("protocol symplecticity", check_protocol_symplectic),
    ("time reversal", check_reversal),
)


def run_selftest():
    """Run every check; returns a list of ``(name, passed, detail)``."""
    out = []
    for name, fn in CHECKS:
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash is a failed check, not an abort
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        out.append((name, bool(ok), detail))
    return out
