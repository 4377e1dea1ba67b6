"""Published reference values for the two bundled scenarios and a comparison helper.

Each entry is ``(reference, tolerance, kind)`` where ``kind`` is ``"abs"``
(absolute band), ``"factor"`` (within a multiplicative factor), ``"rel"``
(relative band) or ``"min"`` (lower bound).
"""

import math
from dataclasses import replace

from .protocols import ProtocolConfig

REFERENCE = {
    "precompensated": {
        "r_op": (1.597, 0.08, "abs"),
        "phi_op": (-0.671, 0.05, "phase"),
        "r_a": (1.938, 0.10, "abs"),
        "r_b": (1.483, 0.08, "abs"),
        "theta_bs": (1.714, 0.09, "abs"),
    },
    "onthefly": {
        "t_catch": (1.4, 0.1, "abs"),
        "t_f": (2.8, 0.1, "abs"),
        "n_op": (0.006, 2.0, "factor"),
        "n_a": (0.034, 2.0, "factor"),
        "n_b": (0.11, 2.0, "factor"),
        "r_op": (0.0788, 0.25, "rel"),
        "r_a": (0.0289, 0.25, "rel"),
        "r_b": (0.365, 0.25, "rel"),
        "P0_op": (0.99, None, "min"),
        "P00_ab": (0.90, None, "min"),
    },
}


def _within(value, ref, tol, kind):
    if kind == "abs":
        return abs(value - ref) <= tol
    if kind == "phase":
        # squeeze phases are compared modulo a full turn
        return abs(math.remainder(value - ref, 2 * math.pi)) <= tol
    if kind == "factor":
        return value > 0 and ref / tol <= value <= ref * tol
    if kind == "rel":
        return abs(value / ref - 1) <= tol
    return value >= ref


def is_reference_setup(config):
    """True when ``config`` is the reference scenario up to numerical settings."""
    base = ProtocolConfig(mode=config.mode)
    probe = replace(config, dt=base.dt, record_every=base.record_every, n_max=base.n_max)
    return probe == base


def measured_values(result):
    if result.mode == "precompensated":
        comp = result.compensation
        theta = comp["beamsplitter"]["theta_bs"]
        theta_eq = comp["beamsplitter_equivalent"]["theta_bs"]
        ref = REFERENCE["precompensated"]["theta_bs"][0]
        return {
            "r_op": comp["op"]["r"],
            "phi_op": comp["op"]["phi"],
            "r_a": comp["a"]["r"],
            "r_b": comp["b"]["r"],
            # the mixer is defined up to theta -> pi - theta; report the closer form
            "theta_bs": min((theta, theta_eq), key=lambda x: abs(x - ref)),
        }
    n = result.final_occupations
    r = result.final_squeezes
    return {
        "t_catch": result.timing["t_catch"],
        "t_f": result.timing["t_f"],
        "n_op": n[0], "n_a": n[1], "n_b": n[2],
        "r_op": r[0], "r_a": r[1], "r_b": r[2],
        "P0_op": result.fock_op[0],
        "P00_ab": result.fock_ab[0, 0],
    }


def compare(result):
    """List of ``{quantity, value, reference, tolerance, kind, within}`` records."""
    values = measured_values(result)
    out = []
    for name, (ref, tol, kind) in REFERENCE[result.mode].items():
        v = float(values[name])
        out.append({"quantity": name, "value": v, "reference": ref, "tolerance": tol,
                    "kind": kind, "within": bool(_within(v, ref, tol, kind))})
    return out
