"""End-to-end separation protocols, occupation series and time-reversed runs."""

import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import NumericalFailure, check_positive
from .crystal import CrystalConfig, final_frequencies, initial_frequencies
from .decomp import (
    SqueezeParams,
    TwoModeCompensation,
    mode_squeezes,
    precompensation_double,
    precompensation_single,
    squeezer_matrix,
)
from .dynamics import integrate_protocol
from .fock import DEFAULT_N_MAX, gaussian_to_fock
from .symplectic import GaussianState, evolve_covariance, ground_state_covariance, symplectic_defect
from .waveforms import (
    BMB_COEFFICIENTS,
    SEGMENT_NAMES,
    bmb_segments,
    onthefly_schedule,
    precompensated_schedule,
)

MODES = ("precompensated", "onthefly")

TRAJECTORY_COLUMNS = (
    "t_us", "c_D1_um", "c_H_um", "c_D2_um", "w_D1_um", "w_D2_um",
    "k_D", "k_H", "n_op", "n_a", "n_b", "theta_dot",
)


@dataclass(frozen=True)
class PrecompensatedParams:
    tau: float = 0.365
    tau0: float = 1.1
    tau_up: float = 0.73
    eta: float = 0.4
    ramp_applies_to: str = "frequency"

    def __post_init__(self):
        for name in ("tau", "tau0", "tau_up"):
            check_positive(getattr(self, name), name)
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.ramp_applies_to not in ("frequency", "curvature"):
            raise ValueError("ramp_applies_to must be 'frequency' or 'curvature'")


def _coeff_copy(coefficients):
    return {
        name: (tuple(float(x) for x in a), tuple(float(x) for x in b))
        for name, (a, b) in coefficients.items()
    }


@dataclass(frozen=True)
class OnTheFlyParams:
    tau1: float = 0.85
    tau2: float = 1.4
    floor_ratio: float = 1 / 30
    eta: float = 0.4
    catch_threshold: float = 50.0
    coefficients: dict = field(default_factory=lambda: _coeff_copy(BMB_COEFFICIENTS))
    enforce_boundary_conditions: bool = True
    hold_before: float = 0.0
    hold_after: float = 0.0

    def __post_init__(self):
        for name in ("tau1", "tau2", "floor_ratio"):
            check_positive(getattr(self, name), name)
        if self.eta < 0 or self.catch_threshold < 0:
            raise ValueError("eta and catch_threshold must be non-negative")
        if self.hold_before < 0 or self.hold_after < 0:
            raise ValueError("hold durations must be non-negative")
        missing = set(SEGMENT_NAMES) - set(self.coefficients)
        if missing:
            raise ValueError(f"missing Fourier segments: {sorted(missing)}")
        object.__setattr__(self, "coefficients", _coeff_copy(self.coefficients))


@dataclass(frozen=True)
class ProtocolConfig:
    crystal: CrystalConfig = field(default_factory=CrystalConfig)
    mode: str = "onthefly"
    precompensated: PrecompensatedParams = field(default_factory=PrecompensatedParams)
    onthefly: OnTheFlyParams = field(default_factory=OnTheFlyParams)
    dt: float = 1e-4
    record_every: int = 10
    n_max: int = DEFAULT_N_MAX
    reversed: bool = False

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        check_positive(self.dt, "dt")
        if int(self.record_every) < 1:
            raise ValueError("record_every must be >= 1")
        if int(self.n_max) < 1:
            raise ValueError("n_max must be >= 1")

    def to_dict(self):
        return asdict(self)

    def segments(self):
        p = self.onthefly
        return bmb_segments(self.crystal.omega0, p.tau1, p.tau2, p.floor_ratio,
                            p.coefficients, p.enforce_boundary_conditions)

    def schedule(self, segments=None):
        w0 = self.crystal.omega0
        if self.mode == "precompensated":
            p = self.precompensated
            return precompensated_schedule(w0, p.tau, p.tau0, p.tau_up, p.eta, p.ramp_applies_to)
        p = self.onthefly
        segments = self.segments() if segments is None else segments
        tol = 1e-6 if p.enforce_boundary_conditions else 0.05
        return onthefly_schedule(w0, segments, p.floor_ratio, p.eta, p.catch_threshold,
                                 p.hold_before, p.hold_after, tol)


def reverse_protocol(config):
    """The time-mirrored counterpart of ``config``; reversing twice gives ``config`` back."""
    return replace(config, reversed=not config.reversed)


@dataclass
class ProtocolResult:
    mode: str
    trajectory: object
    t: np.ndarray
    n_op: np.ndarray
    n_a: np.ndarray
    n_b: np.ndarray
    theta_dot: np.ndarray
    final_occupations: np.ndarray
    initial_states: tuple
    final_states: tuple
    reference_initial: np.ndarray
    reference_final: np.ndarray
    final_squeezes: np.ndarray
    fock_op: object
    fock_ab: object
    timing: dict
    compensation: dict = None
    classical_residuals: dict = None
    config: ProtocolConfig = None

    def trajectory_table(self):
        tr = self.trajectory
        return np.column_stack([
            tr.t, tr.positions[:, 0], tr.positions[:, 1], tr.positions[:, 2],
            tr.wells[:, 0], tr.wells[:, 1], tr.k_d, tr.k_h,
            self.n_op, self.n_a, self.n_b, self.theta_dot,
        ])

    def summary(self):
        out = {
            "mode": self.mode,
            "final_occupations": dict(zip(("op", "a", "b"), map(float, self.final_occupations))),
            "final_squeezes": dict(zip(("op", "a", "b"), map(float, self.final_squeezes))),
            "timing": {k: (None if v is None else float(v)) for k, v in self.timing.items()},
            "fock_op": self.fock_op.table(4),
            "fock_ab": self.fock_ab.table(4),
            "fock_truncation_defect": {
                "op": self.fock_op.truncation_defect,
                "ab": self.fock_ab.truncation_defect,
            },
            "reference_frequencies": {
                "initial": self.reference_initial.tolist(),
                "final": self.reference_final.tolist(),
            },
            "classical_residuals": self.classical_residuals,
            "max_symplectic_defect": float(self.trajectory.max_defect()),
        }
        if self.compensation is not None:
            out["compensation"] = self.compensation
        return out


def _occupation_series(m, v0, freqs):
    v = np.einsum("tij,jk,tlk->til", m, v0, m)
    n = len(freqs)
    out = []
    for k, w in enumerate(freqs):
        out.append((0.5 * v[:, k, k] + 0.5 * w * w * v[:, n + k, n + k]) / w - 0.5)
    return out


def _squeeze_dict(sq):
    return {"r": sq.r, "phi": sq.phi, "omega_ref": sq.omega_ref}


def _finish(config, traj, v_op0, v_ab0, compensation, runtime):
    crystal = config.crystal
    w_i = initial_frequencies(crystal)
    w_f = final_frequencies(crystal)
    (n_op,) = _occupation_series(traj.m_op, v_op0.v, w_f[:1])
    n_a, n_b = _occupation_series(traj.m_ab, v_ab0.v, w_f[1:])
    op_f = evolve_covariance(traj.m_op[-1], v_op0)
    ab_f = evolve_covariance(traj.m_ab[-1], v_ab0)
    op_f = GaussianState(op_f.v, op_f.mean, w_f[:1])
    ab_f = GaussianState(ab_f.v, ab_f.mean, w_f[1:])
    finals = np.concatenate([op_f.occupations(), ab_f.occupations()])
    squeezes = np.concatenate([mode_squeezes(op_f), mode_squeezes(ab_f)])
    fock_op = gaussian_to_fock(op_f, n_max=config.n_max)
    fock_ab = gaussian_to_fock(ab_f, n_max=config.n_max)
    c = traj.half_spacing[-1]
    residuals = {
        "half_spacing_um": float(c),
        "well_offset_um": float(c - traj.wells[-1, 1]),
        "velocity_um_per_us": float(traj.half_spacing_rate[-1]),
    }
    timing = {"t_catch": traj.t_catch, "t_f": float(traj.t[-1]), "runtime_s": runtime}
    return ProtocolResult(
        mode=config.mode,
        trajectory=traj,
        t=traj.t,
        n_op=n_op,
        n_a=n_a,
        n_b=n_b,
        theta_dot=traj.theta_dot,
        final_occupations=finals,
        initial_states=(v_op0, v_ab0),
        final_states=(op_f, ab_f),
        reference_initial=w_i,
        reference_final=w_f,
        final_squeezes=squeezes,
        fock_op=fock_op,
        fock_ab=fock_ab,
        timing=timing,
        compensation=compensation,
        classical_residuals=residuals,
        config=config,
    )


def run_precompensated(config, check_tol=1e-6):
    """Sinusoidal ramp separation with pre-squeezing and a pre-interferometer.

    The compensation is solved from the protocol's own final transfer
    matrices, applied to the initial ground states, and checked to leave every
    final occupation below ``check_tol``.
    """
    if config.mode != "precompensated":
        raise ValueError("config.mode must be 'precompensated'")
    start = time.perf_counter()
    crystal = config.crystal
    w_i = initial_frequencies(crystal)
    w_f = final_frequencies(crystal)
    traj = integrate_protocol(crystal, config.schedule(), config.dt, config.record_every)
    sq = precompensation_single(traj.m_op_final, w_i[0], w_f[0])
    comp = precompensation_double(traj.m_ab_final, w_i[1:], w_f[1:])
    v_op0 = evolve_covariance(squeezer_matrix(sq), ground_state_covariance(w_i[:1]))
    v_ab0 = evolve_covariance(comp.matrix(), ground_state_covariance(w_i[1:]))
    bs = comp.beamsplitter
    compensation = {
        "op": _squeeze_dict(sq),
        "a": _squeeze_dict(comp.squeeze_a),
        "b": _squeeze_dict(comp.squeeze_b),
        "beamsplitter": {"theta_bs": bs.theta_bs, "phi_bs": bs.phi_bs},
        "beamsplitter_equivalent": {
            "theta_bs": math.pi - bs.theta_bs,
            "phi_bs": math.remainder(bs.phi_bs + math.pi, 2 * math.pi),
        },
        "solver_residual": comp.residual,
    }
    result = _finish(config, traj, v_op0, v_ab0, compensation, time.perf_counter() - start)
    worst = float(np.max(np.abs(result.final_occupations)))
    if worst > check_tol:
        raise NumericalFailure(f"compensated final occupation {worst:.2e} exceeds {check_tol}")
    result.timing["runtime_s"] = time.perf_counter() - start
    return result


def run_onthefly(config, segments=None, schedule=None):
    """On-the-fly compensated separation from ground states.

    ``segments`` overrides the configured Fourier segments; ``schedule`` skips
    schedule construction entirely (used for replayed perturbed runs).
    """
    if config.mode != "onthefly":
        raise ValueError("config.mode must be 'onthefly'")
    start = time.perf_counter()
    crystal = config.crystal
    w_i = initial_frequencies(crystal)
    sched = config.schedule(segments) if schedule is None else schedule
    traj = integrate_protocol(crystal, sched, config.dt, config.record_every)
    v_op0 = ground_state_covariance(w_i[:1])
    v_ab0 = ground_state_covariance(w_i[1:])
    return _finish(config, traj, v_op0, v_ab0, None, time.perf_counter() - start)


def final_occupations(config, segments=None):
    """Final ``(n_op, n_a, n_b)`` of an on-the-fly run without Fock post-processing."""
    crystal = config.crystal
    w_i = initial_frequencies(crystal)
    w_f = final_frequencies(crystal)
    traj = integrate_protocol(crystal, config.schedule(segments), config.dt,
                              record_every=10**9)
    op = evolve_covariance(traj.m_op[-1], ground_state_covariance(w_i[:1]))
    ab = evolve_covariance(traj.m_ab[-1], ground_state_covariance(w_i[1:]))
    return np.concatenate([op.occupations(w_f[:1]), ab.occupations(w_f[1:])])


_TIME_FLIP = {1: np.diag([-1.0, 1.0]), 2: np.diag([-1.0, -1.0, 1.0, 1.0])}


@dataclass
class ReversalResult:
    forward: ProtocolResult
    trajectory: object
    m_op_rev: np.ndarray
    m_ab_rev: np.ndarray
    position_error: float
    velocity_error: float
    identity_error_op: float
    identity_error_ab: float
    recombined_occupations: np.ndarray
    forward_occupations_from_ground: np.ndarray

    def summary(self):
        return {
            "position_error_um": self.position_error,
            "velocity_error_um_per_us": self.velocity_error,
            "identity_error_op": self.identity_error_op,
            "identity_error_ab": self.identity_error_ab,
            "recombined_occupations": self.recombined_occupations.tolist(),
            "forward_occupations_from_ground": self.forward_occupations_from_ground.tolist(),
        }


def run_reversed(config):
    """Run the forward protocol, then its time mirror from the separated state.

    The mirrored run starts at the forward end point with velocities flipped
    and uses the mirrored curvature waveforms and replayed well positions.
    The physical reverse map is ``T M_mirror T`` with ``T`` flipping momenta.
    The recombined state starts from the separated ground states; for the
    pre-compensated protocol the inverse compensation is applied at the end.
    """
    fwd_config = replace(config, reversed=False)
    forward = run_protocol(fwd_config)
    crystal = config.crystal
    traj = forward.trajectory
    init = traj.final_state.time_reversed()
    init = replace(init, t=0.0)
    back = integrate_protocol(crystal, traj.resolved_schedule.reversed(), config.dt,
                              config.record_every, initial_state=init)
    m_op_rev = _TIME_FLIP[1] @ back.m_op[-1] @ _TIME_FLIP[1]
    m_ab_rev = _TIME_FLIP[2] @ back.m_ab[-1] @ _TIME_FLIP[2]
    end = back.final_state
    pos_err = float(np.max(np.abs(end.positions - traj.positions[0])))
    vel_err = float(np.max(np.abs(-end.velocities - traj.velocities[0])))
    id_op = float(np.max(np.abs(m_op_rev @ traj.m_op[-1] - np.eye(2))))
    id_ab = float(np.max(np.abs(m_ab_rev @ traj.m_ab[-1] - np.eye(4))))

    w_i, w_f = forward.reference_initial, forward.reference_final
    op = evolve_covariance(m_op_rev, ground_state_covariance(w_f[:1]))
    ab = evolve_covariance(m_ab_rev, ground_state_covariance(w_f[1:]))
    if config.mode == "precompensated":
        comp = forward.compensation
        s_op = squeezer_matrix(SqueezeParams(**comp["op"]))
        op = evolve_covariance(np.linalg.inv(s_op), op)
        c_ab = _compensation_from_summary(comp, w_i)
        ab = evolve_covariance(np.linalg.inv(c_ab), ab)
    recombined = np.concatenate([op.occupations(w_i[:1]), ab.occupations(w_i[1:])])
    if config.mode == "onthefly":
        fwd_ground = forward.final_occupations
    else:
        op_g = evolve_covariance(traj.m_op[-1], ground_state_covariance(w_i[:1]))
        ab_g = evolve_covariance(traj.m_ab[-1], ground_state_covariance(w_i[1:]))
        fwd_ground = np.concatenate([op_g.occupations(w_f[:1]), ab_g.occupations(w_f[1:])])
    for m in (m_op_rev, m_ab_rev):
        if symplectic_defect(m) > 1e-6:
            raise NumericalFailure("reverse transfer matrix lost symplecticity")
    return ReversalResult(forward, back, m_op_rev, m_ab_rev, pos_err, vel_err, id_op, id_ab,
                          recombined, fwd_ground)


def _compensation_from_summary(comp, w_i):
    from .decomp import BeamSplitterParams

    tm = TwoModeCompensation(
        SqueezeParams(**comp["a"]),
        SqueezeParams(**comp["b"]),
        BeamSplitterParams(comp["beamsplitter"]["theta_bs"], comp["beamsplitter"]["phi_bs"],
                           w_i[1], w_i[2]),
        comp["solver_residual"],
    )
    return tm.matrix()


def run_protocol(config):
    if config.reversed:
        return run_reversed(config)
    if config.mode == "precompensated":
        return run_precompensated(config)
    return run_onthefly(config)


class SeparationProtocol(BaseEstimator):
    """Estimator wrapper: ``fit()`` runs the configured protocol.

    Fitted attributes: ``result_`` (:class:`ProtocolResult`),
    ``final_occupations_``, ``trajectory_`` and, for the pre-compensated
    protocol, ``compensation_``.
    """

    def __init__(self, config=None, dt=None):
        self.config = config
        self.dt = dt

    def _resolved_config(self):
        cfg = ProtocolConfig() if self.config is None else self.config
        if self.dt is not None:
            cfg = replace(cfg, dt=self.dt)
        return cfg

    def fit(self, X=None, y=None):
        cfg = self._resolved_config()
        if cfg.reversed:
            raise ValueError("use run_reversed for reversed configurations")
        self.result_ = run_protocol(cfg)
        self.final_occupations_ = self.result_.final_occupations
        self.trajectory_ = self.result_.trajectory
        self.compensation_ = self.result_.compensation
        return self

    def score(self, X=None, y=None):
        """Negative total final occupation (higher is better)."""
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "result_")
        return -float(np.sum(self.final_occupations_))
