"""Classical three-ion motion with the mode transfer matrices integrated alongside.

The two data ions feel wells centred at ``-w`` and ``+w`` (mirror symmetric),
the helper feels a well at the origin, and all three interact through the full
Coulomb force.  The out-of-phase and (a, b) transfer matrices are advanced on
the same RK4 clock, with their quadratic forms built from the instantaneous
half spacing ``c = (x_D2 - x_D1) / 2``.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import _kernel
from ._validation import NumericalFailure, check_positive
from .crystal import equilibrium_half_spacing, mode_geometry
from .symplectic import TransferMatrix, symplectic_defect
from .waveforms import ReplayTable

_WELL_CODES = {"origin": 0, "friction": 1, "replay": 2}
_EMPTY = np.zeros(2)


class CatchNotReached(NumericalFailure):
    """The ions never reached the catch threshold within the time limit."""


@dataclass(frozen=True)
class ClassicalState:
    positions: np.ndarray
    velocities: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float).reshape(3)
        v = np.asarray(self.velocities, dtype=float).reshape(3)
        if not (x[0] < x[1] < x[2]):
            raise ValueError(f"ion order D1 < H < D2 violated: {x}")
        object.__setattr__(self, "positions", x)
        object.__setattr__(self, "velocities", v)

    @property
    def half_spacing(self):
        return 0.5 * (self.positions[2] - self.positions[0])

    def time_reversed(self):
        return ClassicalState(self.positions.copy(), -self.velocities, self.t)


@dataclass(frozen=True)
class CatchEvent:
    t_catch: float
    threshold: float


@dataclass(frozen=True)
class Wells:
    """Instantaneous well minima and curvatures."""

    w_d1: float
    w_d2: float
    k_d: float
    k_h: float
    w_h: float = 0.0


def classical_derivatives(state, wells, config):
    """Time derivative ``(x_dot, v_dot)`` of the three-ion state."""
    x, v = state.positions, state.velocities
    d12, d13, d23 = x[1] - x[0], x[2] - x[0], x[2] - x[1]
    if min(d12, d23) < 1e-6:
        raise NumericalFailure(f"near collision: ion separations {d12:.3g}, {d23:.3g} um")
    ke = config.coulomb_constant
    f12, f13, f23 = ke / d12**2, ke / d13**2, ke / d23**2
    a = np.array(
        [
            (-wells.k_d * (x[0] - wells.w_d1) - f12 - f13) / config.m_d,
            (-wells.k_h * (x[1] - wells.w_h) + f12 - f23) / config.m_h,
            (-wells.k_d * (x[2] - wells.w_d2) + f13 + f23) / config.m_d,
        ]
    )
    return np.concatenate([v, a])


def classical_energy(state, wells, config):
    """Total energy of the three ions (amu um^2 / us^2)."""
    x, v = state.positions, state.velocities
    m = np.array([config.m_d, config.m_h, config.m_d])
    kin = 0.5 * np.sum(m * v * v)
    pot = 0.5 * wells.k_d * ((x[0] - wells.w_d1) ** 2 + (x[2] - wells.w_d2) ** 2)
    pot += 0.5 * wells.k_h * (x[1] - wells.w_h) ** 2
    ke = config.coulomb_constant
    pot += ke / (x[1] - x[0]) + ke / (x[2] - x[0]) + ke / (x[2] - x[1])
    return kin + pot


def equilibrium_state(config, k_d):
    c = equilibrium_half_spacing(config, k_d)
    return ClassicalState([-c, 0.0, c], [0.0, 0.0, 0.0], 0.0)


@dataclass(frozen=True)
class Trajectory:
    """Sampled classical motion, well data and transfer matrices.

    ``m_op[i]`` and ``m_ab[i]`` map the initial mode operators to time
    ``t[i]``.  ``resolved_schedule`` has the catch time filled in and every
    friction phase replaced by the well positions it produced, so it can be
    replayed or time-mirrored.
    """

    t: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    wells: np.ndarray
    k_d: np.ndarray
    k_h: np.ndarray
    k_d_dot: np.ndarray
    k_h_dot: np.ndarray
    theta_dot: np.ndarray
    m_op: np.ndarray
    m_ab: np.ndarray
    resolved_schedule: object
    phase_starts: np.ndarray
    dt: float
    config: object = field(repr=False)
    t_catch: float = None

    @property
    def final_state(self):
        return ClassicalState(self.positions[-1], self.velocities[-1], self.t[-1])

    @property
    def m_op_final(self):
        return TransferMatrix(self.m_op[-1], self.t[0], self.t[-1])

    @property
    def m_ab_final(self):
        return TransferMatrix(self.m_ab[-1], self.t[0], self.t[-1])

    @property
    def half_spacing(self):
        return 0.5 * (self.positions[:, 2] - self.positions[:, 0])

    @property
    def half_spacing_rate(self):
        return 0.5 * (self.velocities[:, 2] - self.velocities[:, 0])

    def geometry(self):
        """Mode geometry at every sample (arrays)."""
        return mode_geometry(self.config, self.k_d, self.k_h, self.half_spacing,
                             self.k_d_dot, self.half_spacing_rate, self.k_h_dot)

    def max_defect(self):
        return max(
            max(symplectic_defect(m) for m in self.m_op),
            max(symplectic_defect(m) for m in self.m_ab),
        )


def _encode_phase(phase):
    well = _WELL_CODES[phase.well]
    if phase.replay is not None and well == 2:
        rw, rwd, rdt = phase.replay.w, phase.replay.w_dot, phase.replay.dt
    else:
        rw, rwd, rdt = _EMPTY, _EMPTY, 1.0
    return phase.data.encode(), phase.helper.encode(), well, float(phase.eta), rw, rwd, rdt


def integrate_protocol(config, schedule, dt=1e-4, record_every=10, initial_state=None,
                       t_max=20.0, defect_tol=1e-6):
    """Integrate the ions and both transfer matrices through ``schedule``.

    Starts from the symmetric equilibrium of the first wells at rest unless
    ``initial_state`` is given.  Raises :class:`CatchNotReached` if an
    open-ended phase does not reach the threshold before ``t_max`` and
    :class:`NumericalFailure` on a near collision or symplecticity loss.
    """
    check_positive(dt, "dt")
    record_every = int(record_every)
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    md, mh, ke = config.m_d, config.m_h, config.coulomb_constant
    if initial_state is None:
        k_start, _ = _kernel._seg_curvature(schedule.phases[0].data.encode(), 0.0, md)
        if k_start <= 0:
            raise ValueError("initial data-well curvature must be positive for an equilibrium start")
        initial_state = equilibrium_state(config, k_start)
    y = np.concatenate([initial_state.positions, initial_state.velocities,
                        np.eye(2).ravel(), np.eye(4).ravel()])
    x_ref = float(y[2])
    threshold = -1.0 if schedule.catch_threshold is None else float(schedule.catch_threshold)

    max_steps = int(np.ceil(t_max / dt))
    est = sum(int(np.ceil(p.duration / dt)) + 1 if p.duration else max_steps for p in schedule.phases)
    rec = np.empty((est // record_every + len(schedule.phases) + 2, _kernel.N_REC))
    rec_count = 0
    step_offset = 0
    t = float(initial_state.t)
    starts, resolved = [], []
    t_catch = None
    for phase in schedule.phases:
        seg_d, seg_h, well, eta, rw, rwd, rdt = _encode_phase(phase)
        duration = -1.0 if phase.duration is None else float(phase.duration)
        if phase.well == "friction":
            n_nodes = max(1, int(np.ceil(duration / dt - 1e-9))) + 1
            tab_w, tab_wd = np.empty(n_nodes), np.empty(n_nodes)
        else:
            tab_w, tab_wd = _EMPTY, _EMPTY
        steps_left = max(0, int(np.ceil((t_max - t) / dt)))  # t_max is absolute
        status, elapsed, n_steps, rec_count = _kernel.run_phase(
            y, t, duration, dt, seg_d, seg_h, well, eta, rw, rwd, rdt, md, mh, ke,
            threshold, x_ref, steps_left, rec, rec_count, record_every, step_offset,
            tab_w, tab_wd,
        )
        if status == _kernel.COLLISION:
            raise NumericalFailure(f"near collision in phase {phase.label!r} at t = {t + elapsed:.4f} us")
        if status == _kernel.NOT_CAUGHT:
            raise CatchNotReached(
                f"catch threshold {threshold} um not reached within {t_max} us"
            )
        starts.append(t)
        if phase.duration is None:
            t_catch = t + elapsed
            phase = replace(phase, duration=elapsed) if elapsed > 0 else None
        elif phase.well == "friction":
            table = ReplayTable(phase.duration / (n_nodes - 1), tab_w, tab_wd)
            phase = replace(phase, well="replay", replay=table)
        if phase is not None:
            resolved.append(phase)
        t += elapsed
        step_offset += n_steps

    last = schedule.phases[-1]
    seg_d, seg_h, well, eta, rw, rwd, rdt = _encode_phase(last)
    s_end = t - starts[-1]
    _, aux = _kernel.node_aux(s_end, y, seg_d, seg_h, well, eta, rw, rwd, rdt, md, mh, ke)
    _kernel._record(rec, rec_count, t, y, aux)
    rec = rec[: rec_count + 1]

    resolved_schedule = replace(schedule, phases=tuple(resolved), catch_threshold=None)
    traj = Trajectory(
        t=rec[:, 0],
        positions=rec[:, 1:4],
        velocities=rec[:, 4:7],
        wells=rec[:, 7:9],
        k_d=rec[:, 9],
        k_h=rec[:, 10],
        k_d_dot=rec[:, 11],
        k_h_dot=rec[:, 12],
        theta_dot=rec[:, 13],
        m_op=rec[:, 14:18].reshape(-1, 2, 2),
        m_ab=rec[:, 18:34].reshape(-1, 4, 4),
        resolved_schedule=resolved_schedule,
        phase_starts=np.array(starts + [t]),
        dt=dt,
        config=config,
        t_catch=t_catch,
    )
    defect = max(symplectic_defect(traj.m_op[-1]), symplectic_defect(traj.m_ab[-1]))
    if defect > defect_tol:
        raise NumericalFailure(f"symplecticity defect {defect:.2e}; reduce dt (now {dt:g})")
    return traj


def detect_catch(traj, threshold):
    """First time the outer data ion has moved ``threshold`` from its start.

    Interpolates linearly between samples.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    disp = np.abs(traj.positions[:, 2] - traj.positions[0, 2])
    hit = np.nonzero(disp >= threshold)[0]
    if hit.size == 0:
        raise CatchNotReached(f"displacement never reaches {threshold} um")
    i = int(hit[0])
    if i == 0:
        return CatchEvent(float(traj.t[0]), float(threshold))
    f = (threshold - disp[i - 1]) / (disp[i] - disp[i - 1])
    return CatchEvent(float(traj.t[i - 1] + f * (traj.t[i] - traj.t[i - 1])), float(threshold))


def reverse_initial_state(traj):
    """Final classical state with velocities flipped, at time zero."""
    s = traj.final_state
    return ClassicalState(s.positions.copy(), -s.velocities, 0.0)


__all__ = [
    "CatchEvent",
    "CatchNotReached",
    "ClassicalState",
    "Trajectory",
    "Wells",
    "classical_derivatives",
    "classical_energy",
    "detect_catch",
    "equilibrium_state",
    "integrate_protocol",
    "reverse_initial_state",
]
