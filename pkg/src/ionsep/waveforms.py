"""Well-frequency waveforms and the piecewise schedules built from them.

A schedule is a sequence of phases.  Each phase gives a frequency segment for
the two data-ion wells, one for the helper well, and a rule for where the data
wells sit: at the trap centre, following the ions with a friction lag
(``w = c - eta c_dot``), or replaying a tabulated ``w(t)``.
"""

import math
from dataclasses import dataclass, field, replace

import numpy as np

from ._validation import check_positive

N_COS = 5
N_SIN = 4

# cos(pi l / 2) and sin(pi l / 2) for l = 0..4, kept exact
_COS_HALF = np.array([1, 0, -1, 0, 1])
_SIN_HALF = np.array([0, 1, 0, -1, 0])

#: Fourier coefficients of the reference BMB separation waveform.
BMB_COEFFICIENTS = {
    "down": ((2.217, 0.3, -0.517, -0.5, -0.5), (-2.2, 0.1, 0.0, 0.5)),
    "catchB": ((24.2, 172.7, -206.5, -0.5, 11.1), (-202.3, -0.1, 9.5, 43.5)),
    "catchM": ((27.2, 229.5, -264.5, -0.5, 9.3), (-260.5, -0.5, 10.5, 57.5)),
}

SEGMENT_NAMES = ("down", "catchB", "catchM")

_KIND_CONST, _KIND_RAMP, _KIND_FOURIER = 0, 1, 2
ENCODED_SIZE = 16


def _check_time(t, duration):
    if duration is not None and not -1e-12 * max(duration, 1.0) <= t <= duration * (1 + 1e-12):
        raise ValueError(f"t = {t} outside segment [0, {duration}]")


@dataclass(frozen=True)
class ConstantSegment:
    omega: float
    duration: float = None

    def omega_at(self, t):
        _check_time(t, self.duration)
        return self.omega

    def omega_dot_at(self, t):
        return 0.0

    def reversed(self):
        return self

    def encode(self):
        out = np.zeros(ENCODED_SIZE)
        out[0], out[2] = _KIND_CONST, self.omega
        return out


@dataclass(frozen=True)
class SinusoidalRamp:
    """Cosine interpolation from ``omega_start`` to ``omega_end`` with flat ends.

    With ``applies_to="curvature"`` the interpolation acts on ``omega^2``.
    """

    omega_start: float
    omega_end: float
    duration: float
    applies_to: str = "frequency"

    def __post_init__(self):
        check_positive(self.duration, "duration")
        if self.applies_to not in ("frequency", "curvature"):
            raise ValueError("applies_to must be 'frequency' or 'curvature'")

    def _profile(self, t):
        x = math.pi * t / self.duration
        return 0.5 * (1 + math.cos(x)), -0.5 * math.pi / self.duration * math.sin(x)

    def omega_at(self, t):
        return eval_sinusoidal(self, t)

    def omega_dot_at(self, t):
        _check_time(t, self.duration)
        s, sd = self._profile(t)
        if self.applies_to == "frequency":
            return (self.omega_start - self.omega_end) * sd
        q = self.omega_end**2 + (self.omega_start**2 - self.omega_end**2) * s
        if q <= 0:
            return 0.0
        return (self.omega_start**2 - self.omega_end**2) * sd / (2 * math.sqrt(q))

    def reversed(self):
        return replace(self, omega_start=self.omega_end, omega_end=self.omega_start)

    def encode(self):
        out = np.zeros(ENCODED_SIZE)
        out[:6] = (_KIND_RAMP, self.duration, self.omega_start, self.omega_end,
                   float(self.applies_to == "curvature"), 0.0)
        return out


def eval_sinusoidal(ramp, t):
    _check_time(t, ramp.duration)
    s, _ = ramp._profile(t)
    if ramp.applies_to == "frequency":
        return ramp.omega_end + (ramp.omega_start - ramp.omega_end) * s
    q = ramp.omega_end**2 + (ramp.omega_start**2 - ramp.omega_end**2) * s
    return math.sqrt(max(q, 0.0))


@dataclass(frozen=True)
class FourierSegment:
    """``amplitude_ref * (a0 + sum_l a_l cos(pi l t / 2 tau) + b_l sin(pi l t / 2 tau))``."""

    a: tuple
    b: tuple
    duration: float
    amplitude_ref: float = 1.0

    def __post_init__(self):
        a = tuple(float(x) for x in self.a)
        b = tuple(float(x) for x in self.b)
        if len(a) != N_COS or len(b) != N_SIN:
            raise ValueError(f"need {N_COS} cosine and {N_SIN} sine coefficients")
        check_positive(self.duration, "duration")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "amplitude_ref", float(self.amplitude_ref))

    @property
    def coefficients(self):
        return np.array(self.a + self.b)

    def with_coefficients(self, coeffs):
        coeffs = np.asarray(coeffs, dtype=float)
        return replace(self, a=tuple(coeffs[:N_COS]), b=tuple(coeffs[N_COS:]))

    def omega_at(self, t):
        return eval_fourier(self, t)

    def omega_dot_at(self, t):
        return eval_fourier(self, t, derivative=True)

    def reversed(self):
        # f(tau - t) is again a truncated series with permuted coefficients
        a, b = np.array(self.a), np.array((0.0,) + self.b)
        new_a = a * _COS_HALF + b * _SIN_HALF
        new_b = a * _SIN_HALF - b * _COS_HALF
        return replace(self, a=tuple(new_a + 0.0), b=tuple(new_b[1:] + 0.0))

    def encode(self):
        out = np.zeros(ENCODED_SIZE)
        out[:3] = (_KIND_FOURIER, self.duration, self.amplitude_ref)
        out[3:12] = self.a + self.b
        return out


def _basis(t, duration, derivative=False):
    ell = np.arange(N_COS)
    x = math.pi * ell * t / (2 * duration)
    if derivative:
        k = math.pi * ell / (2 * duration)
        return np.concatenate([-k * np.sin(x), (k * np.cos(x))[1:]])
    return np.concatenate([np.cos(x), np.sin(x)[1:]])


def eval_fourier(seg, t, derivative=False):
    """Segment frequency (or its time derivative) at local time ``t``."""
    _check_time(t, seg.duration)
    return seg.amplitude_ref * float(_basis(t, seg.duration, derivative) @ seg.coefficients)


def _boundary_rows(duration):
    return np.array(
        [
            _basis(0.0, duration),
            _basis(0.0, duration, True),
            _basis(duration, duration),
            _basis(duration, duration, True),
        ]
    )


# dependent (a0, a1, a2, b1) and free (a3, a4, b2, b3, b4) slots
DEPENDENT = (0, 1, 2, 5)
FREE = (3, 4, 6, 7, 8)


def constrain_fourier(free_coeffs, bc, duration, amplitude_ref):
    """Solve for ``a0, a1, a2, b1`` so the segment meets four boundary conditions.

    ``free_coeffs`` are ``(a3, a4, b2, b3, b4)``; ``bc`` is
    ``(omega(0), omega'(0), omega(tau), omega'(tau))`` in rad/us and rad/us^2.
    """
    free = np.asarray(free_coeffs, dtype=float)
    if free.shape != (len(FREE),):
        raise ValueError(f"expected {len(FREE)} free coefficients, got {free.shape}")
    check_positive(duration, "duration")
    amp = check_positive(amplitude_ref, "amplitude_ref")
    rows = _boundary_rows(duration)
    lhs = rows[:, DEPENDENT]
    rhs = np.asarray(bc, dtype=float) / amp - rows[:, FREE] @ free
    if abs(np.linalg.det(lhs)) < 1e-12:
        raise np.linalg.LinAlgError("singular boundary-condition system")
    dep = np.linalg.solve(lhs, rhs)
    coeffs = np.zeros(N_COS + N_SIN)
    coeffs[list(DEPENDENT)] = dep
    coeffs[list(FREE)] = free
    return FourierSegment(tuple(coeffs[:N_COS]), tuple(coeffs[N_COS:]), duration, amp)


def boundary_values(seg):
    """``(omega(0), omega'(0), omega(tau), omega'(tau))`` of a segment."""
    return np.array(
        [
            eval_fourier(seg, 0.0),
            eval_fourier(seg, 0.0, True),
            eval_fourier(seg, seg.duration),
            eval_fourier(seg, seg.duration, True),
        ]
    )


def catch_well_position(c_b, c_b_dot, eta):
    """Friction-lag well minimum ``c - eta c_dot``; the mirror well is its negative."""
    return c_b - eta * c_b_dot


@dataclass(frozen=True, eq=False)
class ReplayTable:
    """Tabulated well position ``w`` and rate ``w_dot`` on a uniform grid from 0."""

    dt: float
    w: np.ndarray
    w_dot: np.ndarray

    def __post_init__(self):
        check_positive(self.dt, "dt")
        w = np.asarray(self.w, dtype=float)
        wd = np.asarray(self.w_dot, dtype=float)
        if w.shape != wd.shape or w.ndim != 1 or w.size < 2:
            raise ValueError("replay table needs matching 1-D arrays of length >= 2")
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "w_dot", wd)

    @property
    def duration(self):
        return self.dt * (self.w.size - 1)

    def __eq__(self, other):
        return (
            isinstance(other, ReplayTable)
            and self.dt == other.dt
            and np.array_equal(self.w, other.w)
            and np.array_equal(self.w_dot, other.w_dot)
        )

    def reversed(self):
        return ReplayTable(self.dt, self.w[::-1].copy(), -self.w_dot[::-1])

    def __call__(self, t):
        """Cubic Hermite interpolation."""
        i = int(min(max(t / self.dt, 0), self.w.size - 2))
        s = t / self.dt - i
        h00 = (1 + 2 * s) * (1 - s) ** 2
        h10 = s * (1 - s) ** 2
        h01 = s * s * (3 - 2 * s)
        h11 = s * s * (s - 1)
        return (h00 * self.w[i] + h10 * self.dt * self.w_dot[i]
                + h01 * self.w[i + 1] + h11 * self.dt * self.w_dot[i + 1])


WELL_RULES = ("origin", "friction", "replay")


@dataclass(frozen=True)
class Phase:
    """One schedule phase.  ``duration=None`` runs until the catch threshold."""

    data: object
    helper: object
    duration: float = None
    well: str = "origin"
    eta: float = 0.0
    replay: ReplayTable = None
    label: str = ""

    def __post_init__(self):
        if self.well not in WELL_RULES:
            raise ValueError(f"well rule must be one of {WELL_RULES}, got {self.well!r}")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if self.well == "replay" and self.replay is None:
            raise ValueError("replay phase needs a replay table")
        if self.duration is None:
            if not (isinstance(self.data, ConstantSegment) and isinstance(self.helper, ConstantSegment)):
                raise ValueError("open-ended phases must hold constant frequencies")
        else:
            check_positive(self.duration, "phase duration")
            for seg in (self.data, self.helper):
                d = getattr(seg, "duration", None)
                if d is not None and abs(d - self.duration) > 1e-12 * self.duration:
                    raise ValueError(f"segment duration {d} differs from phase {self.duration}")

    def reversed(self):
        rep = None if self.replay is None else self.replay.reversed()
        return replace(self, data=self.data.reversed(), helper=self.helper.reversed(), replay=rep)


def _end_omega(seg, at_end):
    if isinstance(seg, ConstantSegment):
        return seg.omega
    return seg.omega_at(seg.duration if at_end else 0.0)


@dataclass(frozen=True)
class CurvatureSchedule:
    phases: tuple
    catch_threshold: float = None
    continuity_tol: float = 1e-6
    metadata: dict = field(default=None, compare=False, hash=False)

    def __post_init__(self):
        phases = tuple(self.phases)
        if not phases:
            raise ValueError("schedule needs at least one phase")
        object.__setattr__(self, "phases", phases)
        n_open = sum(p.duration is None for p in phases)
        if n_open > 1:
            raise ValueError("at most one open-ended phase is allowed")
        if n_open and (self.catch_threshold is None or self.catch_threshold < 0):
            raise ValueError("open-ended phase needs a non-negative catch_threshold")
        for prev, nxt in zip(phases, phases[1:]):
            for attr in ("data", "helper"):
                w1 = _end_omega(getattr(prev, attr), True)
                w2 = _end_omega(getattr(nxt, attr), False)
                scale = max(abs(w1), abs(w2), 1e-300)
                if abs(w1 - w2) > self.continuity_tol * scale:
                    raise ValueError(
                        f"{attr} frequency jumps from {w1:.6g} to {w2:.6g} "
                        f"between phases {prev.label!r} and {nxt.label!r}"
                    )

    @property
    def is_resolved(self):
        return all(p.duration is not None for p in self.phases)

    @property
    def total_duration(self):
        if not self.is_resolved:
            return None
        return float(sum(p.duration for p in self.phases))

    def phase_starts(self):
        if not self.is_resolved:
            raise ValueError("schedule has an open-ended phase")
        return np.concatenate([[0.0], np.cumsum([p.duration for p in self.phases])])

    def reversed(self):
        if not self.is_resolved:
            raise ValueError("only resolved schedules can be time-mirrored")
        return replace(self, phases=tuple(p.reversed() for p in self.phases[::-1]))

    def replace_segments(self, mapping):
        """Swap segments equal to a key of ``mapping`` for the mapped value."""

        def sub(seg):
            for old, new in mapping.items():
                if seg == old:
                    return new
            return seg

        return replace(
            self,
            phases=tuple(replace(p, data=sub(p.data), helper=sub(p.helper)) for p in self.phases),
        )

    def omega_at(self, t, which="data"):
        """Frequency of the data (or helper) wells at absolute time ``t``."""
        starts = self.phase_starts()
        i = int(np.clip(np.searchsorted(starts, t, side="right") - 1, 0, len(self.phases) - 1))
        seg = getattr(self.phases[i], which)
        return seg.omega_at(min(max(t - starts[i], 0.0), self.phases[i].duration))


def bmb_segments(omega0, tau1=0.85, tau2=1.4, floor_ratio=1 / 30, coefficients=None,
                 enforce_boundary_conditions=True):
    """The three named Fourier segments of the on-the-fly protocol.

    With ``enforce_boundary_conditions`` the free coefficients are kept and the
    dependent ones re-solved so every segment meets its end-point frequencies
    and zero slopes exactly.
    """
    coefficients = BMB_COEFFICIENTS if coefficients is None else coefficients
    floor = omega0 * floor_ratio
    spec = {
        "down": (tau1, omega0, (omega0, 0.0, floor, 0.0)),
        "catchB": (tau2, floor, (floor, 0.0, omega0, 0.0)),
        "catchM": (tau2, floor, (floor, 0.0, omega0, 0.0)),
    }
    out = {}
    for name in SEGMENT_NAMES:
        a, b = coefficients[name]
        dur, amp, bc = spec[name]
        seg = FourierSegment(a, b, dur, amp)
        if enforce_boundary_conditions:
            seg = constrain_fourier(seg.coefficients[list(FREE)], bc, dur, amp)
        out[name] = seg
    return out


def flat_segments(omega0, tau1=0.85, tau2=1.4, floor_ratio=1 / 30):
    """Segments with all free coefficients zero and the boundary conditions met."""
    zeros = {name: ((0.0,) * N_COS, (0.0,) * N_SIN) for name in SEGMENT_NAMES}
    return bmb_segments(omega0, tau1, tau2, floor_ratio, zeros, True)


def onthefly_schedule(omega0, segments, floor_ratio=1 / 30, eta=0.4, catch_threshold=50.0,
                      hold_before=0.0, hold_after=0.0, continuity_tol=1e-6):
    """Hold, ramp down, floor until catch, catch, hold."""
    floor = omega0 * floor_ratio
    phases = []
    if hold_before > 0:
        hold = ConstantSegment(omega0, hold_before)
        phases.append(Phase(hold, hold, hold_before, "origin", label="hold_before"))
    down = segments["down"]
    phases.append(Phase(down, down, down.duration, "origin", label="down"))
    fl = ConstantSegment(floor)
    phases.append(Phase(fl, fl, None, "origin", label="floor"))
    cb, cm = segments["catchB"], segments["catchM"]
    phases.append(Phase(cb, cm, cb.duration, "friction", eta, label="catch"))
    if hold_after > 0:
        hold = ConstantSegment(omega0, hold_after)
        phases.append(Phase(hold, hold, hold_after, "friction", eta, label="hold_after"))
    return CurvatureSchedule(tuple(phases), catch_threshold, continuity_tol)


def precompensated_schedule(omega0, tau=0.365, tau0=1.1, tau_up=0.73, eta=0.4,
                            applies_to="frequency"):
    """Sinusoidal ramp to zero, free flight, then recapture with friction wells."""
    down = SinusoidalRamp(omega0, 0.0, tau, applies_to)
    free = ConstantSegment(0.0, tau0)
    up = SinusoidalRamp(0.0, omega0, tau_up, applies_to)
    phases = (
        Phase(down, down, tau, "origin", label="down"),
        Phase(free, free, tau0, "origin", label="free"),
        Phase(up, up, tau_up, "friction", eta, label="recapture"),
    )
    return CurvatureSchedule(phases)


def static_schedule(omega0, duration):
    hold = ConstantSegment(omega0, duration)
    return CurvatureSchedule((Phase(hold, hold, duration, "origin", label="hold"),))
