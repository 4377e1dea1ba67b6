import math

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from ionsep._validation import NumericalFailure
from ionsep.crystal import CrystalConfig, h_ab, h_op, initial_frequencies, mode_geometry
from ionsep.dynamics import (
    CatchNotReached,
    ClassicalState,
    Wells,
    classical_derivatives,
    classical_energy,
    detect_catch,
    equilibrium_state,
    integrate_protocol,
)
from ionsep.symplectic import integrate_transfer, symplectic_defect
from ionsep.waveforms import CurvatureSchedule, Phase, SinusoidalRamp, precompensated_schedule, static_schedule

CFG = CrystalConfig()
W0 = CFG.omega0


def ramp_curvature(t, tau=0.365):
    # sinusoidal frequency ramp omega0 -> 0, then zero
    if t >= tau:
        return 0.0, 0.0
    w = 0.5 * W0 * (1 + math.cos(math.pi * t / tau))
    wd = -0.5 * W0 * math.pi / tau * math.sin(math.pi * t / tau)
    return CFG.m_d * w * w, 2 * CFG.m_d * w * wd


def rhs(t, y):
    # independent three-ion equations of motion, wells at the origin
    k, _ = ramp_curvature(t)
    x1, x2, x3, v1, v2, v3 = y
    ke = CFG.coulomb_constant
    f12, f13, f23 = ke / (x2 - x1) ** 2, ke / (x3 - x1) ** 2, ke / (x3 - x2) ** 2
    return [v1, v2, v3,
            (-k * x1 - f12 - f13) / CFG.m_d,
            (-k * x2 + f12 - f23) / CFG.m_h,
            (-k * x3 + f13 + f23) / CFG.m_d]


@pytest.fixture(scope="module")
def ramp_run():
    down = SinusoidalRamp(W0, 0.0, 0.365)
    free = SinusoidalRamp(0.0, 0.0, 1.1)
    sched = CurvatureSchedule((Phase(down, down, 0.365), Phase(free, free, 1.1)))
    traj = integrate_protocol(CFG, sched, dt=1e-4, record_every=10)
    y0 = np.concatenate([traj.positions[0], traj.velocities[0]])
    ref = solve_ivp(rhs, (0, 1.465), y0, method="DOP853", rtol=1e-12, atol=1e-12,
                    dense_output=True)
    return traj, ref


class TestClassicalOracle:
    def test_positions_match_reference_integrator(self, ramp_run):
        traj, ref = ramp_run
        for i in range(0, len(traj.t), 50):
            assert np.allclose(traj.positions[i], ref.sol(traj.t[i])[:3], atol=1e-8)

    def test_final_state_matches(self, ramp_run):
        traj, ref = ramp_run
        end = ref.sol(1.465)
        assert traj.t[-1] == pytest.approx(1.465)
        assert np.allclose(traj.positions[-1], end[:3], atol=1e-8)
        assert np.allclose(traj.velocities[-1], end[3:], atol=1e-7)

    def test_helper_stays_at_origin(self, ramp_run):
        traj, _ = ramp_run
        assert np.max(np.abs(traj.positions[:, 1])) < 1e-12
        assert np.allclose(traj.positions[:, 0], -traj.positions[:, 2], atol=1e-12)


class TestTransferOracle:
    def test_mode_matrices_match_independent_integration(self, ramp_run):
        traj, ref = ramp_run

        def geometry(t):
            y = ref.sol(t)
            c, c_dot = 0.5 * (y[2] - y[0]), 0.5 * (y[5] - y[3])
            k, k_dot = ramp_curvature(t)
            return mode_geometry(CFG, k, k, c, k_dot, c_dot, k_dot)

        m_op = integrate_transfer(lambda t: h_op(geometry(t)), 0.0, 1.465, dt=5e-4).m
        m_ab = integrate_transfer(lambda t: h_ab(geometry(t)), 0.0, 1.465, dt=5e-4).m
        assert np.allclose(traj.m_op[-1], m_op, rtol=1e-6, atol=1e-7)
        assert np.allclose(traj.m_ab[-1], m_ab, rtol=1e-6, atol=1e-7)

    def test_all_recorded_matrices_symplectic(self, ramp_run):
        traj, _ = ramp_run
        assert traj.max_defect() < 1e-9


class TestStaticWells:
    def test_equilibrium_is_stationary(self):
        traj = integrate_protocol(CFG, static_schedule(W0, 1.0))
        assert np.max(np.abs(traj.positions - traj.positions[0])) < 1e-10

    def test_static_matrices_are_rotations(self):
        traj = integrate_protocol(CFG, static_schedule(W0, 1.0))
        w = initial_frequencies(CFG)[0]
        expected = np.array([[math.cos(w), -w * math.sin(w)], [math.sin(w) / w, math.cos(w)]])
        assert np.allclose(traj.m_op[-1], expected, atol=1e-9)

    def test_energy_conserved_for_displaced_start(self):
        start = equilibrium_state(CFG, CFG.k0)
        kicked = ClassicalState(start.positions + [0.3, -0.2, 0.1], [0.5, 0.0, -1.0])
        traj = integrate_protocol(CFG, static_schedule(W0, 2.0), initial_state=kicked)
        wells = Wells(0.0, 0.0, CFG.k0, CFG.k0)
        e0 = classical_energy(kicked, wells, CFG)
        e1 = classical_energy(traj.final_state, wells, CFG)
        assert e1 == pytest.approx(e0, rel=1e-10)

    def test_derivatives_vanish_at_equilibrium(self):
        s = equilibrium_state(CFG, CFG.k0)
        d = classical_derivatives(s, Wells(0.0, 0.0, CFG.k0, CFG.k0), CFG)
        assert np.max(np.abs(d[3:])) < 1e-9


class TestCatchAndFailures:
    def test_catch_time_consistent(self, onthefly_result):
        traj = onthefly_result.trajectory
        ev = detect_catch(traj, 50.0)
        assert ev.t_catch == pytest.approx(traj.t_catch, abs=1e-4)
        i = int(np.searchsorted(traj.t, traj.t_catch))
        assert abs(traj.positions[i, 2] - traj.positions[0, 2]) >= 50.0 - 1e-6

    def test_catch_not_reached(self):
        with pytest.raises(CatchNotReached):
            detect_catch(integrate_protocol(CFG, static_schedule(W0, 0.1)), 5.0)

    def test_open_phase_times_out(self, onthefly_config):
        with pytest.raises(CatchNotReached):
            integrate_protocol(CFG, onthefly_config.schedule(), t_max=1.0)

    def test_collision_detected(self):
        kicked = ClassicalState([-5.0, 0.0, 5.0], [400.0, 0.0, -400.0])
        with pytest.raises(NumericalFailure):
            integrate_protocol(CFG, static_schedule(W0, 1.0), initial_state=kicked)

    def test_ion_order_validated(self):
        with pytest.raises(ValueError):
            ClassicalState([1.0, 0.0, 2.0], [0, 0, 0])

    def test_resolved_schedule_replays_identically(self, onthefly_config):
        first = integrate_protocol(CFG, onthefly_config.schedule())
        replay = integrate_protocol(CFG, first.resolved_schedule)
        assert first.resolved_schedule.is_resolved
        assert np.allclose(replay.m_ab[-1], first.m_ab[-1], atol=1e-9)
        assert np.allclose(replay.positions[-1], first.positions[-1], atol=1e-8)

    def test_precompensated_run_symplectic(self):
        traj = integrate_protocol(CFG, precompensated_schedule(W0))
        assert traj.max_defect() < 1e-9
        assert symplectic_defect(traj.m_ab[-1]) < 1e-9
