"""Waveform optimisation and Monte-Carlo robustness of the on-the-fly protocol."""

import json
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import NumericalFailure
from .crystal import final_frequencies, initial_frequencies
from .dynamics import integrate_protocol
from .fock import gaussian_to_fock
from .protocols import ProtocolConfig, final_occupations, run_onthefly
from .symplectic import GaussianState, evolve_covariance, ground_state_covariance
from .waveforms import FREE, SEGMENT_NAMES, constrain_fourier, flat_segments

PENALTY = 1e6


class _BudgetExhausted(Exception):
    pass


# --------------------------------------------------------------------------
# Nelder-Mead


@dataclass
class NelderMeadResult:
    x: np.ndarray
    fun: float
    n_evals: int
    n_iter: int
    converged: bool
    history: list
    simplex: np.ndarray
    simplex_values: np.ndarray


def nelder_mead(objective, x0, initial_step=0.05, initial_simplex=None, xatol=1e-8, fatol=1e-10,
                max_evals=None, max_iter=None, callback=None):
    """Minimise ``objective`` with the reflect/expand/contract/shrink simplex method.

    The initial simplex adds ``initial_step`` (scalar or per-coordinate) to
    each coordinate of ``x0`` unless ``initial_simplex`` is supplied.  Stops
    when both the simplex extent and the spread of its values fall below
    ``xatol`` and ``fatol``, or when a cap is hit; the objective is never
    called more than ``max_evals`` times.  Non-finite objective
    values are treated as ``+inf``.  ``callback(iteration, simplex, values)``
    runs after every iteration.
    """
    x0 = np.asarray(x0, dtype=float).ravel()
    n = x0.size
    max_evals = 200 * n if max_evals is None else int(max_evals)
    max_iter = 10 * max_evals if max_iter is None else int(max_iter)
    n_evals = 0
    if max_evals < n + 1:
        raise ValueError(f"max_evals must be at least {n + 1} to build the simplex")

    def f(x):
        nonlocal n_evals
        if n_evals >= max_evals:
            raise _BudgetExhausted
        n_evals += 1
        v = float(objective(x))
        return v if math.isfinite(v) else math.inf

    if initial_simplex is None:
        step = np.broadcast_to(np.asarray(initial_step, dtype=float), (n,))
        sim = np.vstack([x0, x0 + np.diag(step)])
    else:
        sim = np.array(initial_simplex, dtype=float)
        if sim.shape != (n + 1, n):
            raise ValueError(f"initial_simplex must have shape {(n + 1, n)}")
    vals = np.empty(n + 1)
    vals[0] = f(sim[0])
    if not math.isfinite(vals[0]):
        raise ValueError("objective is not finite at the starting point")
    for i in range(1, n + 1):
        vals[i] = f(sim[i])

    history = []
    state = {"it": 0, "converged": False}
    try:
        _iterate(f, sim, vals, xatol, fatol, max_iter, history, callback, state)
    except _BudgetExhausted:
        pass
    order = np.argsort(vals, kind="stable")
    sim, vals = sim[order], vals[order]
    return NelderMeadResult(sim[0].copy(), float(vals[0]), n_evals, state["it"],
                            state["converged"], history, sim, vals)


def _iterate(f, sim, vals, xatol, fatol, max_iter, history, callback, state):
    # updates sim and vals in place; a vertex and its value change together
    n = sim.shape[1]
    while state["it"] < max_iter:
        order = np.argsort(vals, kind="stable")
        sim[:], vals[:] = sim[order], vals[order]
        history.append(float(vals[0]))
        if (np.max(np.abs(sim[1:] - sim[0])) <= xatol
                and np.max(np.abs(vals[1:] - vals[0])) <= fatol):
            state["converged"] = True
            return
        state["it"] += 1
        centroid = sim[:-1].mean(axis=0)
        xr = centroid + (centroid - sim[-1])
        fr = f(xr)
        if fr < vals[0]:
            xe = centroid + 2.0 * (centroid - sim[-1])
            fe = f(xe)
            if fe < fr:
                sim[-1], vals[-1] = xe, fe
            else:
                sim[-1], vals[-1] = xr, fr
        elif fr < vals[-2]:
            sim[-1], vals[-1] = xr, fr
        else:
            if fr < vals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
                fc = f(xc)
                accept = fc <= fr
            else:
                xc = centroid + 0.5 * (sim[-1] - centroid)
                fc = f(xc)
                accept = fc < vals[-1]
            if accept:
                sim[-1], vals[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    xs = sim[0] + 0.5 * (sim[i] - sim[0])
                    fs = f(xs)
                    sim[i], vals[i] = xs, fs
        if callback is not None:
            callback(state["it"], sim.copy(), vals.copy())


# --------------------------------------------------------------------------
# waveform optimisation


@dataclass(frozen=True)
class OptimizationProblem:
    """Budget and staging of the waveform search over the 15 free coefficients."""

    max_evals: int = 2000
    target_total: float = 0.5
    initial_step: float = 0.05
    staged: bool = True
    start: str = "config"

    def __post_init__(self):
        if self.max_evals < 1:
            raise ValueError("max_evals must be >= 1")
        if self.initial_step <= 0:
            raise ValueError("initial_step must be positive")
        if self.start not in ("config", "flat"):
            raise ValueError("start must be 'config' or 'flat'")


def _bcs(config):
    p = config.onthefly
    w0 = config.crystal.omega0
    floor = w0 * p.floor_ratio
    return {
        "down": (p.tau1, w0, (w0, 0.0, floor, 0.0)),
        "catchB": (p.tau2, floor, (floor, 0.0, w0, 0.0)),
        "catchM": (p.tau2, floor, (floor, 0.0, w0, 0.0)),
    }


def segments_from_free(config, free):
    """Build the three constrained segments from the 15 free coefficients."""
    free = np.asarray(free, dtype=float).reshape(len(SEGMENT_NAMES), len(FREE))
    bcs = _bcs(config)
    out = {}
    for name, fr in zip(SEGMENT_NAMES, free):
        dur, amp, bc = bcs[name]
        out[name] = constrain_fourier(fr, bc, dur, amp)
    return out


def free_from_segments(segments):
    return np.concatenate([segments[n].coefficients[list(FREE)] for n in SEGMENT_NAMES])


@dataclass
class OptimizationResult:
    segments: dict
    free: np.ndarray
    occupations: np.ndarray
    total: float
    start_total: float
    n_evals: int
    converged: bool
    history: list
    stages: list = field(default_factory=list)

    def coefficients(self):
        return {n: (list(s.a), list(s.b)) for n, s in self.segments.items()}


def optimize_waveform(config, problem=None, checkpoint=None):
    """Search the free Fourier coefficients for low final occupation.

    Staging (when ``problem.staged``): the shared ramp-down segment against
    the total occupation, then the data-ion catch segment against the total,
    then the helper catch segment against ``n_a + n_b``, then a joint polish
    against the total.  The evaluation budget is split evenly over the four
    stages, and the start point counts against ``problem.max_evals``, which is
    a hard cap on objective evaluations.  ``converged`` reports whether the
    final total meets ``problem.target_total``.  ``checkpoint(stage, simplex,
    values, free)`` is called after every simplex iteration.
    """
    problem = OptimizationProblem() if problem is None else problem
    if problem.start == "flat":
        p = config.onthefly
        base = flat_segments(config.crystal.omega0, p.tau1, p.tau2, p.floor_ratio)
    else:
        base = config.segments()
    free = free_from_segments(base)
    cache = {}
    n_total = 0

    def occupations(x):
        nonlocal n_total
        key = x.tobytes()
        if key not in cache:
            n_total += 1
            try:
                cache[key] = final_occupations(config, segments_from_free(config, x))
            except (NumericalFailure, ValueError, np.linalg.LinAlgError):
                cache[key] = np.full(3, PENALTY)
        return cache[key]

    start_occ = occupations(free)
    history = [float(np.sum(start_occ))]
    n_seg = len(FREE)
    if problem.staged:
        stages = [
            ("down", slice(0, n_seg), "total"),
            ("catchB", slice(n_seg, 2 * n_seg), "total"),
            ("catchM", slice(2 * n_seg, 3 * n_seg), "ab"),
            ("joint", slice(0, 3 * n_seg), "total"),
        ]
        budgets = [(problem.max_evals - 1) // 4] * 3
        budgets.append(problem.max_evals - 1 - sum(budgets))
    else:
        stages = [("joint", slice(0, 3 * n_seg), "total")]
        budgets = [problem.max_evals - 1]

    stage_log = []
    for (name, sl, target), budget in zip(stages, budgets):
        if budget < sl.stop - sl.start + 1:
            stage_log.append({"stage": name, "n_evals": 0, "value": None, "skipped": True})
            continue
        base_x = free.copy()

        def objective(sub, sl=sl, target=target, base_x=base_x):
            x = base_x.copy()
            x[sl] = sub
            occ = occupations(x)
            return float(np.sum(occ) if target == "total" else occ[1] + occ[2])

        scale = np.maximum(np.abs(base_x[sl]), 1.0) * problem.initial_step

        def cb(it, sim, vals, name=name, sl=sl, base_x=base_x):
            x = base_x.copy()
            x[sl] = sim[0]
            history.append(float(np.sum(occupations(x))))
            if checkpoint is not None:
                checkpoint(name, sim, vals, x)

        res = nelder_mead(objective, base_x[sl], initial_step=scale, max_evals=budget,
                          callback=cb)
        free[sl] = res.x
        stage_log.append({"stage": name, "n_evals": res.n_evals, "value": res.fun})

    best = occupations(free)
    if np.sum(best) > np.sum(start_occ):
        free, best = free_from_segments(base), start_occ
    segments = segments_from_free(config, free)
    return OptimizationResult(segments, free, best, float(np.sum(best)), float(np.sum(start_occ)),
                              n_total, float(np.sum(best)) <= problem.target_total,
                              history, stage_log)


class WaveformOptimizer(BaseEstimator):
    """Estimator wrapper around :func:`optimize_waveform`.

    Fitted attributes: ``segments_``, ``occupations_``, ``total_``,
    ``n_evals_``, ``converged_`` and ``result_`` (the protocol run with the
    optimised segments).
    """

    def __init__(self, config=None, max_evals=2000, target_total=0.5, initial_step=0.05,
                 staged=True, start="config"):
        self.config = config
        self.max_evals = max_evals
        self.target_total = target_total
        self.initial_step = initial_step
        self.staged = staged
        self.start = start

    def fit(self, X=None, y=None, checkpoint=None):
        cfg = ProtocolConfig() if self.config is None else self.config
        problem = OptimizationProblem(self.max_evals, self.target_total, self.initial_step,
                                      self.staged, self.start)
        opt = optimize_waveform(cfg, problem, checkpoint)
        self.optimization_ = opt
        self.segments_ = opt.segments
        self.occupations_ = opt.occupations
        self.total_ = opt.total
        self.n_evals_ = opt.n_evals
        self.converged_ = opt.converged
        self.result_ = run_onthefly(cfg, segments=opt.segments)
        return self


# --------------------------------------------------------------------------
# Monte-Carlo robustness


@dataclass(frozen=True)
class PerturbationSpec:
    max_fraction: float
    n_samples: int = 1000
    seed: int = 0

    def __post_init__(self):
        if not self.max_fraction >= 0:
            raise ValueError("max_fraction must be non-negative")
        if int(self.n_samples) < 1:
            raise ValueError("n_samples must be >= 1")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def sample_rng(seed, sample_index):
    """Counter-based generator keyed only by ``(seed, sample_index)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), int(sample_index)])))


def perturb_segments(segments, spec, sample_index):
    """Add uniform offsets in ``[-f A_max, f A_max]`` to all 27 coefficients.

    ``A_max`` is the largest coefficient magnitude of each segment.  The
    perturbed coefficients are used as given, without re-imposing boundary
    conditions.
    """
    rng = sample_rng(spec.seed, sample_index)
    out = {}
    for name in SEGMENT_NAMES:
        seg = segments[name]
        coeffs = seg.coefficients
        amax = float(np.max(np.abs(coeffs)))
        offsets = rng.uniform(-1.0, 1.0, coeffs.size) * (spec.max_fraction * amax)
        out[name] = seg.with_coefficients(coeffs + offsets)
    return out


@dataclass
class MonteCarloReport:
    max_fraction: float
    n_samples: int
    n_failed: int
    seed: int
    op_mean: np.ndarray
    op_stderr: np.ndarray
    ab_mean: np.ndarray
    ab_stderr: np.ndarray
    nominal_op: np.ndarray
    nominal_ab: np.ndarray
    mean_displacement_quanta: float
    runtime_s: float = 0.0

    @property
    def failure_rate(self):
        total = self.n_samples + self.n_failed
        return self.n_failed / total if total else 0.0

    def to_dict(self, size=4):
        return {
            "max_fraction": self.max_fraction,
            "n_samples": self.n_samples,
            "n_failed": self.n_failed,
            "failure_flag": self.failure_rate > 0.01,
            "seed": self.seed,
            "op_mean": self.op_mean[:size].tolist(),
            "op_stderr": self.op_stderr[:size].tolist(),
            "ab_mean": self.ab_mean[:size, :size].tolist(),
            "ab_stderr": self.ab_stderr[:size, :size].tolist(),
            "nominal_op": self.nominal_op[:size].tolist(),
            "nominal_ab": self.nominal_ab[:size, :size].tolist(),
            "mean_displacement_quanta": self.mean_displacement_quanta,
        }

    def to_json(self, size=4):
        return json.dumps(self.to_dict(size), indent=2, sort_keys=True)


@dataclass
class _Reference:
    schedule: object
    c: float
    v: float
    op_state: GaussianState
    ab_state: GaussianState
    op: np.ndarray
    ab: np.ndarray


def _final_states(config, traj):
    w_i = initial_frequencies(config.crystal)
    w_f = final_frequencies(config.crystal)
    op = evolve_covariance(traj.m_op[-1], ground_state_covariance(w_i[:1]))
    ab = evolve_covariance(traj.m_ab[-1], ground_state_covariance(w_i[1:]))
    return GaussianState(op.v, op.mean, w_f[:1]), GaussianState(ab.v, ab.mean, w_f[1:])


def monte_carlo_reference(config):
    """Nominal run, then its replay with the friction wells tabulated.

    The replay is the baseline every perturbed sample is compared against.
    """
    nominal = integrate_protocol(config.crystal, config.schedule(), config.dt, record_every=10**9)
    # perturbed waveforms jump slightly at phase boundaries
    sched = replace(nominal.resolved_schedule, continuity_tol=math.inf)
    ref = integrate_protocol(config.crystal, sched, config.dt, record_every=10**9)
    op, ab = _final_states(config, ref)
    n_max = config.n_max
    return _Reference(
        sched,
        float(ref.positions[-1, 2]),
        float(ref.velocities[-1, 2]),
        op,
        ab,
        gaussian_to_fock(op, n_max=n_max, auto_grow=False).populations,
        gaussian_to_fock(ab, n_max=n_max, auto_grow=False).populations,
    )


def _sample(config, ref, segments, spec, index):
    pert = perturb_segments(segments, spec, index)
    sched = ref.schedule.replace_segments({segments[n]: pert[n] for n in SEGMENT_NAMES})
    traj = integrate_protocol(config.crystal, sched, config.dt, record_every=10**9)
    op, ab = _final_states(config, traj)
    # residual classical motion relative to the nominal end point, as an
    # op-mode displacement in mass-weighted units
    scale = math.sqrt(2 * config.crystal.m_d / config.crystal.hbar)
    dx = (traj.positions[-1, 2] - ref.c) * scale
    dv = (traj.velocities[-1, 2] - ref.v) * scale
    op = GaussianState(op.v, np.array([dv, dx]), op.ref_freqs)
    # strongly displaced samples need a larger cut-off; only the n_max block is averaged
    n_max = config.n_max
    keep = slice(0, n_max + 1)
    p_op = gaussian_to_fock(op, n_max=n_max).populations[keep]
    p_ab = gaussian_to_fock(ab, n_max=n_max).populations[keep, keep]
    w = op.ref_freqs[0]
    quanta = (dv * dv + w * w * dx * dx) / (2 * w)
    return p_op, p_ab, quanta


def monte_carlo_robustness(config, spec, reference=None):
    """Average Fock tables over randomly perturbed Fourier coefficients.

    Each sample replays the nominal catch-well positions and catch time with
    perturbed curvature waveforms.  Samples that fail to integrate are
    excluded and counted.
    """
    start = time.perf_counter()
    ref = monte_carlo_reference(config) if reference is None else reference
    segments = config.segments()
    sum_op = np.zeros_like(ref.op)
    sq_op = np.zeros_like(ref.op)
    sum_ab = np.zeros_like(ref.ab)
    sq_ab = np.zeros_like(ref.ab)
    quanta = 0.0
    n_ok = n_failed = 0
    for i in range(int(spec.n_samples)):
        try:
            p_op, p_ab, q = _sample(config, ref, segments, spec, i)
        except (NumericalFailure, ValueError):
            n_failed += 1
            continue
        n_ok += 1
        sum_op += p_op
        sq_op += p_op * p_op
        sum_ab += p_ab
        sq_ab += p_ab * p_ab
        quanta += q
    if n_ok == 0:
        raise NumericalFailure("every Monte-Carlo sample failed")

    def stats(s, sq):
        mean = s / n_ok
        if n_ok < 2:
            return mean, np.zeros_like(mean)
        var = np.clip(sq / n_ok - mean * mean, 0.0, None) * n_ok / (n_ok - 1)
        return mean, np.sqrt(var / n_ok)

    op_mean, op_se = stats(sum_op, sq_op)
    ab_mean, ab_se = stats(sum_ab, sq_ab)
    return MonteCarloReport(
        float(spec.max_fraction), n_ok, n_failed, int(spec.seed), op_mean, op_se, ab_mean, ab_se,
        ref.op, ref.ab, quanta / n_ok, time.perf_counter() - start,
    )


class MonteCarloStudy(BaseEstimator):
    """Estimator wrapper: ``fit()`` runs one Monte-Carlo study per noise level.

    Fitted attributes: ``reports_`` (list of :class:`MonteCarloReport`, one per
    entry of ``max_fractions``).
    """

    def __init__(self, config=None, max_fractions=(1e-5, 5e-5), n_samples=1000, seed=0):
        self.config = config
        self.max_fractions = max_fractions
        self.n_samples = n_samples
        self.seed = seed

    def fit(self, X=None, y=None):
        cfg = ProtocolConfig() if self.config is None else self.config
        ref = monte_carlo_reference(cfg)
        self.reports_ = [
            monte_carlo_robustness(cfg, PerturbationSpec(f, self.n_samples, self.seed), ref)
            for f in self.max_fractions
        ]
        return self


def replace_config_segments(config, segments):
    """Config whose on-the-fly coefficients are taken from ``segments``."""
    coeffs = {n: (segments[n].a, segments[n].b) for n in SEGMENT_NAMES}
    return replace(config, onthefly=replace(config.onthefly, coefficients=coeffs))
