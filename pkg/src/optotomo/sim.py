"""Synthetic measurement records from a stochastic Schrodinger equation.

The oscillator state is a pure Fock-basis vector.  Unrecorded channels (the
thermal bath and the undetected part of the measurement) are unravelled as
fictitious heterodyne measurements whose outcomes are thrown away, so the
ensemble over trajectories reproduces the master equation.  Each step applies
the linear update driven by the simulated currents with the Milstein
correction, then renormalises.

Every jump operator is linear in ``a`` and ``a_dag``, so a step costs O(dim).
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ParameterError, TruncationError
from .model import ProtocolSchedule, Regime, SystemParams

RECORD_FORMAT = "optotomo-record"
RECORD_VERSION = 1

GROWTH_LEVELS = 16
TAIL_TOLERANCE = 1e-10
MAX_DIM = 400
MIN_DIM = 20
NOISE_BLOCK = 1 << 15
WORKERS_ENV = "OPTOTOMO_WORKERS"


@dataclass
class FockState:
    """Pure state on a truncated Fock basis.

    ``norm_log`` accumulates the log norms removed by renormalisation; it is
    a diagnostic only.
    """

    amplitudes: np.ndarray
    norm_log: float = 0.0

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=np.complex128)
        if self.amplitudes.ndim != 1 or self.amplitudes.size < 2:
            raise ParameterError("a Fock state needs a 1-d amplitude vector with dim >= 2")

    @property
    def dim(self):
        return self.amplitudes.size

    def normalized(self):
        norm = np.linalg.norm(self.amplitudes)
        if norm == 0:
            raise ParameterError("zero state vector")
        return FockState(self.amplitudes / norm, self.norm_log + math.log(norm))

    def padded(self, dim):
        if dim <= self.dim:
            return FockState(self.amplitudes.copy(), self.norm_log)
        amps = np.zeros(dim, dtype=np.complex128)
        amps[: self.dim] = self.amplitudes
        return FockState(amps, self.norm_log)

    def tail_mass(self, levels=_kernels.TAIL_LEVELS):
        return float(np.sum(np.abs(self.amplitudes[-levels:]) ** 2))

    def mean_a(self):
        psi = self.amplitudes
        return complex(np.vdot(psi[:-1], np.sqrt(np.arange(1, self.dim)) * psi[1:]))

    def density_matrix(self):
        return np.outer(self.amplitudes, self.amplitudes.conj())


@dataclass(frozen=True)
class SdeGenerator:
    """Operator content of one stage of the stochastic evolution.

    Attributes
    ----------
    dim : int
        Truncation the generator was built for.
    diag : ndarray
        Number-diagonal drift per unit time, including the homodyne Milstein
        correction.
    c_minus, c_plus : complex
        Drift coefficients of ``a**2`` and ``a_dag**2`` (squeezing).
    s_hom, s_het : float
        Recorded homodyne (X and Y) or heterodyne (``a_dag``) strength.
    k_lower, k_raise : float
        Rates of the unrecorded ``a`` and ``a_dag`` channels.
    """

    dim: int
    diag: np.ndarray
    c_minus: complex
    c_plus: complex
    s_hom: float
    s_het: float
    k_lower: float
    k_raise: float

    @property
    def records(self):
        return self.s_hom > 0 or self.s_het > 0

    def resized(self, dim):
        return _assemble(dim, self.c_minus, self.c_plus, self.s_hom, self.s_het, self.k_lower, self.k_raise)


def _assemble(dim, c_minus, c_plus, s_hom, s_het, k_lower, k_raise):
    if dim < 2:
        raise ParameterError(f"dim must be >= 2, got {dim}")
    n = np.arange(dim, dtype=float)
    if s_hom > 0:
        diag = -(s_hom**2) * (2 * n + 1) - 0.5 * k_lower * n - 0.5 * k_raise * (n + 1)
    else:
        diag = -0.5 * (s_het**2 * (n + 1) + k_lower * n + k_raise * (n + 1))
    return SdeGenerator(dim, diag.astype(np.complex128), complex(c_minus), complex(c_plus),
                        float(s_hom), float(s_het), float(k_lower), float(k_raise))


def build_generator(params: SystemParams, dim, *, measuring=True, squeezing=True, phase=0.0,
                    regime=None) -> SdeGenerator:
    """Generator for one stage of a protocol.

    Parameters
    ----------
    params : SystemParams
        System rates.
    dim : int
        Fock truncation.
    measuring : bool
        Whether the measurement laser is on.
    squeezing : bool
        Whether the parametric drive is on.
    phase : float
        Drive phase added to ``params.theta``.
    regime : Regime, optional
        Overrides ``params.regime``.
    """
    regime = Regime(regime) if regime is not None else params.regime
    g, n, mu, eta = params.gamma, params.n_th, params.mu, params.eta
    chi = params.chi if squeezing else 0.0
    theta = params.theta + phase
    c_minus = 0.25 * chi * np.exp(-1j * theta)
    c_plus = -0.25 * chi * np.exp(1j * theta)
    k_lower, k_raise = g * (n + 1), g * n
    s_hom = s_het = 0.0
    if measuring and mu > 0:
        unrecorded = mu * (1 - eta)
        if regime is Regime.ZERO_DETUNED:
            s_hom = math.sqrt(eta * mu)
            k_lower += unrecorded
        else:
            s_het = math.sqrt(eta * mu)
        k_raise += unrecorded
    return _assemble(dim, c_minus, c_plus, s_hom, s_het, k_lower, k_raise)


def default_dt(params: SystemParams):
    """Largest rate-based step: ``1e-3`` over the fastest of mu, chi and gamma(n_th+1)."""
    rates = [r for r in (params.mu, params.chi, params.gamma * (params.n_th + 1)) if r > 0]
    if not rates:
        raise ParameterError("all rates vanish; choose dt explicitly")
    return 1e-3 / max(rates)


def initial_dim(alpha):
    return max(MIN_DIM, math.ceil(4 * abs(alpha) ** 2))


@dataclass
class MeasurementRecord:
    """Demodulated current increments of one trial's measurement step.

    Only the measurement step is recorded; the squeeze-only step yields no
    data.  ``dQ_X[i]`` and ``dQ_Y[i]`` are lab-frame increments over
    ``[i dt, (i+1) dt)``.
    """

    dt: float
    seed: int
    dQ_X: np.ndarray
    dQ_Y: np.ndarray
    schedule: ProtocolSchedule
    params_snapshot: SystemParams
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.dQ_X = np.asarray(self.dQ_X, dtype=float)
        self.dQ_Y = np.asarray(self.dQ_Y, dtype=float)
        if self.dQ_X.shape != self.dQ_Y.shape:
            raise ParameterError("dQ_X and dQ_Y lengths differ")

    @property
    def n_steps(self):
        return self.dQ_X.size

    @property
    def duration(self):
        return self.n_steps * self.dt

    def save(self, path):
        """Write a versioned ``.npz`` file."""
        meta = {
            "format": RECORD_FORMAT,
            "version": RECORD_VERSION,
            "dt": self.dt,
            "seed": int(self.seed),
            "schedule": self.schedule.to_mapping(),
            "params": self.params_snapshot.to_mapping(),
            "diagnostics": self.diagnostics,
        }
        np.savez_compressed(path, dQ_X=self.dQ_X, dQ_Y=self.dQ_Y, meta=json.dumps(meta, default=float))

    @classmethod
    def load(cls, path):
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(str(data["meta"]))
            if meta.get("format") != RECORD_FORMAT:
                raise ParameterError(f"{path}: not a measurement record")
            if meta.get("version") != RECORD_VERSION:
                raise ParameterError(f"{path}: unsupported record version {meta.get('version')}")
            return cls(
                dt=meta["dt"],
                seed=meta["seed"],
                dQ_X=data["dQ_X"],
                dQ_Y=data["dQ_Y"],
                schedule=ProtocolSchedule(**meta["schedule"]),
                params_snapshot=SystemParams.from_mapping(meta["params"]),
                diagnostics=meta.get("diagnostics", {}),
            )


def _steps(duration, dt):
    n = max(1, math.ceil(duration / dt - 1e-9))
    return n, duration / n


def _evolve(psi, gen, n_steps, dt, rng, qx, qy, max_dim, tail_tol, t0):
    """Run one stage; grows the basis as needed.  Returns (psi, gen, log_norm, max_tail)."""
    log_norm = 0.0
    done = 0
    while done < n_steps:
        block = min(NOISE_BLOCK, n_steps - done)
        noise = rng.standard_normal((block, _kernels.NOISE_COLUMNS))
        pos = 0
        while pos < block:
            diag = gen.diag * dt
            reached, ln = _kernels.sse_segment(
                psi, diag, gen.c_minus, gen.c_plus, gen.s_hom, gen.s_het, gen.k_lower, gen.k_raise,
                noise, pos, block, dt, tail_tol, qx, qy, done + pos,
            )
            log_norm += ln
            pos = reached
            if pos < block or _tail(psi) > tail_tol:
                new_dim = psi.size + GROWTH_LEVELS
                if new_dim > max_dim:
                    raise TruncationError(
                        f"Fock basis would exceed max_dim={max_dim}",
                        needed_dim=new_dim,
                        tail_mass=_tail(psi),
                        time_reached=t0 + (done + pos) * dt,
                    )
                grown = np.zeros(new_dim, dtype=np.complex128)
                grown[: psi.size] = psi
                psi = grown
                gen = gen.resized(new_dim)
        done += block
    return psi, gen, log_norm


def _tail(psi):
    return float(np.sum(np.abs(psi[-_kernels.TAIL_LEVELS:]) ** 2))


def simulate_trajectory(initial: FockState, params: SystemParams, schedule: ProtocolSchedule, dt=None,
                        seed=0, *, max_dim=MAX_DIM, tail_tol=TAIL_TOLERANCE, return_state=False):
    """Simulate one trial: squeeze for ``tau``, then measure for ``T``.

    Parameters
    ----------
    initial : FockState
        Initial oscillator state (normalised on entry).
    params : SystemParams
        System rates; ``params.theta`` is added to ``schedule.squeeze_phase``
        so a nonzero value models an unintended drive-phase offset.
    schedule : ProtocolSchedule
        Protocol timing; ``T`` must be finite.
    dt : float, optional
        Target step; rounded down so both stages hold whole steps.
        Defaults to :func:`default_dt`.
    seed : int
        Seed of the trial's random stream.
    max_dim : int
        Hard cap on the Fock basis.
    tail_tol : float
        Probability in the top levels that triggers basis growth.
    return_state : bool
        Also return the final :class:`FockState`.

    Returns
    -------
    MeasurementRecord, or (MeasurementRecord, FockState)

    Raises
    ------
    TruncationError
        If the basis would have to grow beyond ``max_dim``.
    """
    if math.isinf(schedule.T):
        raise ParameterError("simulation needs a finite measurement time T")
    if params.mu <= 0:
        raise ParameterError("simulation needs mu > 0 to produce a record")
    dt = default_dt(params) if dt is None else float(dt)
    if not dt > 0:
        raise ParameterError(f"dt must be > 0, got {dt}")
    rng = np.random.default_rng(seed)
    state = initial.normalized()
    psi = state.padded(max(MIN_DIM, state.dim)).amplitudes
    while _tail(psi) > tail_tol:
        psi = np.concatenate([psi, np.zeros(GROWTH_LEVELS, dtype=np.complex128)])
    phase = schedule.squeeze_phase
    log_norm = state.norm_log

    if schedule.tau > 0:
        n_tau, dt_tau = _steps(schedule.tau, dt)
        gen = build_generator(params, psi.size, measuring=False, squeezing=True, phase=phase)
        empty = np.zeros(0)
        psi, _, ln = _evolve(psi, gen, n_tau, dt_tau, rng, empty, empty, max_dim, tail_tol, 0.0)
        log_norm += ln

    n_meas, dt_meas = _steps(schedule.T, dt)
    gen = build_generator(params, psi.size, measuring=True, squeezing=schedule.maintain_squeezing, phase=phase)
    qx = np.zeros(n_meas)
    qy = np.zeros(n_meas)
    psi, gen, ln = _evolve(psi, gen, n_meas, dt_meas, rng, qx, qy, max_dim, tail_tol, schedule.tau)
    log_norm += ln

    record = MeasurementRecord(
        dt=dt_meas, seed=int(seed), dQ_X=qx, dQ_Y=qy, schedule=schedule, params_snapshot=params,
        diagnostics={"final_dim": int(psi.size), "final_tail": _tail(psi)},
    )
    if return_state:
        return record, FockState(psi, log_norm)
    return record


def trial_seed(base_seed, index):
    """Deterministic per-trial seed derived from ``(base_seed, index)``."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def worker_count(default=1):
    raw = os.environ.get(WORKERS_ENV)
    if raw is None:
        return default
    try:
        return max(1, int(raw))
    except ValueError:
        raise ParameterError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None


def _run_trial(args):
    index, initial, params, schedule, dt, seed, kwargs = args
    try:
        return simulate_trajectory(initial, params, schedule, dt, seed, **kwargs)
    except TruncationError as exc:
        raise TruncationError(f"trial {index}: {exc}", needed_dim=exc.needed_dim, **exc.diagnostics) from exc
    except Exception as exc:
        raise type(exc)(f"trial {index}: {exc}") from exc


def simulate_ensemble(initial: FockState, params: SystemParams, schedules, dt=None, n_trials=1, base_seed=0,
                      *, workers=None, **kwargs):
    """Simulate ``n_trials`` independent trials.

    Trial ``k`` uses ``schedules[k % len(schedules)]`` and seed
    ``trial_seed(base_seed, k)``; results come back in trial order whatever
    the number of workers (``OPTOTOMO_WORKERS`` when ``workers`` is None).
    """
    if n_trials < 1:
        raise ParameterError("n_trials must be >= 1")
    if isinstance(schedules, ProtocolSchedule):
        schedules = [schedules]
    schedules = list(schedules)
    jobs = [
        (k, initial, params, schedules[k % len(schedules)], dt, trial_seed(base_seed, k), kwargs)
        for k in range(n_trials)
    ]
    workers = worker_count() if workers is None else workers
    if workers <= 1:
        return [_run_trial(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_run_trial, jobs, chunksize=max(1, n_trials // (4 * workers))))
