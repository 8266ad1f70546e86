"""Closed-form estimate statistics and filter kernels.

Every function here describes the *anti-squeezed* quadrature (Y for drive
phase 0).  The squeezed quadrature follows from ``chi -> -chi``; the private
helpers take a signed ``chi`` and the public functions apply the flip through
:func:`_both_quadratures` only, so the two never drift apart.

Durations may be :data:`optotomo.model.INFINITE`; each duration-dependent
expression has an explicit branch for that case.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .errors import ParameterError
from .model import INFINITE, ProtocolSchedule, Regime, SystemParams, protocol_fingerprint

# |x| below which expm1(x t)/x and friends switch to their series form
LIMIT_WINDOW = 1e-8


class QuadratureMoments(NamedTuple):
    mean_X: float
    mean_Y: float
    var_X: float
    var_Y: float
    cov_XY: float = 0.0


class EstimateStats(NamedTuple):
    """Variances of the initial-quadrature estimates of one protocol.

    ``eta_het`` is only set when the measurement step runs without squeezing
    (it is then a heterodyne measurement); ``eta_hom`` is ``1/(2 sigma2_Y)``.
    """

    sigma2_X: float
    sigma2_Y: float
    rho_c: float
    eta_het: float | None
    eta_hom: float


def _isinf(t):
    return math.isinf(t)


def _expm1_ratio(x, t):
    """``(exp(x t) - 1) / x`` with the ``x -> 0`` limit ``t``."""
    if _isinf(t):
        if x < 0:
            return -1.0 / x
        return INFINITE
    xt = x * t
    if abs(xt) < LIMIT_WINDOW:
        return t * (1.0 + 0.5 * xt)
    if xt > 709.0:
        return INFINITE
    return math.expm1(xt) / x


def _exp(x, t):
    """``exp(x t)`` accepting an infinite ``t``."""
    if _isinf(t):
        if x < 0:
            return 0.0
        return 1.0 if x == 0 else INFINITE
    xt = x * t
    return INFINITE if xt > 709.0 else math.exp(xt)


def _x_coth_half(rate, T):
    """``rate * coth(rate T / 2)``; ``2/T`` at zero rate and ``rate`` for T = inf."""
    if _isinf(T):
        return rate
    z = 0.5 * rate * T
    if z < LIMIT_WINDOW:
        return 2.0 / T
    if z > 40.0:
        return rate
    return rate / math.tanh(z)


# ---------------------------------------------------------------------------
# squeezing step


def evolve_free_squeeze(params: SystemParams, Y0, V0, tau, quadrature="Y"):
    """Mean and variance of a quadrature after squeezing alone for ``tau``.

    Measurement is off; only the drive and the thermal bath act.  For
    ``quadrature="X"`` the drive enters with the opposite sign.
    """
    chi = params.chi if quadrature == "Y" else -params.chi
    return _free_squeeze(params.gamma, params.n_th, chi, Y0, V0, tau)


def _free_squeeze(gamma, n_th, chi, mean0, var0, tau):
    x = chi - gamma
    diffusion = 0.5 * gamma * (1.0 + 2.0 * n_th)
    if tau == 0:
        return mean0, var0
    growth = _exp(x, tau)
    if _isinf(growth):
        return (math.copysign(INFINITE, mean0) if mean0 else 0.0), INFINITE
    return mean0 * math.sqrt(growth), var0 * growth + diffusion * _expm1_ratio(x, tau)


def free_squeeze_moments(params: SystemParams, moments: QuadratureMoments, tau) -> QuadratureMoments:
    """Evolve means, variances and covariance through a squeeze-only step (drive phase 0)."""
    my, vy = evolve_free_squeeze(params, moments.mean_Y, moments.var_Y, tau, "Y")
    mx, vx = evolve_free_squeeze(params, moments.mean_X, moments.var_X, tau, "X")
    cov = moments.cov_XY * _exp(-params.gamma, tau)
    return QuadratureMoments(mx, my, vx, vy, cov)


# ---------------------------------------------------------------------------
# generic two-step composition


def _two_step(gamma, n_th, chi, excess, tau):
    """Estimate variance after squeezing for ``tau`` then a measurement step.

    ``excess`` is the noise the measurement step adds to its estimate of the
    quadrature at time ``tau``.  Written so that chi = gamma and tau = inf
    need no special casing beyond the helpers.
    """
    x = chi - gamma
    diffusion = 0.5 * gamma * (1.0 + 2.0 * n_th)
    decay = _exp(-x, tau)
    if _isinf(decay):
        return INFINITE
    tail = excess * decay if excess != 0 else 0.0
    return 0.5 + diffusion * _expm1_ratio(-x, tau) + tail


def _sigma2_generic(gamma, n_th, chi, eta_het, tau):
    # literal composition: first term, then the exponentially suppressed bracket
    excess = (2.0 - eta_het) / (2.0 * eta_het)
    x = chi - gamma
    if abs(x) < LIMIT_WINDOW or (_isinf(tau) and x <= 0):
        return _two_step(gamma, n_th, chi, excess, tau)
    floor = (chi + 2.0 * gamma * n_th) / (2.0 * x)
    bracket = excess - gamma * (1.0 + 2.0 * n_th) / (2.0 * x)
    decay = _exp(-x, tau)
    if _isinf(decay):
        return INFINITE
    return floor + decay * bracket


def _both_quadratures(func, params, *args):
    """Evaluate ``func`` for Y (signed chi) and X (chi -> -chi)."""
    return func(params, params.chi, *args), func(params, -params.chi, *args)


def _stats(sx, sy, eta_het=None):
    eta_hom = 0.0 if _isinf(sy) else 1.0 / (2.0 * sy)
    return EstimateStats(sx, sy, 0.0, eta_het, eta_hom)


def sigma_two_step_generic(params: SystemParams, eta_het, tau) -> EstimateStats:
    """Squeeze for ``tau``, then an instantaneous heterodyne of efficiency ``eta_het``."""
    if not 0 < eta_het <= 1:
        raise ParameterError(f"eta_het must lie in (0, 1], got {eta_het}")

    def one(p, chi):
        return _sigma2_generic(p.gamma, p.n_th, chi, eta_het, tau)

    sy, sx = _both_quadratures(one, params)
    return _stats(sx, sy, eta_het)


def sigma_misaligned(params: SystemParams, eta_het, tau, theta):
    """Variance of the initial-Y estimate when the squeeze axis is off by ``theta``.

    The aligned-frame variances are mixed with weights cos^2(theta/2) and
    sin^2(theta/2); the squeezed-axis variance grows like exp((chi+gamma) tau).
    """
    g, n = params.gamma, params.n_th
    c2 = math.cos(0.5 * theta) ** 2
    s2 = math.sin(0.5 * theta) ** 2
    amplified = _sigma2_generic(g, n, params.chi, eta_het, tau)
    squeezed = _sigma2_generic(g, n, -params.chi, eta_het, tau)
    total = 0.0
    if c2 > 0:
        total += c2 * amplified
    if s2 > 0:
        total += s2 * squeezed
    return total


def tau_opt(params: SystemParams, eta_het, theta):
    """Squeezing duration minimising :func:`sigma_misaligned`.

    Returns 0 when squeezing never helps (log argument <= 1) and ``INFINITE``
    for perfect alignment.  For large chi and small theta it approaches
    ``log(2/|theta|)/chi``.
    """
    chi, g, n = params.chi, params.gamma, params.n_th
    if chi <= 0:
        return 0.0
    if math.sin(0.5 * theta) == 0:
        return INFINITE
    k = 2.0 * g * (1.0 + eta_het * n)
    num = (2.0 - eta_het) * chi - k
    den = (2.0 - eta_het) * chi + k
    cot = abs(math.cos(0.5 * theta) / math.sin(0.5 * theta))
    if num <= 0:
        return 0.0
    arg = math.sqrt(num / den) * cot
    if arg <= 1.0:
        return 0.0
    return math.log(arg) / chi


# ---------------------------------------------------------------------------
# rates


def gamma_rate(params: SystemParams):
    """Zero-detuned measurement rate without drive, ``2/Gamma`` sets the time scale."""
    return _rate_zero(params, 0.0)


def _rate_zero(params, chi):
    g, n, mu, eta = params.gamma, params.n_th, params.mu, params.eta
    return math.sqrt((g - chi) ** 2 + 8.0 * mu * eta * (g + 2.0 * g * n + 2.0 * mu))


def _rate_blue(params, chi):
    g, n, mu, eta = params.gamma, params.n_th, params.mu, params.eta
    val = (g - chi) ** 2 + 2.0 * mu * chi * (1.0 - eta) + mu**2 + 2.0 * g * mu * (2.0 * eta * (n + 1.0) - 1.0)
    return math.sqrt(max(val, 0.0))


def decay_rates(params: SystemParams):
    """``(rate_minus, rate_plus)`` of the maintained-squeezing measurement step."""
    rate = _rate_zero if params.regime is Regime.ZERO_DETUNED else _rate_blue
    return rate(params, params.chi), rate(params, -params.chi)


def characteristic_time(params: SystemParams):
    """``2 / rate_minus``, the unit in which the simulated tau and T are quoted."""
    return 2.0 / decay_rates(params)[0]


# ---------------------------------------------------------------------------
# zero detuning


def eta_het_zero(params: SystemParams, T=INFINITE):
    """Effective heterodyne efficiency of an unsqueezed zero-detuned measurement of length T."""
    mu, eta, g = params.mu, params.eta, params.gamma
    if mu == 0:
        return 0.0
    if T == 0:
        return 0.0
    rate = _rate_zero(params, 0.0)
    return 8.0 * eta * mu / (g + 4.0 * eta * mu + _x_coth_half(rate, T))


def _excess_zero_maintained(params, chi, T):
    rate = _rate_zero(params, chi)
    return (_x_coth_half(rate, T) + params.gamma - chi) / (8.0 * params.eta * params.mu)


def _sigma2_zero_maintained(params, chi, tau, T):
    """Two-step variance with squeezing kept on while measuring."""
    g, n = params.gamma, params.n_th
    x = chi - g
    excess = _excess_zero_maintained(params, chi, T)
    if abs(x) < LIMIT_WINDOW or (_isinf(tau) and x <= 0):
        return _two_step(g, n, chi, excess, tau)
    floor = (chi + 2.0 * g * n) / (2.0 * x)
    decay = _exp(-x, tau)
    bracket = excess - g * (1.0 + 2.0 * n) / (2.0 * x)
    if _isinf(decay):
        return INFINITE
    return floor + decay * bracket


def _sigma2_zero_one_step(params, chi, T):
    """Squeezing and measurement switched on together."""
    return 0.5 + (params.gamma - chi + _x_coth_half(_rate_zero(params, chi), T)) / (
        8.0 * params.mu * params.eta
    )


def _require_measurement(params):
    if params.mu <= 0:
        raise ParameterError("a measurement step needs mu > 0")


def sigma_zero_detuned(params: SystemParams, schedule: ProtocolSchedule) -> EstimateStats:
    """Estimate variances for the zero-detuned protocols.

    Squeeze-off measurement steps go through the effective heterodyne
    efficiency; maintained squeezing and the one-step protocol use the
    drive-dependent rates.
    """
    _require_measurement(params)
    kind, tau, T = schedule.kind, schedule.tau, schedule.T
    if kind == "two_step_off":
        eta_het = eta_het_zero(params, T)

        def one(p, chi):
            return _sigma2_generic(p.gamma, p.n_th, chi, eta_het, tau)

        sy, sx = _both_quadratures(one, params)
        return _stats(sx, sy, eta_het)
    if kind == "two_step_maintained":
        sy, sx = _both_quadratures(_sigma2_zero_maintained, params, tau, T)
    else:
        sy, sx = _both_quadratures(_sigma2_zero_one_step, params, T)
    return _stats(sx, sy)


def sigma2_y_weak_measurement_limit(params: SystemParams):
    """``mu -> 0`` limit shared by all protocols above the oscillation threshold."""
    chi, g, n = params.chi, params.gamma, params.n_th
    if chi <= g:
        return INFINITE
    return (chi + 2.0 * g * n) / (2.0 * (chi - g))


def eta_hom(params: SystemParams):
    """Effective homodyne efficiency for long squeezing above threshold (both regimes)."""
    chi, g, n = params.chi, params.gamma, params.n_th
    if chi <= g:
        raise ParameterError(
            f"eta_hom is defined only above the oscillation threshold (chi={chi} <= gamma={g})"
        )
    return (chi - g) / (chi + 2.0 * g * n)


# ---------------------------------------------------------------------------
# blue detuning


def eta_het_blue(params: SystemParams, T=INFINITE):
    """Effective heterodyne efficiency of an unsqueezed blue-detuned measurement.

    For gamma = n_th = 0 this is ``2 eta / (2 eta + coth(mu T/2) - 1)``; the
    general expression keeps the thermal terms and the finite duration.
    """
    mu, eta, g = params.mu, params.eta, params.gamma
    if mu == 0 or T == 0:
        return 0.0
    rate = _rate_blue(params, 0.0)
    return 2.0 * eta * mu / (g + mu * (2.0 * eta - 1.0) + _x_coth_half(rate, T))


def eta_het_blue_lossless(eta, mu, T):
    """Blue-detuned heterodyne efficiency with no mechanical bath."""
    if _isinf(T):
        return 1.0
    # coth(z) - 1 = 2 / expm1(2 z)
    return 2.0 * eta / (2.0 * eta + 2.0 / math.expm1(mu * T))


def _excess_blue_maintained(params, chi, T):
    mu, eta, g = params.mu, params.eta, params.gamma
    rate = _rate_blue(params, chi)
    return (_x_coth_half(rate, T) + g - chi + mu * (eta - 1.0)) / (2.0 * eta * mu)


def _sigma2_blue_maintained(params, chi, tau, T):
    g, n = params.gamma, params.n_th
    x = chi - g
    excess = _excess_blue_maintained(params, chi, T)
    if abs(x) < LIMIT_WINDOW or (_isinf(tau) and x <= 0):
        return _two_step(g, n, chi, excess, tau)
    floor = (chi + 2.0 * g * n) / (2.0 * x)
    decay = _exp(-x, tau)
    if _isinf(decay):
        return INFINITE
    return floor + decay * (excess - g * (1.0 + 2.0 * n) / (2.0 * x))


def _sigma2_blue_one_step(params, chi, T):
    mu, eta, g = params.mu, params.eta, params.gamma
    rate = _rate_blue(params, chi)
    return 0.5 + (g - chi + mu * (eta - 1.0) + _x_coth_half(rate, T)) / (2.0 * eta * mu)


def sigma_blue_detuned(params: SystemParams, schedule: ProtocolSchedule) -> EstimateStats:
    """Estimate variances for the blue-detuned protocols."""
    _require_measurement(params)
    kind, tau, T = schedule.kind, schedule.tau, schedule.T
    if kind == "two_step_off":
        eta_het = eta_het_blue(params, T)

        def one(p, chi):
            return _sigma2_generic(p.gamma, p.n_th, chi, eta_het, tau)

        sy, sx = _both_quadratures(one, params)
        return _stats(sx, sy, eta_het)
    if kind == "two_step_maintained":
        sy, sx = _both_quadratures(_sigma2_blue_maintained, params, tau, T)
    else:
        sy, sx = _both_quadratures(_sigma2_blue_one_step, params, T)
    return _stats(sx, sy)


def estimate_stats(params: SystemParams, schedule: ProtocolSchedule) -> EstimateStats:
    """Aligned-frame estimate statistics for the regime stored in ``params``."""
    if params.regime is Regime.ZERO_DETUNED:
        return sigma_zero_detuned(params, schedule)
    return sigma_blue_detuned(params, schedule)


def rotate_covariance(sigma2_x, sigma2_y, angle):
    """Lab-frame ``(sigma2_X, sigma2_Y, rho_c)`` of aligned-frame variances.

    ``angle`` is the direction of the aligned-frame X axis in the lab frame.
    """
    c, s = math.cos(angle), math.sin(angle)
    vxx = c * c * sigma2_x + s * s * sigma2_y
    vyy = s * s * sigma2_x + c * c * sigma2_y
    vxy = c * s * (sigma2_x - sigma2_y)
    return vxx, vyy, vxy / math.sqrt(vxx * vyy)


# ---------------------------------------------------------------------------
# filters


@dataclass(frozen=True)
class FilterKernel:
    """Weight applied to current increments to estimate one initial quadrature.

    ``h(t) = preimage_factor * exp(-decay_rate t / 2) * (prefactor +
    edge_prefactor exp(-decay_rate (horizon - t))) / (1 - exp(-decay_rate
    horizon))`` on ``[0, horizon]``.  For an infinite horizon, or with
    ``edge=False``, this is the plain ``prefactor * preimage_factor *
    exp(-decay_rate t / 2)``.  The edge term collects the information still
    in the oscillator when a finite record stops.
    """

    prefactor: float
    decay_rate: float
    preimage_factor: float
    horizon: float
    edge_prefactor: float = 0.0
    edge: bool = True
    tag: str = ""

    def __post_init__(self):
        if not self.decay_rate > 0:
            raise ParameterError("filter decay rate must be > 0")

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        r = self.decay_rate
        base = self.preimage_factor * np.exp(-0.5 * r * t)
        if self.edge and not _isinf(self.horizon):
            tail = self.edge_prefactor * np.exp(-r * (self.horizon - t))
            out = base * (self.prefactor + tail) / (-math.expm1(-r * self.horizon))
        else:
            out = base * self.prefactor
        return np.where((t < 0) | (t > self.horizon), 0.0, out)

    def weights(self, n_steps, dt):
        """Left-point weights ``h(i dt)`` for ``i = 0..n_steps-1``."""
        return self(np.arange(n_steps) * dt)


def _kernel(rate, drift, signal, preimage, T, edge):
    gap = 0.5 * rate - drift
    if _isinf(T) or not edge:
        # without the edge term only a contracting measurement step has a filter
        if gap <= 0:
            raise ParameterError("measurement step does not contract; no stable filter")
        return FilterKernel(gap / signal, rate, preimage, T, 0.0, edge=False)
    return FilterKernel(gap / signal, rate, preimage, T, (0.5 * rate + drift) / signal)


def _kernel_for(params, chi, schedule, edge):
    """Kernel for the quadrature whose drive sign is carried by ``chi``."""
    g, mu, eta = params.gamma, params.mu, params.eta
    drive = chi if schedule.maintain_squeezing else 0.0
    if params.regime is Regime.ZERO_DETUNED:
        rate = _rate_zero(params, drive)
        drift = 0.5 * (drive - g)
        signal = 2.0 * math.sqrt(eta * mu)
    else:
        rate = _rate_blue(params, drive)
        drift = 0.5 * (drive - g + mu)
        signal = math.sqrt(eta * mu)
    preimage = math.exp(-0.5 * (chi - g) * schedule.tau)
    return _kernel(rate, drift, signal, preimage, schedule.T, edge)


def filter_kernel(params: SystemParams, schedule: ProtocolSchedule, quadrature="Y", edge=True) -> FilterKernel:
    """Filter turning ``dQ`` of one quadrature into its initial-value estimate.

    Parameters
    ----------
    params, schedule
        System and protocol.
    quadrature : {"Y", "X"}
        Aligned-frame quadrature; X uses the flipped drive.
    edge : bool
        Keep the finite-horizon edge factor.  With ``edge=False`` the plain
        exponential of the infinite-horizon filter is truncated at ``T``,
        which is simpler but no longer reaches the closed-form variances.

    Notes
    -----
    The estimate is ``sum_i h(t_i) dQ_i`` over the measurement step.  It is
    unbiased for the quadrature's initial mean in every regime and protocol.
    """
    _require_measurement(params)
    chi = params.chi if quadrature == "Y" else -params.chi
    kern = _kernel_for(params, chi, schedule, edge)
    return replace(kern, tag=protocol_fingerprint(params, schedule))


def filter_kernels(params: SystemParams, schedule: ProtocolSchedule, edge=True):
    """``(kernel_X, kernel_Y)`` in the squeeze-aligned frame."""
    return filter_kernel(params, schedule, "X", edge), filter_kernel(params, schedule, "Y", edge)


# ---------------------------------------------------------------------------
# time units

TIME_UNITS = ("absolute", "respective", "measurement")


def squeeze_time_unit(params: SystemParams):
    """``1/(chi - gamma)``, the e-folding time of the squeeze-step suppression; 0 below threshold."""
    if params.chi <= params.gamma:
        return 0.0
    return 1.0 / (params.chi - params.gamma)


def resolve_schedule(params: SystemParams, tau, T, maintain_squeezing=True, units="absolute",
                     squeeze_phase=0.0) -> tuple[ProtocolSchedule, dict]:
    """Turn durations quoted in some unit into an absolute schedule.

    Parameters
    ----------
    units : {"absolute", "respective", "measurement"}
        ``"measurement"`` scales both durations by ``2/rate_minus``.
        ``"respective"`` scales ``T`` that way and ``tau`` by
        :func:`squeeze_time_unit`, so a drive at or below the oscillation
        threshold gets no squeeze-only step.

    Returns
    -------
    schedule : ProtocolSchedule
    conversion : dict
        The units and factors used, for logging.
    """
    if units not in TIME_UNITS:
        raise ParameterError(f"unknown time units {units!r}; expected one of {TIME_UNITS}")
    if units == "absolute":
        tau_unit = T_unit = 1.0
    else:
        T_unit = characteristic_time(params)
        tau_unit = T_unit if units == "measurement" else squeeze_time_unit(params)
    T_abs = INFINITE if _isinf(T) else T * T_unit
    schedule = ProtocolSchedule(tau * tau_unit, T_abs, maintain_squeezing, squeeze_phase)
    return schedule, {"units": units, "tau_unit": tau_unit, "T_unit": T_unit,
                      "tau": schedule.tau, "T": schedule.T}
