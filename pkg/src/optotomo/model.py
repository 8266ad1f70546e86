"""System parameters, protocol schedules and the squeezing-threshold hierarchy.

All rates share one caller-chosen time unit.  The shipped configurations use
gamma = 0.5 or 0.25 with mu and chi in the same unit.
"""

from __future__ import annotations

import enum
import hashlib
import json
import math
import warnings
from dataclasses import asdict, dataclass, replace
from typing import NamedTuple

from .errors import ParameterError, RegimeWarning

#: Marker for an infinitely long measurement (or squeezing) step.  Every
#: duration-dependent formula has a separate branch for it.
INFINITE = math.inf

# "a >> b" is read as a > MUCH_GREATER * b for the regime checks.
MUCH_GREATER = 10.0


class Regime(str, enum.Enum):
    ZERO_DETUNED = "zero_detuned"
    BLUE_DETUNED = "blue_detuned"


@dataclass(frozen=True)
class SystemParams:
    """Rates of the adiabatically eliminated mechanical mode.

    Parameters
    ----------
    gamma : float
        Mechanical damping rate.
    n_th : float
        Thermal phonon occupancy of the mechanical bath.
    mu : float
        Measurement rate ``4 g**2 / kappa``.
    eta : float
        Detector efficiency in (0, 1].
    chi : float
        Parametric drive strength.
    theta : float
        Parametric drive phase; 0 squeezes X, pi squeezes Y.
    regime : Regime
        Bad-cavity zero detuning or resolved-sideband blue detuning.
    g, kappa, omega_m, delta : float, optional
        Raw cavity parameters, used only to check ``mu`` and the regime.
    """

    gamma: float
    n_th: float
    mu: float
    eta: float = 1.0
    chi: float = 0.0
    theta: float = 0.0
    regime: Regime = Regime.ZERO_DETUNED
    g: float | None = None
    kappa: float | None = None
    omega_m: float | None = None
    delta: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "regime", Regime(self.regime))
        # gamma = 0 is accepted so the lossless limits can be evaluated directly
        if not self.gamma >= 0:
            raise ParameterError(f"gamma must be >= 0, got {self.gamma}")
        if not 0 < self.eta <= 1:
            raise ParameterError(f"eta must lie in (0, 1], got {self.eta}")
        if not self.n_th >= 0:
            raise ParameterError(f"n_th must be >= 0, got {self.n_th}")
        if not self.mu >= 0:
            raise ParameterError(f"mu must be >= 0, got {self.mu}")
        if not self.chi >= 0:
            raise ParameterError(f"chi must be >= 0, got {self.chi}")
        if self.g is not None and self.kappa is not None:
            expected = 4.0 * self.g**2 / self.kappa
            if not math.isclose(self.mu, expected, rel_tol=1e-12, abs_tol=0.0):
                raise ParameterError(
                    f"mu={self.mu} inconsistent with 4 g^2/kappa={expected}"
                )
        for msg in self.regime_warnings():
            warnings.warn(msg, RegimeWarning, stacklevel=3)

    @classmethod
    def from_cavity(cls, g, kappa, **kwargs):
        """Build parameters with ``mu = 4 g**2 / kappa``."""
        return cls(mu=4.0 * g**2 / kappa, g=g, kappa=kappa, **kwargs)

    @classmethod
    def from_mapping(cls, mapping):
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(mapping) - known
        if unknown:
            raise ParameterError(f"unknown parameter keys: {sorted(unknown)}")
        return cls(**mapping)

    def to_mapping(self):
        out = asdict(self)
        out["regime"] = self.regime.value
        return {k: v for k, v in out.items() if v is not None}

    def with_(self, **changes):
        return replace(self, **changes)

    # derived quantities

    @property
    def mu_tilde(self):
        return self.eta * self.mu

    @property
    def n_eff_bath(self):
        excess = self.mu * (1.0 - self.eta)
        if excess == 0:
            return self.n_th
        return self.n_th + excess / self.gamma if self.gamma > 0 else INFINITE

    @property
    def cooperativity(self):
        if self.g is None or self.kappa is None:
            return None
        return self.g**2 / (self.kappa * self.gamma)

    def regime_warnings(self):
        """Human-readable notes on violated adiabatic-regime assumptions."""
        notes = []
        if self.kappa is None:
            return notes
        k = self.kappa
        slow = {"mu": self.mu, "gamma(n_th+1)": self.gamma * (self.n_th + 1), "chi": self.chi}
        if self.regime is Regime.ZERO_DETUNED:
            if self.omega_m is not None:
                if not k > MUCH_GREATER * self.omega_m:
                    notes.append(f"zero-detuned model expects kappa >> omega_m ({k} vs {self.omega_m})")
                for name, rate in slow.items():
                    if not self.omega_m > MUCH_GREATER * rate:
                        notes.append(f"zero-detuned model expects omega_m >> {name}")
            if self.delta not in (None, 0.0):
                notes.append("zero-detuned model expects Delta = 0")
        else:
            if self.omega_m is not None and not self.omega_m > MUCH_GREATER * k:
                notes.append(f"blue-detuned model expects omega_m >> kappa ({self.omega_m} vs {k})")
            if self.g is not None and not k > MUCH_GREATER * self.g:
                notes.append("blue-detuned model expects kappa >> g")
            if not k > MUCH_GREATER * self.chi:
                notes.append("blue-detuned model expects kappa >> chi")
        return notes


class Thresholds(NamedTuple):
    chi_osc: float
    chi_del: float
    chi_het: float


def thresholds(params: SystemParams, eta_het=None, form="two_step") -> Thresholds:
    """Squeezing thresholds ``chi_het >= chi_del >= chi_osc``.

    ``form="two_step"`` needs the effective heterodyne efficiency ``eta_het``
    of the measurement step; ``form="one_step"`` uses the zero-detuned
    weak-measurement delay threshold, which depends on the detector
    efficiency instead.
    """
    g, n = params.gamma, params.n_th
    chi_osc = g
    chi_het = 2.0 * g * (1.0 + n)
    if form == "two_step":
        if eta_het is None or not 0 < eta_het <= 1:
            raise ParameterError(f"two-step chi_del needs eta_het in (0, 1], got {eta_het}")
        chi_del = 2.0 * g * (1.0 + n * eta_het) / (2.0 - eta_het)
    elif form == "one_step":
        chi_del = 2.0 * g * (1.0 + n) + g * (math.sqrt(params.eta) - 1.0)
    else:
        raise ParameterError(f"unknown threshold form {form!r}")
    # the ordering is exact algebraically; clamp away last-ulp rounding only
    chi_del = min(max(chi_del, chi_osc), chi_het)
    return Thresholds(chi_osc, chi_del, chi_het)


class DerivedParams(NamedTuple):
    mu_tilde: float
    n_eff_bath: float
    cooperativity: float | None


def derived_params(params: SystemParams) -> DerivedParams:
    return DerivedParams(params.mu_tilde, params.n_eff_bath, params.cooperativity)


@dataclass(frozen=True)
class ProtocolSchedule:
    """Timing of one trial.

    ``tau`` is the squeeze-only step (measurement off), ``T`` the measurement
    step.  ``tau == 0`` with ``maintain_squeezing`` is the one-step protocol.
    """

    tau: float = 0.0
    T: float = INFINITE
    maintain_squeezing: bool = True
    squeeze_phase: float = 0.0

    def __post_init__(self):
        if not self.tau >= 0:
            raise ParameterError(f"tau must be >= 0, got {self.tau}")
        if not self.T > 0:
            raise ParameterError(f"T must be > 0, got {self.T}")
        if math.isinf(self.tau):
            raise ParameterError("an infinite squeeze-only step produces no record")

    @property
    def kind(self):
        if self.tau == 0 and self.maintain_squeezing:
            return "one_step"
        return "two_step_maintained" if self.maintain_squeezing else "two_step_off"

    @property
    def frame_angle(self):
        """Angle of the squeezed quadrature axis in phase space."""
        return 0.5 * self.squeeze_phase

    def with_(self, **changes):
        return replace(self, **changes)

    def to_mapping(self):
        return asdict(self)


def uniform_phases(n_phases):
    """Squeeze phases ``2 pi k / n_phases``, k = 0..n_phases-1."""
    if n_phases < 1:
        raise ParameterError("n_phases must be >= 1")
    return [2.0 * math.pi * k / n_phases for k in range(n_phases)]


def protocol_fingerprint(params: SystemParams, schedule: ProtocolSchedule | None = None, n=12):
    """Short stable hash of the parameters and the phase-independent timing.

    Two trials with the same fingerprint share filter kernels and estimate
    statistics; the squeeze phase is deliberately excluded.
    """
    payload = {"params": params.to_mapping()}
    if schedule is not None:
        timing = schedule.to_mapping()
        timing.pop("squeeze_phase")
        payload["schedule"] = timing
    text = json.dumps(payload, sort_keys=True, default=repr)
    return hashlib.sha256(text.encode()).hexdigest()[:n]
