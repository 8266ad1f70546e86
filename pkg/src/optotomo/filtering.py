"""From measurement records to Gaussian POVM elements.

Each trial's record is rotated into the frame of its squeeze axis and run
through the linear filters of :mod:`optotomo.analytic`.  Estimates stay in
that trial frame; only reconstruction turns them to the lab frame.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import asdict, dataclass

import numpy as np

from . import analytic
from .errors import ContractError, InvalidPovmError, ParameterError
from .model import ProtocolSchedule, SystemParams, protocol_fingerprint
from .sim import MeasurementRecord

POVM_FORMAT = "optotomo-povm"
POVM_VERSION = 1
POVM_COLUMNS = ("trial", "seed", "x_est", "y_est", "sigma2_X", "sigma2_Y", "rho_c", "frame_angle")


@dataclass(frozen=True)
class GaussianPovmElement:
    """Outcome of one trial as a Gaussian POVM element.

    ``x_est`` and ``y_est`` are trial-frame estimates of the initial
    quadratures; ``frame_angle`` is the lab-frame direction of the trial's
    X axis (the squeezed axis).
    """

    x_est: float
    y_est: float
    sigma2_X: float
    sigma2_Y: float
    rho_c: float = 0.0
    frame_angle: float = 0.0
    seed: int | None = None
    trial: int | None = None

    def __post_init__(self):
        if not (self.sigma2_X >= 0.5 and self.sigma2_Y >= 0.5):
            raise InvalidPovmError(
                f"estimate variances ({self.sigma2_X}, {self.sigma2_Y}) below the homodyne floor 1/2"
            )
        if not abs(self.rho_c) < 1:
            raise InvalidPovmError(f"|rho_c| must be < 1, got {self.rho_c}")

    @property
    def normalization(self):
        return 1.0 / (2.0 * math.pi * math.sqrt(self.sigma2_X * self.sigma2_Y * (1.0 - self.rho_c**2)))

    def density(self, X0, Y0):
        """Probability density of this outcome given initial trial-frame quadratures."""
        sx, sy, r = math.sqrt(self.sigma2_X), math.sqrt(self.sigma2_Y), self.rho_c
        dx = (self.x_est - np.asarray(X0)) / sx
        dy = (self.y_est - np.asarray(Y0)) / sy
        q = (dx * dx - 2.0 * r * dx * dy + dy * dy) / (1.0 - r * r)
        return self.normalization * np.exp(-0.5 * q)

    def density_for(self, alpha):
        """Density for a coherent input of lab-frame amplitude ``alpha``."""
        a = complex(alpha) * np.exp(-1j * self.frame_angle)
        return float(self.density(math.sqrt(2.0) * a.real, math.sqrt(2.0) * a.imag))


def rotate_record(record: MeasurementRecord, angle):
    """Trial-frame increments ``(dQ_X', dQ_Y')`` for an axis at ``angle``."""
    c, s = math.cos(angle), math.sin(angle)
    return c * record.dQ_X + s * record.dQ_Y, -s * record.dQ_X + c * record.dQ_Y


@functools.lru_cache(maxsize=64)
def _kernels_for(params: SystemParams, schedule: ProtocolSchedule):
    timing = schedule.with_(squeeze_phase=0.0)
    return analytic.filter_kernels(params, timing), analytic.estimate_stats(params, timing)


def _weights(kernel, record):
    return kernel.weights(record.n_steps, record.dt)


def estimate_quadratures(record: MeasurementRecord, kernels):
    """Left-point sums ``sum_i h(t_i) dQ_i`` in the record's trial frame.

    Raises
    ------
    ContractError
        If the kernels were built for a different protocol or horizon.
    """
    kx, ky = kernels
    tag = protocol_fingerprint(record.params_snapshot, record.schedule)
    for k in (kx, ky):
        if k.tag and k.tag != tag:
            raise ContractError(f"filter kernel {k.tag} does not match record protocol {tag}")
        if not math.isinf(k.horizon) and not math.isclose(k.horizon, record.duration, rel_tol=1e-6):
            raise ContractError(f"kernel horizon {k.horizon} differs from record length {record.duration}")
    qx, qy = rotate_record(record, record.schedule.frame_angle)
    return float(_weights(kx, record) @ qx), float(_weights(ky, record) @ qy)


def povm_element(record: MeasurementRecord, params: SystemParams | None = None,
                 schedule: ProtocolSchedule | None = None, trial=None) -> GaussianPovmElement:
    """Filter a record and attach the closed-form statistics of its protocol."""
    params = record.params_snapshot if params is None else params
    schedule = record.schedule if schedule is None else schedule
    if protocol_fingerprint(params, schedule) != protocol_fingerprint(record.params_snapshot, record.schedule):
        raise ContractError("record was produced under different parameters or timing")
    kernels, stats = _kernels_for(params, schedule)
    x, y = estimate_quadratures(record, kernels)
    return GaussianPovmElement(
        x_est=x, y_est=y, sigma2_X=stats.sigma2_X, sigma2_Y=stats.sigma2_Y, rho_c=stats.rho_c,
        frame_angle=schedule.frame_angle, seed=record.seed, trial=trial,
    )


def filter_records(records):
    return [povm_element(r, trial=k) for k, r in enumerate(records)]


def save_povm_csv(elements, path, *, config_hash="", version=""):
    """One element per row, preceded by ``#`` metadata lines."""
    with open(path, "w", newline="") as fh:
        fh.write(f"# format={POVM_FORMAT} version={POVM_VERSION}\n")
        fh.write(f"# config_hash={config_hash}\n# tool_version={version}\n")
        writer = csv.DictWriter(fh, fieldnames=POVM_COLUMNS)
        writer.writeheader()
        for k, e in enumerate(elements):
            row = asdict(e)
            row["trial"] = k if e.trial is None else e.trial
            row["seed"] = "" if e.seed is None else e.seed
            writer.writerow({c: (repr(row[c]) if isinstance(row[c], float) else row[c]) for c in POVM_COLUMNS})


def read_metadata(path):
    """``#key=value`` header entries of a delimited-text artifact."""
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            for item in line[1:].split():
                if "=" in item:
                    key, value = item.split("=", 1)
                    meta[key] = value
    return meta


def load_povm_csv(path, *, expect_hash=None):
    """Read elements written by :func:`save_povm_csv`.

    Raises
    ------
    ContractError
        When ``expect_hash`` is given and the file was produced under another
        configuration.
    """
    meta = read_metadata(path)
    if meta.get("format") != POVM_FORMAT:
        raise ParameterError(f"{path}: not a POVM element file")
    if expect_hash is not None and meta.get("config_hash") != expect_hash:
        raise ContractError(f"{path}: config hash {meta.get('config_hash')} != expected {expect_hash}")
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    elements = []
    for row in csv.DictReader(rows):
        elements.append(GaussianPovmElement(
            x_est=float(row["x_est"]), y_est=float(row["y_est"]),
            sigma2_X=float(row["sigma2_X"]), sigma2_Y=float(row["sigma2_Y"]),
            rho_c=float(row["rho_c"]), frame_angle=float(row["frame_angle"]),
            seed=int(row["seed"]) if row["seed"] else None, trial=int(row["trial"]),
        ))
    return elements, meta
