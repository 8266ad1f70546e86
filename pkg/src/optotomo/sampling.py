"""Drawing filter outcomes straight from the POVM, without simulating currents.

For an outcome ``m`` the probability density is ``Tr[W_m rho]`` with ``W_m``
the Gaussian POVM element centred on ``m``.  Two samplers are provided:

* superpositions of coherent states (coherent and cat states) are sampled
  exactly by rejection from a mixture of Gaussians;
* any density matrix can be sampled on a grid, where ``Tr[W_m rho]`` is the
  Wigner function smoothed by a Gaussian of covariance ``Sigma - I/2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import fftconvolve

from .errors import NumericalError, ParameterError
from .filtering import GaussianPovmElement
from .sim import FockState
from .states import _M, _SWAP, element_covariance, to_density, wigner

BATCH = 256


@dataclass(frozen=True)
class CoherentSuperposition:
    """State ``sum_j c_j |beta_j>`` (normalised on construction)."""

    coeffs: tuple
    amplitudes: tuple

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        b = np.asarray(self.amplitudes, dtype=complex)
        if c.shape != b.shape or c.ndim != 1 or c.size == 0:
            raise ParameterError("coefficients and amplitudes must be equal-length 1-d sequences")
        norm = math.sqrt(self._gram(c, b))
        object.__setattr__(self, "coeffs", tuple(c / norm))
        object.__setattr__(self, "amplitudes", tuple(b))

    @staticmethod
    def _gram(c, b):
        overlap = np.exp(-0.5 * np.abs(b[:, None]) ** 2 - 0.5 * np.abs(b[None, :]) ** 2 + b[:, None].conj() * b[None, :])
        return float(np.real(c.conj() @ overlap @ c))

    @classmethod
    def coherent(cls, alpha):
        return cls((1.0,), (complex(alpha),))

    @classmethod
    def cat(cls, alpha):
        return cls((1.0, 1.0), (complex(alpha), -complex(alpha)))

    def to_fock(self, dim):
        n = np.arange(dim)
        amps = np.zeros(dim, dtype=complex)
        logfact = np.cumsum(np.log(np.maximum(n, 1)))
        for c, b in zip(self.coeffs, self.amplitudes):
            if b == 0:
                amps[0] += c
                continue
            amps += c * np.exp(-0.5 * abs(b) ** 2 + n * np.log(b) - 0.5 * logfact)
        return FockState(amps)


def _quadratures(beta):
    beta = np.asarray(beta, dtype=complex)
    return math.sqrt(2.0) * np.stack([beta.real, beta.imag], axis=-1)


def superposition_density(truth: CoherentSuperposition, cov, m, angle=0.0):
    """``Tr[W_m rho]`` for trial-frame outcomes ``m`` (shape (B, 2)) and frame ``angle``."""
    c = np.asarray(truth.coeffs)
    beta = np.asarray(truth.amplitudes) * np.exp(-1j * angle)
    K = np.linalg.inv(cov)
    A = -_M.T @ K @ _M + _SWAP
    m = np.atleast_2d(m)
    b = (m @ K) @ _M  # rows are M^T K m
    c0 = -math.log(2.0 * math.pi * math.sqrt(np.linalg.det(cov))) - 0.5 * np.einsum("bi,ij,bj->b", m, K, m)
    z = beta.conj()[None, :, None]  # index k
    w = beta[None, None, :]  # index j
    expo = (c0[:, None, None] + b[:, 0, None, None] * z + b[:, 1, None, None] * w
            + 0.5 * A[0, 0] * z * z + A[0, 1] * z * w + 0.5 * A[1, 1] * w * w
            - 0.5 * (np.abs(z) ** 2 + np.abs(w) ** 2))
    weights = c.conj()[:, None] * c[None, :]
    return np.real(np.sum(weights[None] * np.exp(expo), axis=(1, 2)))


def _mixture_density(centres, cov, m):
    K = np.linalg.inv(cov)
    d = m[:, None, :] - centres[None, :, :]
    q = np.einsum("bji,ik,bjk->bj", d, K, d)
    return np.mean(np.exp(-0.5 * q), axis=1) / (2.0 * math.pi * math.sqrt(np.linalg.det(cov)))


def sample_superposition(truth: CoherentSuperposition, cov, angle, n, rng):
    """``n`` exact trial-frame draws of the outcome for frame ``angle``."""
    beta = np.asarray(truth.amplitudes) * np.exp(-1j * angle)
    centres = _quadratures(beta)
    J = centres.shape[0]
    bound = J * float(np.sum(np.abs(truth.coeffs) ** 2))
    chol = np.linalg.cholesky(cov)
    out = np.empty((0, 2))
    while out.shape[0] < n:
        size = max(BATCH, 2 * (n - out.shape[0]) * int(math.ceil(bound)))
        pick = rng.integers(J, size=size)
        m = centres[pick] + rng.standard_normal((size, 2)) @ chol.T
        p = superposition_density(truth, cov, m, angle)
        q = _mixture_density(centres, cov, m)
        ratio = p / (bound * q)
        if np.any(ratio > 1.0 + 1e-9):
            raise NumericalError(f"rejection bound violated (ratio {ratio.max():.6f})")
        keep = rng.random(size) < ratio
        out = np.concatenate([out, m[keep]])
    return out[:n]


@dataclass
class GridDensity:
    """Outcome density on a lab-frame grid for one trial frame."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray


def grid_density(rho, cov, angle, half_width=None, n_grid=257):
    """``Tr[W_m rho]`` on a lab-frame grid, as Wigner convolved with ``Sigma - I/2``.

    ``cov`` is the trial-frame covariance; it is turned by ``angle`` here.
    """
    rho = to_density(rho)
    dim = rho.shape[0]
    spread = math.sqrt(max(np.linalg.eigvalsh(cov)))
    half_width = half_width or (math.sqrt(2.0 * dim + 1.0) + 6.0 * spread)
    x = np.linspace(-half_width, half_width, n_grid)
    h = x[1] - x[0]
    W = wigner(rho, x).values
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    V = R @ (cov - 0.5 * np.eye(2)) @ R.T
    Vinv = np.linalg.inv(V)
    reach = int(math.ceil(6.0 * math.sqrt(max(np.linalg.eigvalsh(V))) / h))
    k = np.arange(-reach, reach + 1) * h
    KX, KY = np.meshgrid(k, k)
    d = np.stack([KX, KY], axis=-1)
    g = np.exp(-0.5 * np.einsum("...i,ij,...j->...", d, Vinv, d))
    g /= g.sum()
    P = fftconvolve(W, g, mode="same")
    return GridDensity(x, x, np.clip(P, 0.0, None))


def sample_grid(density: GridDensity, angle, n, rng):
    """Draw ``n`` trial-frame outcomes from a grid density (cell pick plus uniform jitter)."""
    p = density.values.ravel()
    total = p.sum()
    if not total > 0:
        raise NumericalError("grid density vanishes")
    idx = rng.choice(p.size, size=n, p=p / total)
    iy, ix = np.unravel_index(idx, density.values.shape)
    hx = density.x[1] - density.x[0]
    hy = density.y[1] - density.y[0]
    lab = np.stack([density.x[ix] + hx * (rng.random(n) - 0.5), density.y[iy] + hy * (rng.random(n) - 0.5)], axis=1)
    c, s = math.cos(angle), math.sin(angle)
    return np.stack([c * lab[:, 0] + s * lab[:, 1], -s * lab[:, 0] + c * lab[:, 1]], axis=1)


def sample_elements(truth, stats, frame_angles, rng=None, *, seed=0):
    """One POVM element per entry of ``frame_angles`` for the given truth state.

    Parameters
    ----------
    truth : CoherentSuperposition, FockState or ndarray
        Exact sampling for superpositions; grid sampling otherwise.
    stats : EstimateStats or GaussianPovmElement-like
        Source of ``sigma2_X``, ``sigma2_Y`` and ``rho_c``.
    frame_angles : sequence of float
        Trial-frame angle of every trial, in trial order.
    rng : numpy Generator, optional
        Defaults to ``default_rng(seed)``.
    """
    rng = np.random.default_rng(seed) if rng is None else rng
    frame_angles = np.asarray(frame_angles, dtype=float)
    template = GaussianPovmElement(0.0, 0.0, stats.sigma2_X, stats.sigma2_Y, stats.rho_c)
    cov = element_covariance(template)
    draws = np.empty((frame_angles.size, 2))
    for angle in np.unique(frame_angles):
        where = np.flatnonzero(frame_angles == angle)
        if isinstance(truth, CoherentSuperposition):
            draws[where] = sample_superposition(truth, cov, angle, where.size, rng)
        else:
            dens = grid_density(truth, cov, angle)
            draws[where] = sample_grid(dens, angle, where.size, rng)
    return [
        GaussianPovmElement(float(x), float(y), stats.sigma2_X, stats.sigma2_Y, stats.rho_c, float(a), trial=k)
        for k, ((x, y), a) in enumerate(zip(draws, frame_angles))
    ]

