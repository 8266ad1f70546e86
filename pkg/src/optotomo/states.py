"""Fock-basis states, Gaussian POVM operators, Wigner functions and fidelities.

Operators are plain complex ``ndarray`` matrices on a truncated Fock basis.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import InvalidPovmError, ParameterError, TruncationError
from .sim import FockState

TRUNCATION_WARN = 1e-6
# relative slack on det V >= 1/4 for elements sitting exactly on the boundary
PHYSICAL_SLACK = 1e-9

_M = np.array([[1.0, 1.0], [1j, -1j]]) / math.sqrt(2.0)
_SWAP = np.array([[0.0, 1.0], [1.0, 0.0]])


# ---------------------------------------------------------------------------
# pure states


def _coherent_amplitudes(alpha, dim):
    amps = np.empty(dim, dtype=np.complex128)
    amps[0] = math.exp(-0.5 * abs(alpha) ** 2)
    for n in range(1, dim):
        amps[n] = amps[n - 1] * alpha / math.sqrt(n)
    return amps


def _finish(amps):
    norm2 = float(np.vdot(amps, amps).real)
    return FockState(amps / math.sqrt(norm2)), norm2


def default_dim(alpha):
    """Basis size holding a coherent amplitude ``alpha`` comfortably."""
    return max(20, math.ceil(4 * abs(alpha) ** 2 + 10))


def coherent_state(alpha, dim=None) -> FockState:
    """Coherent state ``|alpha>``, renormalised on the truncation."""
    dim = default_dim(alpha) if dim is None else dim
    amps = _coherent_amplitudes(complex(alpha), dim)
    state, norm2 = _finish(amps)
    if 1.0 - norm2 > TRUNCATION_WARN:
        warnings.warn(f"coherent state alpha={alpha} loses {1 - norm2:.2e} to truncation at dim={dim}",
                      stacklevel=2)
    return state


def cat_state(alpha, dim=None) -> FockState:
    """Even cat state proportional to ``|alpha> + |-alpha>``."""
    dim = default_dim(alpha) if dim is None else dim
    amps = _coherent_amplitudes(complex(alpha), dim)
    amps[1::2] = 0.0
    exact = 0.5 * (1.0 + math.exp(-2.0 * abs(alpha) ** 2))
    kept = float(np.vdot(amps, amps).real)
    if abs(alpha) == 0:
        return fock_state(0, dim)
    if 1.0 - kept / exact > TRUNCATION_WARN:
        warnings.warn(f"cat state alpha={alpha} loses {1 - kept / exact:.2e} to truncation at dim={dim}",
                      stacklevel=2)
    return FockState(amps / math.sqrt(kept))


def fock_state(n, dim=None) -> FockState:
    dim = max(n + 2, 20) if dim is None else dim
    if not 0 <= n < dim:
        raise ParameterError(f"level {n} outside a basis of size {dim}")
    amps = np.zeros(dim, dtype=np.complex128)
    amps[n] = 1.0
    return FockState(amps)


def to_density(state, dim=None):
    """Density matrix of a FockState or a matrix, padded or cut to ``dim``."""
    rho = state.density_matrix() if isinstance(state, FockState) else np.asarray(state, dtype=np.complex128)
    return resize(rho, dim) if dim is not None else rho


def resize(op, dim):
    """Embed or truncate a square matrix to ``dim``."""
    op = np.asarray(op)
    if op.shape[0] == dim:
        return op
    out = np.zeros((dim, dim), dtype=np.complex128)
    k = min(dim, op.shape[0])
    out[:k, :k] = op[:k, :k]
    return out


def expect_a(rho):
    dim = rho.shape[0]
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    return complex(np.trace(rho @ a))


def rotate(op, angle):
    """``exp(i angle N) op exp(-i angle N)``: turns phase-space features by ``+angle``."""
    n = np.arange(op.shape[0])
    phase = np.exp(1j * angle * n)
    return phase[:, None] * op * phase.conj()[None, :]


# ---------------------------------------------------------------------------
# Gaussian operators


def gaussian_operator(mean, cov, dim):
    """Operator whose Husimi function is the Gaussian density ``N(mean, cov)``.

    ``<beta|W|beta>`` equals the normalised bivariate Gaussian of ``cov``
    evaluated at the quadrature difference ``(X_beta, Y_beta) - mean``.  For
    ``cov - I/2`` a physical covariance this is a Gaussian state divided by
    ``2 pi``.
    """
    cov = np.asarray(cov, dtype=float)
    mean = np.asarray(mean, dtype=float)
    det = float(np.linalg.det(cov))
    if not det > 0:
        raise InvalidPovmError("covariance must be positive definite")
    K = np.linalg.inv(cov)
    A = -_M.T @ K @ _M + _SWAP
    b = _M.T @ (K @ mean)
    c0 = -math.log(2.0 * math.pi * math.sqrt(det)) - 0.5 * float(mean @ K @ mean)
    W = _kernels.bargmann_elements(complex(A[0, 0]), complex(A[0, 1]), complex(A[1, 1]),
                                   complex(b[0]), complex(b[1]), complex(c0), int(dim))
    return 0.5 * (W + W.conj().T)


def gaussian_state(mean, cov, dim):
    """Gaussian density matrix with quadrature mean ``mean`` and covariance ``cov``.

    The vacuum has ``cov = I/2``.
    """
    cov = np.asarray(cov, dtype=float)
    return 2.0 * math.pi * gaussian_operator(mean, cov + 0.5 * np.eye(2), dim)


def squeezed_thermal_state(n_eff, r, angle, alpha, dim):
    """Displaced, rotated, squeezed thermal state.

    ``r < 0`` squeezes the axis at ``angle``; the covariance is
    ``(n_eff + 1/2) R diag(e^{2r}, e^{-2r}) R^T``.
    """
    c, s = math.cos(angle), math.sin(angle)
    R = np.array([[c, -s], [s, c]])
    cov = (n_eff + 0.5) * R @ np.diag([math.exp(2 * r), math.exp(-2 * r)]) @ R.T
    mean = math.sqrt(2.0) * np.array([alpha.real, alpha.imag])
    return gaussian_state(mean, cov, dim)


@dataclass(frozen=True)
class GaussianShape:
    """Squeezed-thermal description of an element's ``cov - I/2``."""

    n_eff: float
    r: float
    axis: float


def element_covariance(elem):
    sx, sy = math.sqrt(elem.sigma2_X), math.sqrt(elem.sigma2_Y)
    c = elem.rho_c * sx * sy
    return np.array([[elem.sigma2_X, c], [c, elem.sigma2_Y]])


def povm_shape(elem) -> GaussianShape:
    """Validate an element and return its squeezed-thermal parameters.

    Raises
    ------
    InvalidPovmError
        If ``cov - I/2`` is not a physical covariance (below the homodyne
        floor or violating the uncertainty bound).
    """
    V = element_covariance(elem) - 0.5 * np.eye(2)
    if not (V[0, 0] > 0 and V[1, 1] > 0):
        raise InvalidPovmError(
            f"estimate variances ({elem.sigma2_X}, {elem.sigma2_Y}) must exceed the homodyne floor 1/2"
        )
    det = float(np.linalg.det(V))
    if det < 0.25 * (1.0 - PHYSICAL_SLACK):
        raise InvalidPovmError(f"element violates the uncertainty bound: det(cov - I/2) = {det} < 1/4")
    evals, evecs = np.linalg.eigh(V)
    n_eff = math.sqrt(max(det, 0.25)) - 0.5
    # aligned-frame convention: r = log(V_yy / V_xx) / 4 for rho_c = 0
    if elem.rho_c == 0:
        r = 0.25 * math.log(V[1, 1] / V[0, 0])
        axis = 0.0
    else:
        r = -0.25 * math.log(evals[1] / evals[0])
        axis = math.atan2(evecs[1, 0], evecs[0, 0])
    return GaussianShape(n_eff, r, axis)


def r_max(dim):
    """Largest squeezing parameter a basis of size ``dim`` represents."""
    return 0.5 * math.log(4.0 * dim)


def needed_dim(r):
    return math.ceil(math.exp(2.0 * abs(r)) / 4.0)


def povm_operator(elem, dim, *, lab_frame=True):
    """Fock matrix of a Gaussian POVM element.

    Parameters
    ----------
    elem : GaussianPovmElement
        Estimates and variances in the trial frame.
    dim : int
        Basis size.
    lab_frame : bool
        Rotate by the element's ``frame_angle`` so the operator acts on
        lab-frame states.

    Returns
    -------
    ndarray
        Hermitian PSD matrix ``W`` with ``<beta|W|beta>`` equal to the
        Gaussian density of the estimates given the coherent input ``beta``.

    Raises
    ------
    InvalidPovmError
        For unphysical variance pairs.
    TruncationError
        When the squeezing exceeds :func:`r_max` of ``dim``.
    """
    shape = povm_shape(elem)
    if abs(shape.r) > r_max(dim):
        need = needed_dim(shape.r)
        raise TruncationError(
            f"element squeezing |r|={abs(shape.r):.3f} exceeds r_max={r_max(dim):.3f} for dim={dim}",
            needed_dim=need,
        )
    W = gaussian_operator([elem.x_est, elem.y_est], element_covariance(elem), dim)
    if lab_frame and elem.frame_angle:
        W = rotate(W, elem.frame_angle)
    return W


def husimi(op, beta):
    """``<beta|op|beta>`` for a coherent amplitude ``beta``."""
    amps = _coherent_amplitudes(complex(beta), op.shape[0])
    return complex(np.vdot(amps, op @ amps)).real


def clip_psd(op, rel_tol=1e-10):
    """Hermitise and clip eigenvalues above ``-rel_tol * max``; larger negatives raise."""
    op = 0.5 * (op + op.conj().T)
    evals, evecs = np.linalg.eigh(op)
    top = max(evals.max(), 0.0)
    if evals.min() < -rel_tol * top:
        raise InvalidPovmError(f"operator has eigenvalue {evals.min():.3e} below tolerance")
    evals = np.clip(evals, 0.0, None)
    return (evecs * evals) @ evecs.conj().T


# ---------------------------------------------------------------------------
# diagnostics


@dataclass
class WignerGrid:
    x: np.ndarray
    y: np.ndarray
    values: np.ndarray  # shape (len(y), len(x))

    def integral(self):
        return float(np.trapezoid(np.trapezoid(self.values, self.x, axis=1), self.y))

    @property
    def minimum(self):
        return float(self.values.min())

    def save_text(self, path, header_lines=()):
        """Delimited matrix: first row holds x, first column holds y."""
        table = np.empty((self.y.size + 1, self.x.size + 1))
        table[0, 0] = self.x.size  # gnuplot 'nonuniform matrix' layout
        table[0, 1:] = self.x
        table[1:, 0] = self.y
        table[1:, 1:] = self.values
        header = "\n".join(list(header_lines) + ["first row: x grid; first column: y grid"])
        np.savetxt(path, table, delimiter=",", header=header, fmt="%.10g")

    @classmethod
    def load_text(cls, path):
        table = np.loadtxt(path, delimiter=",")
        return cls(table[0, 1:], table[1:, 0], table[1:, 1:])


def wigner(rho, xvec, yvec=None, *, chunk=4096) -> WignerGrid:
    """Wigner function on the grid ``xvec`` x ``yvec``; integrates to ``Tr rho``."""
    rho = to_density(rho)
    xvec = np.asarray(xvec, dtype=float)
    yvec = xvec if yvec is None else np.asarray(yvec, dtype=float)
    X, Y = np.meshgrid(xvec, yvec)
    xs, ys = X.ravel(), Y.ravel()
    out = np.empty(xs.size)
    rho = np.ascontiguousarray(rho, dtype=np.complex128)
    for i in range(0, xs.size, chunk):
        out[i:i + chunk] = _kernels.wigner_points(rho, xs[i:i + chunk].copy(), ys[i:i + chunk].copy())
    return WignerGrid(xvec, yvec, out.reshape(X.shape))


def fidelity(rho, target: FockState):
    """``<psi|rho|psi>`` for a pure target, clipped to [0, 1]."""
    rho = to_density(rho)
    dim = max(rho.shape[0], target.dim)
    rho = resize(rho, dim)
    psi = target.padded(dim).amplitudes
    return float(min(max(np.vdot(psi, rho @ psi).real, 0.0), 1.0))


def trace_distance(rho, sigma):
    evals = np.linalg.eigvalsh(rho - sigma)
    return 0.5 * float(np.sum(np.abs(evals)))


def save_density_text(rho, path, header_lines=()):
    """Rows of ``re, im`` pairs: column ``2n`` is Re rho[m, n], ``2n+1`` Im rho[m, n]."""
    rho = np.asarray(rho)
    table = np.empty((rho.shape[0], 2 * rho.shape[1]))
    table[:, 0::2] = rho.real
    table[:, 1::2] = rho.imag
    header = "\n".join(list(header_lines) + ["columns alternate Re and Im of rho[m, n]"])
    np.savetxt(path, table, delimiter=",", header=header, fmt="%.17g")


def load_density_text(path):
    table = np.loadtxt(path, delimiter=",", ndmin=2)
    return table[:, 0::2] + 1j * table[:, 1::2]
