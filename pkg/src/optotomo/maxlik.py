"""Maximum-likelihood state reconstruction by the diluted R-rho-R iteration."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ParameterError
from .states import needed_dim, povm_operator, povm_shape

PROB_FLOOR = 1e-300


@dataclass(frozen=True)
class ReconstructionConfig:
    """Stopping rule and damping of the iteration.

    Parameters
    ----------
    dim : int
        Fock truncation of the reconstructed state.
    tol : float
        Stop once successive iterates are closer than this in trace distance.
    max_iter : int
        Iteration cap.
    dilution : float
        Initial mixing weight ``d`` in ``rho <- N[(1-d) rho + d N[R rho R]]``;
        halved whenever the likelihood would decrease.
    """

    dim: int = 20
    tol: float = 1e-6
    max_iter: int = 2000
    dilution: float = 1.0

    def __post_init__(self):
        if self.dim < 2:
            raise ParameterError("dim must be >= 2")
        if not self.tol > 0:
            raise ParameterError("tol must be > 0")
        if not 0 < self.dilution <= 1:
            raise ParameterError("dilution must lie in (0, 1]")
        if self.max_iter < 0:
            raise ParameterError("max_iter must be >= 0")


@dataclass
class Diagnostics:
    iterations: int = 0
    converged: bool = False
    log_likelihood: list = field(default_factory=list)
    trace_distance: list = field(default_factory=list)
    dilution: list = field(default_factory=list)
    floored: int = 0

    def rows(self):
        return list(zip(range(len(self.log_likelihood)), self.log_likelihood,
                        [math.nan] + self.trace_distance, [math.nan] + self.dilution))


class _Stack:
    """POVM operators stacked as real rows so ``Tr[W_i rho]`` is one mat-vec."""

    def __init__(self, ops):
        ops = [np.asarray(op) for op in ops]
        if not ops:
            raise ParameterError("need at least one POVM operator")
        dim = ops[0].shape[0]
        if any(op.shape != (dim, dim) for op in ops):
            raise ParameterError("all POVM operators must share one dimension")
        self.dim = dim
        self.count = len(ops)
        arr = np.stack(ops)
        self.B = np.concatenate([arr.real.reshape(self.count, -1), arr.imag.reshape(self.count, -1)], axis=1)

    def probabilities(self, rho):
        return self.B @ np.concatenate([rho.real.ravel(), rho.imag.ravel()])

    def weighted_sum(self, weights):
        flat = weights @ self.B
        n2 = self.dim * self.dim
        return (flat[:n2] + 1j * flat[n2:]).reshape(self.dim, self.dim)


def _floor(p):
    low = ~(p > PROB_FLOOR)
    if low.all():
        raise NumericalError("every POVM probability underflowed; the state estimate is inconsistent with the data")
    return np.where(low, PROB_FLOOR, p), int(low.sum())


def _normalize(rho):
    rho = 0.5 * (rho + rho.conj().T)
    return rho / np.trace(rho).real


def trace_distance(rho, sigma):
    return 0.5 * float(np.sum(np.abs(np.linalg.eigvalsh(rho - sigma))))


def log_likelihood(rho, povm_ops):
    """``sum_i log Tr[W_i rho]`` (constants independent of rho omitted)."""
    stack = povm_ops if isinstance(povm_ops, _Stack) else _Stack(povm_ops)
    p, _ = _floor(stack.probabilities(rho))
    return float(np.sum(np.log(p)))


def reconstruct(povm_ops, config: ReconstructionConfig | None = None, initial=None, callback=None):
    """Maximum-likelihood density matrix for a set of POVM operators.

    Parameters
    ----------
    povm_ops : sequence of ndarray
        One lab-frame operator per trial.
    config : ReconstructionConfig
        Defaults to ``ReconstructionConfig(dim=ops[0].shape[0])``.
    initial : ndarray, optional
        Starting point; maximally mixed by default.
    callback : callable, optional
        Called as ``callback(iteration, rho, log_likelihood)``.

    Returns
    -------
    rho : ndarray
        Hermitian, PSD, unit-trace estimate.
    diagnostics : Diagnostics
    """
    stack = _Stack(povm_ops)
    config = config or ReconstructionConfig(dim=stack.dim)
    if config.dim != stack.dim:
        raise ParameterError(f"operators have dim {stack.dim}, config asks for {config.dim}")
    rho = np.eye(stack.dim, dtype=complex) / stack.dim if initial is None else _normalize(np.asarray(initial, complex))
    diag = Diagnostics()
    p, nf = _floor(stack.probabilities(rho))
    ll = float(np.sum(np.log(p)))
    diag.log_likelihood.append(ll)
    diag.floored = max(diag.floored, nf)
    d = config.dilution
    for it in range(1, config.max_iter + 1):
        R = stack.weighted_sum(1.0 / p) / stack.count
        rrr = _normalize(R @ rho @ R)
        while True:
            cand = _normalize((1.0 - d) * rho + d * rrr)
            p_new, nf = _floor(stack.probabilities(cand))
            ll_new = float(np.sum(np.log(p_new)))
            # damped steps may not lose likelihood beyond rounding
            if ll_new >= ll - 1e-12 * abs(ll) or d < 1e-6:
                break
            d *= 0.5
        step = trace_distance(cand, rho)
        rho, p, ll = cand, p_new, ll_new
        diag.floored = max(diag.floored, nf)
        diag.log_likelihood.append(ll)
        diag.trace_distance.append(step)
        diag.dilution.append(d)
        diag.iterations = it
        if callback is not None:
            callback(it, rho, ll)
        if step < config.tol:
            diag.converged = True
            break
    return rho, diag


def choose_dim(elements, min_dim=2):
    """Smallest basis (at least ``min_dim``) that represents every element's squeezing."""
    worst = max((abs(povm_shape(e).r) for e in elements), default=0.0)
    return max(int(min_dim), needed_dim(worst))


def povm_operators(elements, dim):
    """Lab-frame operators for a list of elements.

    Raises
    ------
    TruncationError
        If any element needs a larger basis than ``dim``.
    """
    return [povm_operator(e, dim) for e in elements]


def reconstruct_elements(elements, config: ReconstructionConfig | None = None, min_dim=2):
    """Build operators for ``elements`` and reconstruct."""
    if config is None:
        config = ReconstructionConfig(dim=choose_dim(elements, min_dim))
    return reconstruct(povm_operators(elements, config.dim), config)
