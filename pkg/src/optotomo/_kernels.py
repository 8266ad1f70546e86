"""Hot loops shared by the simulator, the POVM construction and the Wigner grid.

Every kernel is plain numpy code that numba can compile; see ``_accel``.
"""

import numpy as np

from ._accel import kernel

# noise columns per step: two monitored (homodyne X/Y, or the real and
# imaginary parts of the heterodyne current) and two complex fictitious channels
NOISE_COLUMNS = 6
TAIL_LEVELS = 5


@kernel
def sse_segment(psi, diag, c_minus, c_plus, s_hom, s_het, k_lower, k_raise,
                noise, start, stop, dt, tail_tol, out_qx, out_qy, out_offset):
    """Advance ``psi`` in place over steps ``start..stop-1``.

    Parameters
    ----------
    psi : complex array, shape (dim,)
        Normalised state; overwritten.
    diag : complex array, shape (dim,)
        ``dt`` times the diagonal part of the drift (number-operator terms).
    c_minus, c_plus : complex
        Coefficients of ``a**2`` and ``a_dag**2`` in the drift (per unit time).
    s_hom : float
        Strength of homodyne monitoring of X and Y (0 if off).
    s_het : float
        Strength of heterodyne monitoring through ``a_dag`` (0 if off).
    k_lower, k_raise : float
        Rates of the unrecorded ``a`` and ``a_dag`` channels.
    noise : float array, shape (n_steps, 6)
        Standard normal draws.
    out_qx, out_qy : float arrays
        Record increments are written at ``out_offset + step - start``.

    Returns
    -------
    reached : int
        Index of the next step to run; less than ``stop`` when the upper
        levels gained more than ``tail_tol`` probability.
    log_norm : float
        Sum of the log norms removed by renormalisation.
    """
    dim = psi.shape[0]
    levels = np.arange(dim).astype(np.float64)
    sq1 = np.sqrt(levels[1:])
    sq2 = np.sqrt(levels[1:-1] * levels[2:])
    odd = 2.0 * levels + 1.0
    sdt = np.sqrt(dt)
    hdt = np.sqrt(0.5 * dt)
    g_lower = np.sqrt(k_lower)
    g_raise = np.sqrt(k_raise)
    recording = s_hom > 0.0 or s_het > 0.0
    log_norm = 0.0
    a_psi = np.zeros(dim, dtype=np.complex128)
    ad_psi = np.zeros(dim, dtype=np.complex128)
    a2_psi = np.zeros(dim, dtype=np.complex128)
    ad2_psi = np.zeros(dim, dtype=np.complex128)
    for step in range(start, stop):
        w = noise[step]
        a_psi[:-1] = sq1 * psi[1:]
        mean_a = np.vdot(psi, a_psi)
        u = 0.0j
        v = 0.0j
        if s_hom > 0.0:
            dqx = 2.0 * s_hom * np.sqrt(2.0) * mean_a.real * dt + sdt * w[0]
            dqy = 2.0 * s_hom * np.sqrt(2.0) * mean_a.imag * dt + sdt * w[1]
            s = s_hom / np.sqrt(2.0)
            u += s * (dqx - 1j * dqy)
            v += s * (dqx + 1j * dqy)
        elif s_het > 0.0:
            dy = s_het * np.conj(mean_a) * dt + hdt * (w[0] + 1j * w[1])
            dz = np.conj(dy)
            dqx = np.sqrt(2.0) * dz.real
            dqy = np.sqrt(2.0) * dz.imag
            v += s_het * dz
        else:
            dqx = 0.0
            dqy = 0.0
        if recording:
            out_qx[out_offset + step - start] = dqx
            out_qy[out_offset + step - start] = dqy
        if k_lower > 0.0:
            dy1 = g_lower * mean_a * dt + hdt * (w[2] + 1j * w[3])
            u += g_lower * np.conj(dy1)
        if k_raise > 0.0:
            dy2 = g_raise * np.conj(mean_a) * dt + hdt * (w[4] + 1j * w[5])
            v += g_raise * np.conj(dy2)

        ad_psi[1:] = sq1 * psi[:-1]
        a2_psi[:-2] = sq2 * psi[2:]
        ad2_psi[2:] = sq2 * psi[:-2]
        cm = c_minus * dt + 0.5 * u * u
        cp = c_plus * dt + 0.5 * v * v
        psi += ((diag + 0.5 * u * v * odd) * psi + cm * a2_psi + cp * ad2_psi
                + u * a_psi + v * ad_psi)

        norm2 = np.vdot(psi, psi).real
        psi /= np.sqrt(norm2)
        log_norm += 0.5 * np.log(norm2)
        tail = 0.0
        for i in range(dim - TAIL_LEVELS, dim):
            tail += psi[i].real ** 2 + psi[i].imag ** 2
        if tail > tail_tol:
            return step + 1, log_norm
    return stop, log_norm


@kernel
def bargmann_elements(a11, a12, a22, b1, b2, c0, dim):
    """Fock matrix of an operator whose normal-ordered generating function is Gaussian.

    The generating function is ``exp(c0 + b1 z + b2 w + a11 z**2/2 + a12 z w +
    a22 w**2/2)`` with ``<m|W|n>`` the coefficient of ``z**m w**n / sqrt(m! n!)``.
    """
    g = np.zeros((dim, dim), dtype=np.complex128)
    rt = np.sqrt(np.arange(dim + 1).astype(np.float64))
    g[0, 0] = np.exp(c0)
    for m in range(dim - 1):
        acc = b1 * g[m, 0]
        if m > 0:
            acc += a11 * rt[m] * g[m - 1, 0]
        g[m + 1, 0] = acc / rt[m + 1]
    for m in range(dim):
        for n in range(dim - 1):
            acc = b2 * g[m, n]
            if m > 0:
                acc += a12 * rt[m] * g[m - 1, n]
            if n > 0:
                acc += a22 * rt[n] * g[m, n - 1]
            g[m, n + 1] = acc / rt[n + 1]
    return g


@kernel
def wigner_points(rho, x, y):
    """Wigner function of ``rho`` at the points ``(x[i], y[i])``.

    Uses the stable three-term recursion for the Fock-basis Wigner
    functions, accumulated over the upper triangle of ``rho``.
    """
    dim = rho.shape[0]
    npts = x.shape[0]
    alpha = (x + 1j * y) / np.sqrt(2.0)
    two_a = 2.0 * alpha
    two_ac = 2.0 * np.conj(alpha)
    rt = np.sqrt(np.arange(dim + 1).astype(np.float64))
    wl = np.zeros((dim, npts), dtype=np.complex128)
    wl[0] = np.exp(-2.0 * np.abs(alpha) ** 2) / np.pi
    out = rho[0, 0].real * wl[0].real
    for n in range(1, dim):
        wl[n] = two_a * wl[n - 1] / rt[n]
        out += 2.0 * (rho[0, n] * wl[n]).real
    for m in range(1, dim):
        temp = wl[m].copy()
        wl[m] = (two_ac * temp - rt[m] * wl[m - 1]) / rt[m]
        out += (rho[m, m] * wl[m]).real
        for n in range(m + 1, dim):
            temp2 = (two_a * wl[n - 1] - rt[m] * temp) / rt[n]
            temp = wl[n].copy()
            wl[n] = temp2
            out += 2.0 * (rho[m, n] * wl[n]).real
    return out
