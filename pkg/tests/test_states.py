import math
import warnings

import numpy as np
import pytest

from optotomo import InvalidPovmError, TruncationError
from optotomo.filtering import GaussianPovmElement
from optotomo.states import (
    WignerGrid,
    cat_state,
    clip_psd,
    coherent_state,
    expect_a,
    fidelity,
    fock_state,
    gaussian_state,
    husimi,
    load_density_text,
    needed_dim,
    povm_operator,
    povm_shape,
    r_max,
    rotate,
    save_density_text,
    squeezed_thermal_state,
    to_density,
    wigner,
)


def test_coherent_vacuum():
    psi = coherent_state(0.0, 10).amplitudes
    assert psi[0] == 1 and np.allclose(psi[1:], 0)


def test_coherent_mean():
    rho = to_density(coherent_state(2.0, 40))
    assert abs(expect_a(rho) - 2.0) < 1e-8
    alpha = 1.0 + 0.5j
    rho = to_density(coherent_state(alpha, 40))
    dim = rho.shape[0]
    a = np.diag(np.sqrt(np.arange(1, dim)), 1)
    X = (a + a.conj().T) / math.sqrt(2)
    assert np.trace(rho @ X).real == pytest.approx(math.sqrt(2) * alpha.real, abs=1e-10)


def test_truncation_warning():
    with pytest.warns(UserWarning):
        coherent_state(3.0, 8)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        coherent_state(1.0)


def test_cat_state_properties():
    assert np.allclose(cat_state(0.0, 10).amplitudes, fock_state(0, 10).amplitudes)
    psi = cat_state(2.0, 40).amplitudes
    assert np.allclose(psi[1::2], 0)
    n = np.arange(40)
    mean_n = float(np.sum(n * np.abs(psi) ** 2))
    assert mean_n == pytest.approx(4.0 * math.tanh(4.0), rel=1e-10)
    assert np.linalg.norm(psi) == pytest.approx(1.0)


def test_fock_state():
    psi = fock_state(3, 6).amplitudes
    assert psi[3] == 1 and np.sum(np.abs(psi)) == 1
    with pytest.raises(ValueError):
        fock_state(6, 6)


def _gauss(elem, beta):
    x0, y0 = math.sqrt(2) * beta.real, math.sqrt(2) * beta.imag
    return elem.density(x0, y0)


def test_heterodyne_element_is_coherent_projector():
    elem = GaussianPovmElement(0.7, -0.4, 1.0, 1.0)
    dim = 30
    W = povm_operator(elem, dim)
    alpha = (0.7 - 0.4j) / math.sqrt(2)
    psi = coherent_state(alpha, dim).amplitudes
    assert np.allclose(W, np.outer(psi, psi.conj()) / (2 * math.pi), atol=1e-12)
    shape = povm_shape(elem)
    assert shape.r == 0 and shape.n_eff == pytest.approx(0.0, abs=1e-15)


def test_shape_example():
    shape = povm_shape(GaussianPovmElement(0.0, 0.0, 5.0, 0.6))
    assert shape.n_eff + 0.5 == pytest.approx(math.sqrt(0.45))
    assert shape.n_eff + 0.5 == pytest.approx(0.6708, abs=1e-4)
    assert shape.r == pytest.approx(0.25 * math.log(0.1 / 4.5), rel=1e-14)
    assert shape.r == pytest.approx(-0.9514, abs=5e-4)


@pytest.mark.parametrize(
    "elem",
    [
        GaussianPovmElement(1.0, 0.5, 5.0, 0.6),
        GaussianPovmElement(-0.5, 1.2, 0.8, 2.5, 0.3),
        GaussianPovmElement(0.3, 0.1, 2.4, 1.1, -0.3, frame_angle=0.7),
    ],
)
def test_husimi_matches_gaussian(elem):
    dim = 60
    W = povm_operator(elem, dim, lab_frame=False)
    for x in np.linspace(-2, 2, 5):
        for y in np.linspace(-2, 2, 5):
            beta = complex(x, y) / math.sqrt(2)
            assert husimi(W, beta) == pytest.approx(_gauss(elem, beta), abs=1e-8)


def test_lab_frame_rotation():
    elem = GaussianPovmElement(1.0, 0.2, 4.0, 0.7, frame_angle=0.9)
    dim = 40
    trial = povm_operator(elem, dim, lab_frame=False)
    lab = povm_operator(elem, dim)
    assert np.allclose(lab, rotate(trial, 0.9))
    beta_lab = 0.4 + 0.6j
    beta_trial = beta_lab * np.exp(-0.9j)
    assert husimi(lab, beta_lab) == pytest.approx(_gauss(elem, beta_trial), abs=1e-9)
    assert husimi(lab, beta_lab) == pytest.approx(elem.density_for(beta_lab), abs=1e-9)


def test_operator_is_hermitian_psd():
    rng = np.random.default_rng(0)
    for _ in range(20):
        sy = rng.uniform(0.51, 3)
        sx = max(rng.uniform(0.51, 8), 0.5 + 0.25 / (sy - 0.5))
        elem = GaussianPovmElement(rng.normal(), rng.normal(), sx, sy)
        W = povm_operator(elem, 40)
        assert np.allclose(W, W.conj().T)
        evals = np.linalg.eigvalsh(W)
        assert evals.min() >= -1e-10 * evals.max()


def test_invalid_elements():
    with pytest.raises(InvalidPovmError):
        GaussianPovmElement(0.0, 0.0, 1.0, 0.4)
    with pytest.raises(InvalidPovmError):
        povm_operator(GaussianPovmElement(0.0, 0.0, 0.6, 0.6), 20)
    with pytest.raises(InvalidPovmError):
        GaussianPovmElement(0.0, 0.0, 1.0, 1.0, rho_c=1.0)


def test_truncation_cap():
    elem = GaussianPovmElement(0.0, 0.0, 200.0, 0.5 + 0.25 / 199.5)
    r = povm_shape(elem).r
    dim = needed_dim(r)
    assert abs(r) > r_max(dim - 1)
    with pytest.raises(TruncationError) as info:
        povm_operator(elem, dim - 1)
    assert info.value.needed_dim == dim
    povm_operator(elem, dim)


def test_completeness():
    elem_cov = (1.8, 0.7)
    dim = 12
    h = 0.1
    grid = np.arange(-9, 9 + h / 2, h)
    total = np.zeros((dim, dim), dtype=complex)
    for x in grid:
        for y in grid:
            total += povm_operator(GaussianPovmElement(x, y, *elem_cov), dim) * h * h
    block = total[: dim // 2, : dim // 2]
    assert np.max(np.abs(block - np.eye(dim // 2))) < 1e-3


def test_wigner_vacuum_and_normalization():
    xs = np.linspace(-6, 6, 121)
    W = wigner(fock_state(0, 10), xs)
    assert W.values.max() == pytest.approx(1 / math.pi, rel=1e-12)
    assert W.integral() == pytest.approx(1.0, abs=1e-3)


def test_wigner_coherent_nonnegative():
    W = wigner(coherent_state(2.0, 40), np.linspace(-6, 8, 141))
    assert W.minimum >= -1e-10
    i, j = np.unravel_index(np.argmax(W.values), W.values.shape)
    assert W.x[j] == pytest.approx(2 * math.sqrt(2), abs=0.1) and W.y[i] == pytest.approx(0.0, abs=0.1)


def test_wigner_cat_negative():
    W = wigner(cat_state(3.0, 60), np.linspace(-7, 7, 141))
    assert W.minimum < -0.1
    assert W.integral() == pytest.approx(1.0, abs=1e-3)


def test_wigner_squeezed_thermal_matches_gaussian():
    rho = squeezed_thermal_state(0.3, -0.4, 0.5, 0.5 + 0.2j, 60)
    assert np.trace(rho).real == pytest.approx(1.0, abs=1e-9)
    xs = np.linspace(-4, 4, 9)
    W = wigner(rho, xs)
    c, s = math.cos(0.5), math.sin(0.5)
    R = np.array([[c, -s], [s, c]])
    cov = 0.8 * R @ np.diag([math.exp(-0.8), math.exp(0.8)]) @ R.T
    K = np.linalg.inv(cov)
    mean = math.sqrt(2) * np.array([0.5, 0.2])
    for i, y in enumerate(xs):
        for j, x in enumerate(xs):
            d = np.array([x, y]) - mean
            want = math.exp(-0.5 * d @ K @ d) / (2 * math.pi * math.sqrt(np.linalg.det(cov)))
            assert W.values[i, j] == pytest.approx(want, abs=1e-8)


def test_gaussian_state_vacuum():
    rho = gaussian_state([0.0, 0.0], 0.5 * np.eye(2), 8)
    assert np.allclose(rho, to_density(fock_state(0, 8)), atol=1e-12)


def test_fidelity():
    cat = cat_state(2.0, 40)
    assert fidelity(to_density(cat), cat) == pytest.approx(1.0)
    vac = to_density(fock_state(0, 40))
    assert fidelity(vac, cat) == pytest.approx(abs(cat.amplitudes[0]) ** 2)
    rho = to_density(coherent_state(1 + 1j, 30))
    target = cat_state(1.5, 30)
    turned = type(target)(np.exp(1j * 0.7 * np.arange(30)) * target.amplitudes)
    assert fidelity(rotate(rho, 0.7), turned) == pytest.approx(fidelity(rho, target), abs=1e-12)


def test_clip_psd():
    op = np.diag([1.0, -1e-12, 0.5])
    assert np.linalg.eigvalsh(clip_psd(op)).min() >= 0
    with pytest.raises(InvalidPovmError):
        clip_psd(np.diag([1.0, -0.1]))


def test_text_round_trips(tmp_path):
    rho = to_density(coherent_state(0.5 + 0.5j, 10))
    save_density_text(rho, tmp_path / "rho.csv", ["config_hash=abc"])
    assert np.allclose(load_density_text(tmp_path / "rho.csv"), rho, atol=0)
    assert "config_hash=abc" in (tmp_path / "rho.csv").read_text()
    W = wigner(rho, np.linspace(-2, 2, 5), np.linspace(-1, 1, 3))
    W.save_text(tmp_path / "w.csv")
    back = WignerGrid.load_text(tmp_path / "w.csv")
    assert np.allclose(back.x, W.x) and np.allclose(back.y, W.y) and np.allclose(back.values, W.values)
