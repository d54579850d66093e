"""Torus-series algebra: transforms, norms, structure preservation."""

import json

import numpy as np
import pytest

from kamreduce.errors import AliasingError, KamError
from kamreduce.torus import (
    DiagonalPart,
    OperatorSeries,
    TorusSeries,
    delta_norm,
    directional_derivative,
    g_norm,
    k_box,
    lipschitz_seminorm,
    series_from_doc,
    series_to_doc,
    sup_norm_s,
    transform_roundtrip,
)


def random_scalar(n, K, rng, s=0.0, real=True):
    shape = (2 * K + 1,) * n
    c = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    if s > 0:
        w = np.zeros(shape)
        for a in range(n):
            w = w + np.abs(np.arange(-K, K + 1)).reshape([-1 if i == a else 1 for i in range(n)])
        c = c * np.exp(-s * w)
    f = TorusSeries(n, K, c)
    if real:
        f = TorusSeries(n, K, 0.5 * (c + np.conj(c[(slice(None, None, -1),) * n])))
    return f


def random_hermitian(N, n, K, rng, s=0.0):
    shape = (2 * K + 1,) * n + (N, N)
    c = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    if s > 0:
        w = np.zeros((2 * K + 1,) * n)
        for a in range(n):
            w = w + np.abs(np.arange(-K, K + 1)).reshape([-1 if i == a else 1 for i in range(n)])
        c = c * np.exp(-s * w)[..., None, None]
    mirror = np.conj(c[(slice(None, None, -1),) * n].swapaxes(-1, -2))
    return OperatorSeries(n, K, N, 0.5 * (c + mirror))


def dft_oracle(f, M):
    """Direct mode summation on the grid, no FFT anywhere."""
    kb = k_box(f.n, f.K)
    flat = f.coeffs.reshape(len(kb))
    out = np.zeros((M,) * f.n, dtype=complex)
    grid1d = 2 * np.pi * np.arange(M) / M
    mesh = np.meshgrid(*([grid1d] * f.n), indexing="ij")
    for kvec, c in zip(kb, flat):
        phase = np.zeros((M,) * f.n)
        for a in range(f.n):
            phase = phase + kvec[a] * mesh[a]
        out += c * np.exp(1j * phase)
    return out


# ---------------------------------------------------------------------------
# transforms


def test_roundtrip_constant_is_exact():
    f = TorusSeries.constant(2, 3.5 - 0.25j, K=3)
    back, err = transform_roundtrip(f, 16)
    assert err == 0.0
    assert back.coeff((0, 0)) == 3.5 - 0.25j


def test_roundtrip_matches_direct_summation_oracle():
    rng = np.random.default_rng(7)
    for n, K, M in [(1, 5, 16), (2, 3, 12), (2, 5, 16)]:
        f = random_scalar(n, K, rng, real=False)
        vals = f.grid(M)
        oracle = dft_oracle(f, M)
        assert np.max(np.abs(vals - oracle)) < 1e-11 * np.max(np.abs(oracle))
        back, err = transform_roundtrip(f, M)
        assert err < 1e-12 * np.max(np.abs(f.coeffs))


def test_roundtrip_rejects_undersampled_grid():
    f = TorusSeries.zero(1, 5)
    with pytest.raises(AliasingError):
        transform_roundtrip(f, 11)  # needs 2K+2 = 12


def test_pointwise_evaluation_matches_grid():
    rng = np.random.default_rng(3)
    f = random_scalar(2, 4, rng, real=False)
    M = 12
    vals = f.grid(M)
    for idx in [(0, 0), (3, 7), (11, 5)]:
        phi = 2 * np.pi * np.array(idx) / M
        assert abs(f(phi) - vals[idx]) < 1e-12 * max(1.0, abs(vals[idx]))


def test_directional_derivative_single_mode():
    # f = e^{i(k . phi)} -> derivative i (omega . k) f
    f = TorusSeries.from_modes(2, 3, {(2, -1): 1.0})
    omega = np.array([0.7, 0.31])
    df = directional_derivative(f, omega)
    assert abs(df.coeff((2, -1)) - 1j * (2 * 0.7 - 0.31)) < 1e-15


def test_directional_derivative_finite_difference_oracle():
    rng = np.random.default_rng(11)
    f = random_scalar(2, 4, rng, s=0.5, real=False)
    omega = np.array([0.61803, 0.41421])
    df = directional_derivative(f, omega)
    h = 1e-5
    phi0 = np.array([0.9, 2.2])
    fd = (f(phi0 + omega * h) - f(phi0 - omega * h)) / (2 * h)
    assert abs(fd - df(phi0)) < 1e-8


def test_derivative_of_antihermitian_is_antihermitian():
    rng = np.random.default_rng(5)
    H = random_hermitian(4, 2, 3, rng)
    B = OperatorSeries(2, 3, 4, 1j * H.coeffs)  # i * hermitian = anti-hermitian
    assert B.antihermiticity_defect() < 1e-14
    dB = directional_derivative(B, np.array([0.3, 0.9]))
    assert dB.antihermiticity_defect() < 1e-13


def test_hermiticity_preserved_by_roundtrip():
    rng = np.random.default_rng(13)
    P = random_hermitian(5, 1, 4, rng)
    back, _ = transform_roundtrip(P, 16)
    assert back.hermiticity_defect() < 1e-13 * np.max(np.abs(P.coeffs))


# ---------------------------------------------------------------------------
# norms


def test_sup_norm_two_cosine():
    # f = 2 cos(phi) = e^{i phi} + e^{-i phi}: ||f||_s = 2 e^s
    f = TorusSeries.from_modes(1, 1, {1: 1.0, -1: 1.0})
    assert abs(sup_norm_s(f, 0.0) - 2.0) < 1e-15
    s = 0.37
    assert abs(sup_norm_s(f, s) - 2 * np.exp(s)) < 1e-14


def test_sup_norm_upper_bounds_real_sup():
    rng = np.random.default_rng(17)
    f = random_scalar(2, 4, rng, s=0.3)
    grid_sup = float(np.max(np.abs(f.grid(64))))
    assert sup_norm_s(f, 0.0) >= grid_sup - 1e-12


def test_sup_norm_submultiplicative():
    rng = np.random.default_rng(19)
    for trial in range(25):
        n = 1 + trial % 2
        f = random_scalar(n, 3, rng, s=0.4, real=False)
        g = random_scalar(n, 3, rng, s=0.4, real=False)
        fg, _ = f.product(g)
        for s in (0.0, 0.25):
            assert sup_norm_s(fg, s) <= sup_norm_s(f, s) * sup_norm_s(g, s) * (1 + 1e-12)


def test_parseval_on_grid():
    rng = np.random.default_rng(23)
    f = random_scalar(2, 3, rng, real=False)
    M = 16
    vals = f.grid(M)
    lhs = np.sum(np.abs(vals) ** 2) / M**2
    rhs = np.sum(np.abs(f.coeffs) ** 2)
    assert abs(lhs - rhs) < 1e-12 * rhs


def base_for(N, d=4 / 3, delta=0.2, n=1, lam=None):
    lam = np.arange(1, N + 1, dtype=float) ** d if lam is None else lam
    return DiagonalPart(lam=lam, d=d, delta=delta, n=n)


def test_delta_norm_exact_cancellation():
    # P = diag(i^delta) constant, lambda_i = i^d -> weighted matrix is identity
    N, d, delta = 6, 4 / 3, 0.2
    idx = np.arange(1, N + 1, dtype=float)
    P = OperatorSeries(1, 0, N, np.diag(idx**delta)[None, :, :].astype(complex))
    base = base_for(N, d, delta)
    assert abs(delta_norm(P, base, 0.0) - 1.0) < 1e-14


def test_delta_norm_matches_gridwise_svd_oracle():
    rng = np.random.default_rng(29)
    N = 8
    P = random_hermitian(N, 1, 3, rng)
    base = base_for(N)
    M = 32
    got = delta_norm(P, base, 0.0, grid_size=M)
    W = np.diag(base.weight())
    best = 0.0
    for j in range(M):
        phi = 2 * np.pi * j / M
        mat = W @ P(np.array([phi]))
        best = max(best, np.linalg.svd(mat, compute_uv=False)[0])
    assert abs(got - best) < 1e-10 * best


def test_delta_norm_strip_bound_dominates_grid():
    rng = np.random.default_rng(31)
    P = random_hermitian(5, 2, 3, rng, s=0.4)
    base = base_for(5, n=2)
    v0 = delta_norm(P, base, 0.0)
    vs = delta_norm(P, base, 0.3)
    assert vs >= v0 - 1e-12


def test_delta_norm_rejects_bad_lambda():
    with pytest.raises(KamError):
        DiagonalPart(lam=np.array([-1.0, 2.0]), d=4 / 3, delta=0.2, n=1)
    with pytest.raises(KamError):
        DiagonalPart(lam=np.array([2.0, 1.0]), d=4 / 3, delta=0.2, n=1)


def test_g_norm_diag_weight_invariance():
    # For diagonal B the conjugation by W changes nothing: g = plain sup
    N = 5
    c = np.zeros((3, N, N), dtype=complex)
    for k in range(3):
        c[k] += np.diag(1j * np.linspace(0.1, 0.5, N) * (k + 1))
    B = OperatorSeries(1, 1, N, c)
    base = base_for(N)
    g = g_norm(B, base, 0.0)
    p = delta_norm(B, DiagonalPart(lam=base.lam, d=base.d, delta=0.0, n=1), 0.0)
    assert abs(g - p) < 1e-12 * p


def test_lipschitz_seminorm_linear_family():
    # f(omega) = omega_1 * e^{i phi}: seminorm equals 1 exactly
    fam = []
    for w1 in (0.2, 0.5, 0.9):
        fam.append((np.array([w1]), TorusSeries.from_modes(1, 1, {1: w1})))
    val = lipschitz_seminorm(fam, lambda f: sup_norm_s(f, 0.0))
    assert abs(val - 1.0) < 1e-14


def test_lipschitz_seminorm_needs_two_samples():
    with pytest.raises(KamError):
        lipschitz_seminorm([(np.array([0.1]), TorusSeries.zero(1, 1))], lambda f: 0.0)


# ---------------------------------------------------------------------------
# products


def test_product_single_modes():
    f = TorusSeries.from_modes(1, 2, {1: 2.0})
    g = TorusSeries.from_modes(1, 2, {2: 0.5})
    fg, residue = f.product(g)
    assert residue == 0.0
    assert abs(fg.coeff(3) - 1.0) < 1e-14


def test_product_truncation_residue_tracked():
    f = TorusSeries.from_modes(1, 2, {2: 1.0})
    g = TorusSeries.from_modes(1, 2, {2: 1.0})
    fg, residue = f.product(g, K_out=2)
    assert np.max(np.abs(fg.coeffs)) < 1e-14  # the k=4 mode was dropped
    assert abs(residue - 1.0) < 1e-12


def test_matmul_matches_pointwise():
    rng = np.random.default_rng(37)
    A = random_hermitian(4, 1, 2, rng)
    B = random_hermitian(4, 1, 3, rng)
    AB, _ = A.matmul(B)
    phi = np.array([1.234])
    assert np.max(np.abs(AB(phi) - A(phi) @ B(phi))) < 1e-12


def test_product_of_real_series_is_real():
    rng = np.random.default_rng(41)
    f = random_scalar(2, 3, rng, real=True)
    g = random_scalar(2, 3, rng, real=True)
    fg, _ = f.product(g)
    assert fg.mirror_defect() < 1e-12 * max(1.0, np.max(np.abs(fg.coeffs)))


# ---------------------------------------------------------------------------
# serialization


def test_series_doc_roundtrip_exact():
    rng = np.random.default_rng(43)
    f = random_scalar(2, 3, rng, real=False)
    doc = series_to_doc(f)
    blob = json.dumps(doc)
    back = series_from_doc(json.loads(blob))
    assert back.n == f.n and back.K == f.K
    assert np.array_equal(back.coeffs, f.coeffs)  # bit-exact

    P = random_hermitian(4, 1, 2, rng)
    doc = series_to_doc(P)
    back = series_from_doc(json.loads(json.dumps(doc)))
    assert np.array_equal(back.coeffs, P.coeffs)


def test_series_doc_deterministic_bytes():
    rng = np.random.default_rng(47)
    P = random_hermitian(3, 1, 2, rng)
    b1 = json.dumps(series_to_doc(P), sort_keys=True)
    b2 = json.dumps(series_to_doc(P), sort_keys=True)
    assert b1 == b2
