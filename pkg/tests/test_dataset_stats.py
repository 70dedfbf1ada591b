import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gaussdiff import (
    DatasetError,
    GaussianModel,
    PointCloud,
    compute_moments,
    fit_gaussian,
    fit_gmm_by_label,
    load_point_cloud,
    save_point_cloud,
    third_central_moment,
)

from conftest import random_model

clouds = st.integers(1, 12).flatmap(
    lambda n: st.integers(1, 5).flatmap(
        lambda d: arrays(np.float64, (n, d), elements=st.floats(-100, 100, allow_nan=False))
    )
)


# ---------------------------------------------------------------- types


def test_point_cloud_rejects_bad_input():
    with pytest.raises(DatasetError):
        PointCloud(np.zeros((0, 2)))
    with pytest.raises(DatasetError):
        PointCloud(np.array([[0.0, np.nan]]))
    with pytest.raises(DatasetError):
        PointCloud(np.zeros((3, 2)), labels=[0, 1])


def test_point_cloud_is_immutable(square_cloud):
    with pytest.raises(ValueError):
        square_cloud.data[0, 0] = 5.0


def test_gaussian_model_validates_basis():
    with pytest.raises(ValueError):
        GaussianModel(np.zeros(2), np.array([[1.0, 1.0], [0.0, 1.0]]), [2.0, 1.0])
    with pytest.raises(ValueError):
        GaussianModel(np.zeros(2), np.eye(2), [1.0, 2.0])
    with pytest.raises(ValueError):
        GaussianModel(np.zeros(2), np.eye(2), [1.0, 0.0])


# -------------------------------------------------------------- moments


def test_moments_of_square(square_cloud):
    mu, cov = compute_moments(square_cloud)
    np.testing.assert_allclose(mu, [1.0, 1.0])
    np.testing.assert_allclose(cov, np.eye(2), atol=1e-15)


def test_moments_single_point_and_pair():
    mu, cov = compute_moments(PointCloud([[3.0, -1.0]]))
    np.testing.assert_array_equal(mu, [3.0, -1.0])
    np.testing.assert_array_equal(cov, np.zeros((2, 2)))
    mu, cov = compute_moments(PointCloud([[-1.0], [1.0]]))
    np.testing.assert_allclose(mu, [0.0])
    np.testing.assert_allclose(cov, [[1.0]])


@settings(max_examples=50, deadline=None)
@given(clouds, st.randoms(use_true_random=False))
def test_moments_permutation_invariant_and_psd(data, rnd):
    perm = list(range(data.shape[0]))
    rnd.shuffle(perm)
    mu, cov = compute_moments(PointCloud(data))
    mu2, cov2 = compute_moments(PointCloud(data[perm]))
    scale = 1.0 + np.abs(data).max() ** 2
    np.testing.assert_allclose(mu2, mu, atol=1e-12 * scale)
    np.testing.assert_allclose(cov2, cov, atol=1e-12 * scale)
    np.testing.assert_array_equal(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() >= -1e-10 * scale
    # population convention against numpy
    np.testing.assert_allclose(cov, np.atleast_2d(np.cov(data.T, bias=True)), atol=1e-9 * scale)


# ----------------------------------------------------------------- fits


def test_fit_diagonal_matches_dense_eigh(rng):
    z = rng.standard_normal((4000, 2)) * [2.0, 1.0]
    pc = PointCloud(z - z.mean(0))
    g = fit_gaussian(pc)
    _, cov = compute_moments(pc)
    w, v = np.linalg.eigh(cov)
    np.testing.assert_allclose(g.eigenvalues, w[::-1], rtol=1e-12)
    np.testing.assert_allclose(g.basis @ g.basis.T, np.eye(2), atol=1e-12)
    np.testing.assert_allclose(np.abs(g.basis.T @ v[:, ::-1]), np.eye(2), atol=1e-10)


def test_fit_exact_diagonal_cloud():
    # points (+-2, 0), (0, +-1): covariance diag(2, 0.5); basis is a signed permutation
    pc = PointCloud([[2.0, 0.0], [-2.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
    g = fit_gaussian(pc)
    assert g.rank == 2
    np.testing.assert_allclose(g.eigenvalues, [2.0, 0.5])
    np.testing.assert_allclose(np.abs(g.basis), np.eye(2), atol=1e-14)


def test_fit_single_point_has_rank_zero():
    g = fit_gaussian(PointCloud([[1.0, 2.0, 3.0]]))
    assert g.rank == 0
    assert g.basis.shape == (3, 0)
    np.testing.assert_array_equal(g.mean, [1.0, 2.0, 3.0])


def test_fit_rank_one_cloud():
    u = np.array([0.6, 0.8])
    g = fit_gaussian(PointCloud(np.stack([-u, u])))
    assert g.rank == 1
    np.testing.assert_allclose(g.eigenvalues, [1.0])
    np.testing.assert_allclose(g.basis[:, 0], u, atol=1e-14)  # largest entry forced positive


def test_fit_sign_convention_is_reproducible(rng):
    data = rng.standard_normal((50, 6))
    a, b = fit_gaussian(PointCloud(data)), fit_gaussian(PointCloud(data.copy()))
    np.testing.assert_array_equal(a.basis, b.basis)
    idx = np.argmax(np.abs(a.basis), axis=0)
    assert np.all(a.basis[idx, np.arange(a.rank)] > 0)


@settings(max_examples=40, deadline=None)
@given(clouds)
def test_fit_invariants(data):
    pc = PointCloud(data)
    g = fit_gaussian(pc)
    _, cov = compute_moments(pc)
    assert g.rank <= min(pc.n_points - 1, pc.dim)
    np.testing.assert_allclose(g.basis.T @ g.basis, np.eye(g.rank), atol=1e-10)
    assert np.all(np.diff(g.eigenvalues) <= 0) and np.all(g.eigenvalues > 0)
    lam1 = g.eigenvalues[0] if g.rank else 0.0
    err = np.linalg.norm(g.covariance - cov)
    assert err <= 1e-10 * lam1 * np.sqrt(pc.dim) + 1e-9 * (1 + np.abs(cov).max())


def test_refit_recovers_spectrum(rng):
    g = random_model(rng, 6, 4, 0.5, 5.0)
    m = 20000
    g2 = fit_gaussian(PointCloud(g.sample(m, rng)))
    tol = 5 * g.eigenvalues[0] / np.sqrt(m)
    np.testing.assert_allclose(g2.eigenvalues[:4], g.eigenvalues, atol=tol)
    assert np.all(g2.eigenvalues[4:] < tol)


# ------------------------------------------------------------- mixtures


def test_gmm_weights_from_counts():
    data = np.arange(12, dtype=float).reshape(6, 2)
    m = fit_gmm_by_label(PointCloud(data, labels=[2, 1, 1, 0, 0, 0]))
    np.testing.assert_allclose(m.weights, [3 / 6, 2 / 6, 1 / 6])
    assert m.labels == (0, 1, 2)
    assert abs(m.weights.sum() - 1.0) <= 1e-12
    m2 = fit_gmm_by_label(PointCloud(data[:4], labels=[0, 1, 0, 1]))
    np.testing.assert_allclose(m2.weights, [0.5, 0.5])


def test_gmm_single_label_equals_full_fit(rng):
    data = rng.standard_normal((30, 3))
    m = fit_gmm_by_label(PointCloud(data, labels=np.zeros(30, dtype=int)))
    g = fit_gaussian(PointCloud(data))
    assert m.k == 1 and m.weights[0] == 1.0
    np.testing.assert_array_equal(m.components[0].mean, g.mean)
    np.testing.assert_array_equal(m.components[0].basis, g.basis)
    np.testing.assert_array_equal(m.components[0].eigenvalues, g.eigenvalues)


def test_gmm_requires_labels(square_cloud):
    with pytest.raises(DatasetError):
        fit_gmm_by_label(square_cloud)


# ---------------------------------------------------------- third moment


def test_third_moment_examples():
    np.testing.assert_allclose(third_central_moment(PointCloud([[-1.0], [1.0]])).gamma, [0.0])
    np.testing.assert_allclose(third_central_moment(PointCloud([[0.0], [3.0]])).gamma, [0.0])
    np.testing.assert_allclose(third_central_moment(PointCloud([[0.0], [0.0], [3.0]])).gamma, [2.0])


@settings(max_examples=40, deadline=None)
@given(clouds)
def test_third_moment_reflection_and_loop_oracle(data):
    pc = PointCloud(data)
    mu = data.mean(0)
    gamma = third_central_moment(pc).gamma
    scale = 1.0 + np.abs(data).max() ** 3
    expect = np.zeros(data.shape[1])
    for y in data:
        c = y - mu
        expect += (c @ c) * c
    np.testing.assert_allclose(gamma, expect / len(data), atol=1e-10 * scale)
    reflected = third_central_moment(PointCloud(2 * mu - data)).gamma
    np.testing.assert_allclose(reflected, -gamma, atol=1e-10 * scale)


# -------------------------------------------------------------------- I/O


def test_load_csv(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("0,0\n2,0\n0,2\n2,2\n")
    pc = load_point_cloud(p, "csv")
    assert (pc.n_points, pc.dim) == (4, 2)
    np.testing.assert_array_equal(pc.data[3], [2.0, 2.0])
    p.write_text("5")
    pc = load_point_cloud(p, "csv")
    assert (pc.n_points, pc.dim) == (1, 1)


def test_load_labeled_csv(tmp_path):
    p = tmp_path / "l.csv"
    p.write_text("0.5,1.5,3\n2,1,0\n")
    pc = load_point_cloud(p, "csv", labeled=True)
    np.testing.assert_array_equal(pc.labels, [3, 0])
    assert pc.dim == 2


def test_load_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("1,2\n3\n")
    with pytest.raises(DatasetError, match="row"):
        load_point_cloud(p, "csv")
    p.write_text("1,x\n")
    with pytest.raises(DatasetError):
        load_point_cloud(p, "csv")
    with pytest.raises(DatasetError, match="no such file"):
        load_point_cloud(tmp_path / "missing.csv")


def test_binary_round_trip(tmp_path, rng):
    data = rng.standard_normal((3, 2))
    p = tmp_path / "x.pcld"
    save_point_cloud(PointCloud(data), p)
    raw = p.read_bytes()
    assert raw[:4] == b"PCLD"
    assert struct.unpack_from("<IQQI", raw, 4) == (1, 3, 2, 0)
    assert len(raw) == 28 + 6 * 8
    np.testing.assert_array_equal(load_point_cloud(p, "raw-binary").data, data)


def test_binary_round_trip_with_labels(tmp_path, rng):
    pc = PointCloud(rng.standard_normal((5, 3)), labels=[0, 1, 1, 2, 0])
    p = tmp_path / "l.pcld"
    save_point_cloud(pc, p)
    back = load_point_cloud(p, "raw")
    np.testing.assert_array_equal(back.data, pc.data)
    np.testing.assert_array_equal(back.labels, pc.labels)


def test_binary_errors(tmp_path):
    p = tmp_path / "b.pcld"
    p.write_bytes(b"NOPE" + struct.pack("<IQQI", 1, 1, 1, 0) + struct.pack("<d", 1.0))
    with pytest.raises(DatasetError, match="magic"):
        load_point_cloud(p, "raw")
    p.write_bytes(b"PCLD" + struct.pack("<IQQI", 1, 2, 2, 0) + struct.pack("<3d", 1, 2, 3))
    with pytest.raises(DatasetError):
        load_point_cloud(p, "raw")
    p.write_bytes(b"PCLD" + struct.pack("<IQQI", 2, 1, 1, 0) + struct.pack("<d", 1.0))
    with pytest.raises(DatasetError):
        load_point_cloud(p, "raw")


def test_csv_round_trip(tmp_path, rng):
    pc = PointCloud(rng.standard_normal((4, 3)))
    p = tmp_path / "r.csv"
    save_point_cloud(pc, p, "csv")
    np.testing.assert_array_equal(load_point_cloud(p, "csv").data, pc.data)
