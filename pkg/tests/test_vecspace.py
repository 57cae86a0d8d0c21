import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hessurgery.vecspace import (
    DimensionError, Rng, TridiagonalMatrix, dense_eigh, derive_seed, dot, dumps_vector,
    gram_schmidt_residual, load_vector, loads_vector, save_vector, tridiag_eigh,
)

finite = st.floats(-1e3, 1e3, allow_nan=False)


def test_dot_examples():
    assert dot([1, 2, 3], [4, 5, 6]) == 32.0
    assert dot([1, 0], [0, 1]) == 0.0
    assert dot([3, 4], [3, 4]) == 25.0


def test_dot_is_sequential():
    # 1e16 + 1 - 1e16 loses the 1 left to right; pairwise would keep it
    assert dot([1e16, 1.0, -1e16], [1.0, 1.0, 1.0]) == 0.0


def test_dot_dimension_mismatch():
    with pytest.raises(DimensionError):
        dot([1, 2], [1, 2, 3])


@given(st.integers(1, 6).flatmap(lambda n: st.tuples(*[st.lists(finite, min_size=n, max_size=n)] * 3)), finite)
def test_dot_symmetric_bilinear(vecs, c):
    a, b, z = map(np.array, vecs)
    assert dot(a, b) == dot(b, a)
    lhs = dot(c * a + z, b)
    rhs = c * dot(a, b) + dot(z, b)
    assert abs(lhs - rhs) <= 1e-9 * (1 + abs(c) * np.abs(a * b).sum() + np.abs(z * b).sum())


def test_gram_schmidt_examples():
    e1, e2 = np.eye(3)[:2]
    assert np.array_equal(gram_schmidt_residual(e1, [e1]), np.zeros(3))
    assert np.allclose(gram_schmidt_residual(e1 + e2, [e1]), e2)
    rng = Rng(1)
    Q, _ = np.linalg.qr(rng.normal(100).reshape(20, 5))
    r = gram_schmidt_residual(rng.normal(20), Q.T)
    assert np.max(np.abs(Q.T @ r)) <= 1e-10


def test_gram_schmidt_random_trials():
    rng = Rng(7)
    worst = 0.0
    for trial in range(1000):
        p = 4 + int(rng.uniform(1)[0] * 508)
        k = 1 + int(rng.uniform(1)[0] * min(p - 1, 12))
        Q, _ = np.linalg.qr(rng.normal(p * k).reshape(p, k))
        r = gram_schmidt_residual(rng.normal(p), Q.T)
        worst = max(worst, float(np.max(np.abs(Q.T @ r))))
    assert worst <= 1e-10


def test_tridiagonal_shape_check():
    with pytest.raises(ValueError):
        TridiagonalMatrix(np.ones(3), np.ones(3))


def test_tridiag_examples():
    vals, vecs = tridiag_eigh(TridiagonalMatrix([5.0], []))
    assert vals.tolist() == [5.0] and vecs.tolist() == [[1.0]]
    vals, _ = tridiag_eigh(TridiagonalMatrix([2.0, 2.0], [1.0]))
    assert np.allclose(vals, [3.0, 1.0], atol=1e-14)


@pytest.mark.parametrize("n", list(range(1, 65)))
def test_tridiag_matches_dense(n):
    rng = Rng(derive_seed(3, n))
    T = TridiagonalMatrix(rng.normal(n), rng.normal(n - 1))
    vals, vecs = tridiag_eigh(T)
    ref, _ = dense_eigh(T.to_dense())
    scale = max(1.0, float(np.max(np.abs(ref))))
    assert np.all(np.diff(vals) <= 0)
    assert np.max(np.abs(vals - ref)) <= 1e-9 * scale
    assert np.allclose(np.linalg.norm(vecs, axis=0), 1.0, atol=1e-12)
    resid = np.linalg.norm(T.to_dense() @ vecs - vecs * vals, axis=0)
    assert np.max(resid) <= 1e-10 * scale


def test_tridiag_first_row_only():
    rng = Rng(5)
    T = TridiagonalMatrix(rng.normal(30), rng.normal(29))
    vals, full = tridiag_eigh(T)
    vals1, first = tridiag_eigh(T, rows=[0])
    assert np.allclose(vals, vals1, atol=1e-12)
    assert np.allclose(np.abs(full[0]), np.abs(first[0]), atol=1e-10)


def test_dense_eigh_examples():
    vals, _ = dense_eigh(np.eye(3))
    assert np.allclose(vals, 1.0)
    vals, vecs = dense_eigh(np.diag([1.0, 7.0, 3.0]))
    assert vals.tolist() == [7.0, 3.0, 1.0]
    assert np.allclose(np.abs(vecs), np.eye(3)[:, [1, 2, 0]])
    G = Rng(2).normal(2500).reshape(50, 50)
    M = G + G.T
    vals, vecs = dense_eigh(M)
    assert np.linalg.norm(M - (vecs * vals) @ vecs.T) <= 1e-8 * np.linalg.norm(M)
    with pytest.raises(ValueError):
        dense_eigh(np.array([[1.0, 2.0], [0.0, 1.0]]))


def test_rng_reproducible_million():
    a, b = Rng(12345), Rng(12345)
    assert np.array_equal(a.raw(1_000_000), b.raw(1_000_000))
    assert not np.array_equal(Rng(1).raw(10), Rng(2).raw(10))


def test_rng_gaussian_moments():
    x = Rng(99).normal(1_000_000)
    n = x.size
    assert abs(x.mean()) <= 4 / math.sqrt(n)
    # the variance of the sample variance is 2/n for a standard normal
    assert abs(x.var() - 1.0) <= 4 * math.sqrt(2 / n)


def test_rng_frozen_stream():
    # pinned values: the generator must never change silently
    assert Rng(0).raw(2).tolist() == [213000021201967259, 4455796210202625458]
    assert Rng(0).normal(2).tolist() == [0.008088695404117373, 0.15219212994898557]
    u = Rng(0).uniform(3)
    assert np.all((u >= 0) & (u < 1))


def test_derive_seed_stable():
    assert derive_seed(0, "a") == derive_seed(0, "a")
    assert derive_seed(0, "a") != derive_seed(0, "b")
    assert derive_seed(1, "a") != derive_seed(0, "a")


@settings(max_examples=50)
@given(st.lists(st.floats(allow_nan=True, allow_infinity=True), min_size=0, max_size=20))
def test_vector_round_trip_bit_exact(xs):
    v = np.array(xs, dtype=np.float64)
    back = loads_vector(dumps_vector(v, {"seed": 3})).data
    assert back.tobytes() == v.tobytes()


def test_vector_file_meta(tmp_path):
    v = np.array([0.1, -0.0, 1e-300])
    save_vector(tmp_path / "v.vec", v, {"seed": 4, "spec": {"a": [1, 2]}})
    f = load_vector(tmp_path / "v.vec")
    assert f.data.tobytes() == v.tobytes()
    assert f.meta == {"seed": 4, "spec": {"a": [1, 2]}}


@pytest.mark.parametrize("text", ["", "PARAMVECTOR v9 1\n0000000000000000\n", "PARAMVECTOR v1 2\n0000000000000000\n"])
def test_vector_file_rejects_malformed(text):
    with pytest.raises(ValueError):
        loads_vector(text)
