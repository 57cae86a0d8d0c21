import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import FIXTURE_SPEC
from hessurgery import data as D
from hessurgery.lanczos import (
    BORDERLINE, CLEAR, EXCLUDED, SpikeBasis, classify_spikes, lanczos, ritz, subspace_stability, top_eigenpairs,
)
from hessurgery.operators import SpikedOperatorSpec, dense_oracle, model_oracle, spiked_operator
from hessurgery.vecspace import Rng, dense_eigh, derive_seed, tridiag_eigh, unit_gaussian

PLANTED_SPIKES = (828.6, 577.8, 310.7, 243.5, 153.2, 112.5, 58.9, 20.5)


def random_symmetric(n, seed):
    G = Rng(seed).normal(n * n).reshape(n, n)
    return (G + G.T) / 2


def test_identity_breaks_immediately():
    res = lanczos(dense_oracle(np.eye(6)), unit_gaussian(6, 0), 5)
    assert res.exhausted and res.T.diag.tolist() == pytest.approx([1.0])


def test_diag_three_ritz_values():
    q1 = np.ones(3) / np.sqrt(3)
    res = lanczos(dense_oracle(np.diag([5.0, 2.0, 1.0])), q1, 3)
    vals, _ = tridiag_eigh(res.T)
    assert np.max(np.abs(vals - [5.0, 2.0, 1.0])) <= 1e-10


def test_lanczos_rejects_bad_start():
    o = dense_oracle(np.eye(3))
    with pytest.raises(ValueError):
        lanczos(o, np.ones(3), 2)
    with pytest.raises(ValueError):
        lanczos(o, np.array([1.0, 0.0, 0.0]), 0)


def test_lanczos_basis_and_residual():
    M = random_symmetric(80, 2)
    res = lanczos(dense_oracle(M), unit_gaussian(80, 1), 30)
    Q = res.Q
    assert np.max(np.abs(Q @ Q.T - np.eye(Q.shape[0]))) <= 1e-8
    T = res.T.to_dense()
    R = M @ Q.T - Q.T @ T
    scale = max(np.max(np.abs(res.T.diag)), np.max(np.abs(res.T.offdiag)))
    # every column but the last satisfies the recurrence exactly
    assert np.max(np.linalg.norm(R[:, :-1], axis=0)) <= 1e-6 * scale


@pytest.mark.parametrize("p", [1, 2, 5, 17, 33, 64])
def test_full_order_equals_dense(p):
    M = random_symmetric(p, derive_seed(4, p))
    basis = top_eigenpairs(dense_oracle(M), p, p, seed=p)
    assert np.max(np.abs(basis.eigenvalues - dense_eigh(M)[0])) <= 1e-8


def test_ritz_examples():
    o = dense_oracle(np.diag([3.0, 1.0]))
    q1 = np.array([0.6, 0.8])
    res = lanczos(o, q1, 1)
    b = ritz(res.T, res.Q, 1)
    assert b.eigenvalues[0] == pytest.approx(0.36 * 3 + 0.64)
    assert np.allclose(b.vectors[0], q1)
    with pytest.raises(ValueError):
        ritz(res.T, res.Q, 2)


def test_ritz_full_order_50():
    M = random_symmetric(50, 7)
    res = lanczos(dense_oracle(M), unit_gaussian(50, 3), 50)
    b = ritz(res.T, res.Q, 50)
    vals, vecs = dense_eigh(M)
    assert np.max(np.abs(b.eigenvalues - vals)) <= 1e-8
    assert np.min(np.abs(np.sum(b.vectors * vecs.T, axis=1))) >= 1 - 1e-8
    assert b.orth_error <= 1e-8


def test_spiked_recovery_and_direction():
    op = spiked_operator(SpikedOperatorSpec(500, PLANTED_SPIKES, 0.03, seed=0))
    b = top_eigenpairs(op.oracle, 8, 10, seed=0)
    planted = np.array(PLANTED_SPIKES)
    assert np.max(np.abs(b.eigenvalues - planted) / planted) <= 1e-6
    assert abs(b.vectors[0] @ op.spike_vectors[:, 0]) >= 1 - 1e-6
    assert b.orth_error <= 1e-8


def test_classify_planted_values():
    vals = [828.6, 577.8, 310.7, 243.5, 153.2, 112.5, 58.9, 20.5, 1e-4, -1.1]
    labels = classify_spikes(vals, 0.0134)
    assert labels == [CLEAR] * 8 + [BORDERLINE, EXCLUDED]
    assert classify_spikes([0.5, 0.5], 0.5) == [BORDERLINE, BORDERLINE]
    assert classify_spikes([-0.2], 0.01) == [EXCLUDED]


@given(st.lists(st.floats(-1e3, 1e3, allow_nan=False), min_size=1, max_size=12),
       st.floats(1e-6, 10.0), st.floats(1e-3, 1e3))
def test_classify_scale_covariant(vals, med, c):
    vals = sorted(vals, reverse=True)
    a = classify_spikes(vals, med, 10.0)
    b = classify_spikes([c * v for v in vals], c * med, 10.0)
    # skip values sitting on the threshold within rounding
    for v, la, lb in zip(vals, a, b):
        if abs(v - 10.0 * med) > 1e-9 * max(1.0, abs(v)):
            assert la == lb


@settings(max_examples=25, deadline=None)
@given(st.integers(4, 30), st.integers(0, 10_000))
def test_ritz_interlacing(p, seed):
    M = random_symmetric(p, seed)
    q1 = unit_gaussian(p, seed + 1)
    for m in range(1, p):
        a = tridiag_eigh(lanczos(dense_oracle(M), q1, m).T)[0]
        res = lanczos(dense_oracle(M), q1, m + 1)
        if res.T.size < m + 1:
            break
        b = tridiag_eigh(res.T)[0]
        tol = 1e-9 * max(1.0, np.max(np.abs(b)))
        assert np.all(b[:-1] + tol >= a) and np.all(a + tol >= b[1:])


def test_stability_identical_and_permuted():
    V = np.linalg.qr(Rng(0).normal(40 * 4).reshape(40, 4))[0].T
    a = SpikeBasis(np.array([4.0, 3.0, 2.0, 1.0]), V)
    r = subspace_stability(a, a, [1, 2, 4])
    assert r.matched_mean == pytest.approx(1.0) and r.diagonal_mean == pytest.approx(1.0)
    assert all(mx <= 1e-6 for mx, _ in r.angles.values())
    b = SpikeBasis(a.eigenvalues, V[[1, 0, 3, 2]])
    r = subspace_stability(a, b, [4])
    assert r.matched_mean == pytest.approx(1.0) and r.diagonal_mean < 1.0
    with pytest.raises(ValueError):
        subspace_stability(a, b, [5])


def test_stability_two_batches_on_fixture(fixture0):
    data, theta = fixture0
    bases = [top_eigenpairs(model_oracle(FIXTURE_SPEC, theta, D.uniform_batch(data, 256, s)), 3, 10, seed=0)
             for s in (1, 2)]
    r = subspace_stability(bases[0], bases[1], [1, 2, 3])
    assert 0 <= r.diagonal_mean <= r.matched_mean <= 1
    assert 0 <= r.matched_min <= 1
    for mx, mean in r.angles.values():
        assert 0 <= mean <= mx <= 90
