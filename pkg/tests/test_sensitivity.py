import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import FIXTURE_SPEC, fixture_run
from hessurgery import data as D, models
from hessurgery.lanczos import top_eigenpairs
from hessurgery.operators import model_oracle
from hessurgery.sensitivity import (
    SensitivityError, effective_rank, noise_floor, rank_from_singular_values, sensitivity_from_fn,
    sensitivity_matrix, stratified_split,
)
from hessurgery.vecspace import Rng


def fixture_basis(data, theta, seed=0, k=3):
    return top_eigenpairs(model_oracle(FIXTURE_SPEC, theta, D.uniform_batch(data, 256, seed)), k, 10, seed=seed)


def test_dead_unit_gives_zero_row(fixture0):
    data, theta = fixture0
    (w1, b1, (a, h)), (w2, _, (h2, c)) = FIXTURE_SPEC.layer_slices()
    W2 = theta[w2].reshape(h2, c)
    W2[0] = 0.0  # hidden unit 0 no longer reaches the output
    theta[w2] = W2.ravel()
    q = np.zeros(theta.size)
    W1 = np.zeros((a, h))
    W1[:, 0] = 1.0
    q[w1] = W1.ravel()
    q /= np.linalg.norm(q)
    sm = sensitivity_matrix(FIXTURE_SPEC, theta, q[None, :], 0.5, data.split("sensitivity"))
    assert np.array_equal(sm.S, np.zeros((1, 4)))


def test_shape_floor_and_reproducible(fixture0):
    data, theta = fixture0
    basis = fixture_basis(data, theta)
    batch = data.split("sensitivity")
    before = theta.tobytes()
    a = sensitivity_matrix(FIXTURE_SPEC, theta, basis, 0.02, batch)
    b = sensitivity_matrix(FIXTURE_SPEC, theta, basis, 0.02, batch)
    assert theta.tobytes() == before
    assert a.shape == (3, 4) and np.all(np.isfinite(a.S))
    assert a.S.tobytes() == b.S.tobytes()
    counts = np.bincount(batch.y, minlength=4)
    assert a.noise_floor == 1 / (2 * 0.02 * counts.min())
    assert np.all((a.thresholded() == 0) | (np.abs(a.S) >= a.noise_floor))


def test_two_amplitudes_agree_within_quantization(fixture0):
    data, theta = fixture0
    basis = fixture_basis(data, theta)
    batch = data.split("sensitivity")
    counts = np.bincount(batch.y, minlength=4)
    eps = 0.01
    s1 = sensitivity_matrix(FIXTURE_SPEC, theta, basis, eps, batch).S
    s2 = sensitivity_matrix(FIXTURE_SPEC, theta, basis, 2 * eps, batch).S
    quantum = 1 / (2 * eps * counts)
    # a handful of boundary samples per class may sit between the two radii
    assert np.all(np.abs(s1 - s2) <= 5 * quantum[None, :])


@pytest.mark.xfail(strict=True, reason="top two fixture spikes are near-degenerate (one per entangled pair); "
                   "the weakest class leads spike 1 in 2 of 5 seeds")
def test_weakest_class_is_most_sensitive():
    votes = 0
    for seed in range(5):
        data, theta = fixture_run(seed)
        theta = np.array(theta)
        basis = fixture_basis(data, theta, seed)
        batch = data.split("sensitivity")
        S = sensitivity_matrix(FIXTURE_SPEC, theta, basis, 0.02, batch).S
        weakest = int(np.argmin(models.per_class_accuracy(FIXTURE_SPEC, theta, batch).per_class))
        votes += int(np.argmax(np.abs(S[0])) == weakest)
    assert votes >= 3


def test_absent_class_aborts(fixture0):
    data, theta = fixture0
    batch = data.split("sensitivity")
    partial = batch.take(np.flatnonzero(batch.y != 3))
    with pytest.raises(SensitivityError):
        sensitivity_matrix(FIXTURE_SPEC, theta, np.eye(theta.size)[:1], 0.02, partial)


def _toy_acc():
    W = Rng(1).normal(12).reshape(3, 4)
    X = Rng(2).normal(60).reshape(20, 3)
    y = np.arange(20) % 4
    def acc(theta):
        pred = np.argmax(X @ (W + theta.reshape(3, 4)), axis=1)
        return np.array([np.mean(pred[y == c] == c) for c in range(4)])
    return acc


@given(st.integers(0, 50))
def test_sign_flip_negates_row(seed):
    acc = _toy_acc()
    theta = Rng(seed).normal(12) * 0.1
    Q = np.linalg.qr(Rng(seed + 1).normal(36).reshape(12, 3))[0].T
    S = sensitivity_from_fn(acc, theta, Q, 0.3)
    Q2 = Q.copy()
    Q2[1] = -Q2[1]
    S2 = sensitivity_from_fn(acc, theta, Q2, 0.3)
    assert np.array_equal(S2[1], -S[1])
    assert np.array_equal(S2[[0, 2]], S[[0, 2]])


@given(st.integers(0, 50), st.integers(-3, 3))
def test_amplitude_scale_identity(seed, k):
    # (eps/c, c q) is the same perturbation; per unit displacement the rows agree exactly
    c = 2.0 ** k
    acc = _toy_acc()
    theta = Rng(seed).normal(12) * 0.1
    Q = np.linalg.qr(Rng(seed + 1).normal(24).reshape(12, 2))[0].T
    S = sensitivity_from_fn(acc, theta, Q, 0.3)
    Sc = sensitivity_from_fn(acc, theta, c * Q, 0.3 / c)
    assert np.array_equal(Sc / c, S)


def test_noise_floor():
    assert noise_floor(0.02, [100, 50, 200]) == 1 / (2 * 0.02 * 50)


def test_effective_rank_examples():
    for k in range(1, 8):
        r = rank_from_singular_values([2.5] * k)
        assert abs(r.r_eff - k) <= 1e-10
    assert effective_rank(np.outer([1.0, 2.0], [3.0, -1.0, 0.5])).r_eff == pytest.approx(1.0, abs=1e-12)
    assert rank_from_singular_values([6.41, 5.22, 3.99]).flatness == pytest.approx(1.228, abs=5e-4)
    r = rank_from_singular_values([17.4, 9.4, 3.8])
    assert r.flatness == pytest.approx(1.851, abs=5e-4)
    assert r.energy[:2].sum() == pytest.approx(0.964, abs=5e-4)
    with pytest.raises(ValueError):
        effective_rank(np.zeros((3, 4)))
    assert rank_from_singular_values([1.0, 0.0]).flatness == math.inf


@given(st.integers(0, 200), st.floats(-1e3, 1e3).filter(lambda c: abs(c) > 1e-3))
def test_effective_rank_scale_invariant_and_bounded(seed, c):
    rng = Rng(seed)
    K, C = 1 + seed % 4, 2 + seed % 5
    S = rng.normal(K * C).reshape(K, C)
    a, b = effective_rank(S), effective_rank(c * S)
    assert abs(a.r_eff - b.r_eff) <= 1e-9 * a.r_eff
    assert 1 - 1e-12 <= a.r_eff <= min(K, C) + 1e-9
    assert abs(a.energy.sum() - 1) <= 1e-12 and a.flatness >= 1


def test_stratified_split_examples():
    bal = D.make_blobs(D.preset("balanced-4", seed=0, n_train=400))
    full = stratified_split(bal, 10_000)
    assert len(full) == 400 and np.array_equal(np.sort(full.y), np.sort(bal.split("train").y))

    imb = D.make_blobs(D.preset("imbalanced-4", seed=0))
    counts = np.bincount(imb.split("train").y)
    s = stratified_split(imb, int(counts.min()))
    assert np.all(np.bincount(s.y) == counts.min())

    sk = D.make_blobs(D.preset("skewed-8", seed=0))
    avail = np.bincount(sk.split("train").y, minlength=8)
    s = stratified_split(sk, 250)
    assert np.bincount(s.y, minlength=8).tolist() == np.minimum(250, avail).tolist()


def test_stratified_split_uses_train_only():
    data = D.make_blobs(D.preset("imbalanced-4", seed=1, n_train=500))
    with data.forbid("sensitivity", "heldout"):
        stratified_split(data, 20)
    with pytest.raises(ValueError):
        stratified_split(data, 0)
