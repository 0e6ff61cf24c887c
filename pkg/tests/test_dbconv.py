import numpy as np
import pytest

from bitsird.bitcore import unpack_bits
from bitsird.dbconv import (
    DBConvParams,
    compute_scalars,
    db_conv,
    db_conv_direct_oracle,
    param_bits,
)
from bitsird.errors import DimensionError, InvalidInputError


def test_compute_scalars_constant_vector():
    alpha, beta = compute_scalars([1.0, 1.0, 1.0, 1.0])
    assert beta == 1.0
    assert alpha == 0.0


def test_compute_scalars_symmetric_pair():
    alpha, beta = compute_scalars([1.0, -1.0])
    assert beta == 0.0
    assert alpha == pytest.approx(np.sqrt(2.0), rel=1e-12)


def test_compute_scalars_hand_case():
    w = np.array([0.2, -0.4, 0.6, 0.0])
    alpha, beta = compute_scalars(w)
    assert beta == pytest.approx(0.1, rel=1e-12)
    want = np.sqrt(sum((v - 0.1) ** 2 for v in w))
    assert alpha == pytest.approx(want, rel=1e-12)


def test_compute_scalars_rejects_empty():
    with pytest.raises(DimensionError):
        compute_scalars(np.zeros(0))


def test_derived_scalars_track_latent_within_tolerance():
    rng = np.random.default_rng(30)
    for _ in range(100):
        c = int(rng.integers(1, 16))
        w = rng.normal(size=c) * 3
        p = DBConvParams(w)
        _, alpha, beta = p.derive()
        assert beta == pytest.approx(np.mean(w), rel=1e-7, abs=1e-12)
        assert alpha == pytest.approx(
            np.linalg.norm(w - np.mean(w)), rel=1e-7, abs=1e-12
        )


def test_constant_latent_gives_pure_scaling():
    rng = np.random.default_rng(31)
    a = rng.normal(size=(3, 4, 5))
    p = DBConvParams(np.full(3, 0.7))
    assert np.allclose(db_conv(a, p), 0.7 * a, rtol=1e-12)


def test_single_element_case():
    a = np.full((1, 1, 1), 2.0)
    out = db_conv(a, DBConvParams(np.array([-3.0])))
    assert out[0, 0, 0] == pytest.approx(-6.0)


def test_decomposition_identity_random_suite():
    rng = np.random.default_rng(32)
    for _ in range(500):
        c = int(rng.integers(1, 9))
        h = int(rng.integers(1, 7))
        w = int(rng.integers(1, 7))
        a = rng.normal(size=(c, h, w)) * 2
        a[rng.random((c, h, w)) < 0.05] = 0.0
        latent = rng.normal(size=c)
        p = DBConvParams(latent)
        w_b, alpha, beta = p.derive()
        dense_w = alpha * unpack_bits(w_b, dtype=np.float64) + beta
        got = db_conv(a, p)
        want = db_conv_direct_oracle(a, dense_w)
        assert np.allclose(got, want, rtol=1e-6, atol=1e-9)


def test_zero_activations_give_zero_output():
    rng = np.random.default_rng(33)
    a = np.zeros((4, 3, 3))
    out = db_conv(a, DBConvParams(rng.normal(size=4)))
    assert np.all(out == 0.0)


def test_scaling_covariance():
    rng = np.random.default_rng(34)
    a = rng.normal(size=(5, 4, 4))
    latent = rng.normal(size=5)
    lam = 3.7
    base = db_conv(a, DBConvParams(latent))
    scaled = db_conv(a, DBConvParams(lam * latent))
    assert np.allclose(scaled, lam * base, rtol=1e-9)
    a1, b1 = compute_scalars(latent)
    a2, b2 = compute_scalars(lam * latent)
    assert a2 == pytest.approx(lam * a1)
    assert b2 == pytest.approx(lam * b1)


def test_oracle_identity_and_broadcast():
    a = np.array([[[1.0, -1.0]]])
    assert np.array_equal(db_conv_direct_oracle(a, np.ones(1)), a)
    out = db_conv_direct_oracle(a, np.array([2.0]))
    assert out.tolist() == [[[2.0, -2.0]]]


def test_channel_mismatch_raises():
    with pytest.raises(DimensionError):
        db_conv(np.zeros((3, 2, 2)), DBConvParams(np.ones(4)))
    with pytest.raises(DimensionError):
        db_conv_direct_oracle(np.zeros((3, 2, 2)), np.ones(4))


def test_param_bits_paper_ratio():
    adabin = param_bits("adabin_conv", n=64, c=64, k=3)
    db = param_bits("db_conv", c=64)
    assert adabin == 40960
    assert db == 128
    assert adabin // db == 320


def test_param_bits_validation():
    with pytest.raises(InvalidInputError):
        param_bits("adabin_conv", n=0, c=4, k=3)
    with pytest.raises(InvalidInputError):
        param_bits("db_conv", c=0)
    with pytest.raises(InvalidInputError):
        param_bits("mystery", c=4)
