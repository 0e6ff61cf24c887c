import numpy as np
import pytest

from bitsird.bitcore import (
    PackedBitTensor,
    WORD_BITS,
    pack_bits,
    sign_quantize,
    tail_mask,
    unpack_bits,
    xnor_dot,
)
from bitsird.errors import DimensionError, InvalidInputError


def test_sign_quantize_case_split():
    t = sign_quantize(np.array([-0.5, 0.0, 3.2]))
    assert unpack_bits(t).tolist() == [-1, 1, 1]


def test_sign_quantize_all_zeros_maps_to_plus_one():
    t = sign_quantize(np.zeros(77))
    assert unpack_bits(t).tolist() == [1] * 77


def test_sign_quantize_rejects_non_finite():
    with pytest.raises(InvalidInputError):
        sign_quantize(np.array([1.0, np.nan]))
    with pytest.raises(InvalidInputError):
        sign_quantize(np.array([np.inf]))


def test_sign_quantize_random_elementwise_oracle():
    rng = np.random.default_rng(0)
    for _ in range(1000):
        n = int(rng.integers(1, 130))
        x = rng.normal(size=n)
        x[rng.random(n) < 0.1] = 0.0
        got = unpack_bits(sign_quantize(x))
        want = [1 if v >= 0 else -1 for v in x]
        assert got.tolist() == want


def test_sign_quantize_idempotent_through_unpack():
    rng = np.random.default_rng(1)
    for _ in range(50):
        x = rng.normal(size=int(rng.integers(1, 200)))
        t1 = sign_quantize(x)
        t2 = sign_quantize(unpack_bits(t1, dtype=np.float64))
        assert np.array_equal(t1.words, t2.words)


def test_xnor_dot_identical_inputs():
    a = pack_bits([1, 1, 1, 1])
    assert xnor_dot(a, a) == 4


def test_xnor_dot_hand_case():
    a = pack_bits([1, -1, 1])
    w = pack_bits([1, 1, -1])
    assert xnor_dot(a, w) == -1  # 1 - 1 - 1


def test_xnor_dot_random_vs_float_oracle():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        n = int(rng.integers(1, 514))
        a = rng.choice([-1, 1], size=n)
        w = rng.choice([-1, 1], size=n)
        want = int(np.dot(a.astype(np.float64), w.astype(np.float64)))
        assert xnor_dot(pack_bits(a), pack_bits(w)) == want


def test_xnor_dot_exact_at_ten_thousand_elements():
    rng = np.random.default_rng(3)
    n = 10_000
    a = rng.choice([-1, 1], size=n)
    w = rng.choice([-1, 1], size=n)
    want = int(np.dot(a.astype(np.float64), w.astype(np.float64)))
    assert xnor_dot(pack_bits(a), pack_bits(w)) == want


def test_xnor_dot_shape_mismatch():
    with pytest.raises(DimensionError):
        xnor_dot(pack_bits([1, 1]), pack_bits([1, 1, 1]))


def test_xnor_dot_masks_dirty_padding():
    # Results must not depend on whatever bit pattern sits in padding
    # positions: corrupt them by hand and check the dot is unchanged.
    a = pack_bits([1, -1, 1, 1, -1])
    w = pack_bits([-1, -1, 1, -1, 1])
    clean = xnor_dot(a, w)
    dirty_words = a.words.copy()
    dirty_words[-1] |= ~tail_mask(a.n)[-1]
    dirty = PackedBitTensor(shape=a.shape, words=dirty_words)
    assert xnor_dot(dirty, w) == clean


def test_pack_singleton_round_trip():
    t = pack_bits([1])
    assert t.words.shape == (1,)
    assert int(t.words[0]) == 1
    assert unpack_bits(t).tolist() == [1]


def test_pack_full_word_all_negative():
    t = pack_bits([-1] * WORD_BITS)
    assert t.words.shape == (1,)
    assert int(t.words[0]) == 0
    assert unpack_bits(t).tolist() == [-1] * WORD_BITS


def test_pack_rejects_values_outside_pm1():
    with pytest.raises(InvalidInputError):
        pack_bits([1, 0, -1])
    with pytest.raises(InvalidInputError):
        pack_bits([2])


def test_pack_unpack_round_trip_random_lengths():
    rng = np.random.default_rng(4)
    for _ in range(1000):
        n = int(rng.integers(1, 201))
        v = rng.choice([-1, 1], size=n)
        assert np.array_equal(unpack_bits(pack_bits(v)), v)


def test_pack_padding_bits_are_zero():
    rng = np.random.default_rng(5)
    for n in [1, 3, 63, 64, 65, 127, 200]:
        v = rng.choice([-1, 1], size=n)
        t = pack_bits(v)
        assert (t.words & ~tail_mask(n)).sum() == 0


def test_pack_preserves_multidim_shape():
    v = np.array([[1, -1], [-1, 1], [1, 1]])
    t = pack_bits(v)
    assert t.shape == (3, 2)
    assert np.array_equal(unpack_bits(t), v)
