import numpy as np
import pytest

from gradcheck import check_layer_gradients, spread_from_zero

from bitsird.errors import DimensionError
from bitsird.layers import (
    BinaryBlock,
    BinaryConvLayer,
    DBConvLayer,
    DbConvUnit,
    DownSample,
    FloatConv,
    Fuse,
    Maxout,
    Redistribution,
    RprRelu,
    UpSample,
    configure_passthrough,
    maxout,
    redistribute,
    rprrelu,
)


def _smooth(layer, k=0.8):
    """Put every sign site of `layer` into smooth test mode with a usable k."""
    layer.set_smooth_mode(True)
    for _, site in layer.ste_sites():
        site.k.value[...] = k
    return layer


def _freeze_db_scalars(layer):
    for attr in ("db",):
        unit = getattr(layer, attr, None)
        if isinstance(unit, DbConvUnit):
            unit.frozen_scalars = unit.scalars()
    if isinstance(layer, DbConvUnit):
        layer.frozen_scalars = layer.scalars()
    if isinstance(layer, BinaryBlock):
        layer.dbl.db.frozen_scalars = layer.dbl.db.scalars()
    if isinstance(layer, DBConvLayer):
        layer.db.frozen_scalars = layer.db.scalars()


# ---------------------------------------------------------------- rprrelu


def test_rprrelu_identity_configuration():
    y = np.linspace(-3, 3, 24).reshape(2, 3, 4)
    z = np.zeros(2)
    assert np.allclose(rprrelu(y, z, z, np.ones(2)), y)


def test_rprrelu_plain_relu_case():
    y = np.array([[[-2.0, 3.0]]])
    out = rprrelu(y, np.zeros(1), np.zeros(1), np.zeros(1))
    assert out.tolist() == [[[0.0, 3.0]]]


def test_rprrelu_hand_substitution():
    out = rprrelu(np.zeros((1, 1, 1)), np.ones(1), np.full(1, 2.0), np.full(1, 0.5))
    assert out[0, 0, 0] == pytest.approx(0.5 * (0 - 1) + 2)


def test_rprrelu_continuous_at_threshold():
    rng = np.random.default_rng(40)
    for _ in range(50):
        a, b, c = rng.normal(size=3)
        at = rprrelu(np.full((1, 1, 1), a), np.array([a]), np.array([b]), np.array([c]))
        assert at[0, 0, 0] == pytest.approx(b, abs=1e-12)


def test_rprrelu_layer_gradients():
    rng = np.random.default_rng(41)
    layer = RprRelu(3, dtype=np.float64)
    layer.a.value[...] = rng.normal(size=3) * 0.1
    layer.b.value[...] = rng.normal(size=3) * 0.1
    layer.c.value[...] = rng.uniform(0.1, 0.9, size=3)
    x = spread_from_zero(rng, (3, 5, 5)) + layer.a.value[:, None, None]
    check_layer_gradients(layer, x, rng, rtol=1e-4)


# ----------------------------------------------------------------- maxout


def test_maxout_identity_and_abs():
    y = np.linspace(-2, 2, 12).reshape(1, 3, 4)
    assert np.allclose(maxout(y, np.ones(1), np.ones(1)), y)
    assert np.allclose(maxout(y, np.ones(1), -np.ones(1)), np.abs(y))


def test_maxout_elementwise_oracle():
    out = maxout(np.array([[[-4.0, 4.0]]]), np.ones(1), np.full(1, 0.25))
    assert out.tolist() == [[[-1.0, 4.0]]]


def test_maxout_layer_gradients():
    rng = np.random.default_rng(42)
    layer = Maxout(2, dtype=np.float64)
    layer.lam1.value[...] = [1.0, 0.7]
    layer.lam2.value[...] = [0.25, -0.4]
    x = spread_from_zero(rng, (2, 4, 4))
    check_layer_gradients(layer, x, rng, rtol=1e-4)


# --------------------------------------------------------- redistribution


def test_redistribute_identity_and_affine():
    x = np.array([[[0.5]]])
    assert np.allclose(redistribute(x, np.ones(1), np.zeros(1)), x)
    out = redistribute(x, np.full(1, 2.0), np.full(1, -1.0))
    assert out[0, 0, 0] == pytest.approx(0.0)


def test_redistribution_layer_gradients():
    rng = np.random.default_rng(43)
    layer = Redistribution(3, dtype=np.float64)
    layer.alpha.value[...] = rng.normal(size=3)
    layer.beta.value[...] = rng.normal(size=3)
    x = rng.normal(size=(3, 4, 4))
    check_layer_gradients(layer, x, rng, rtol=1e-4)


# -------------------------------------------------------- binary conv layer


def test_binary_conv_layer_pure_residual():
    rng = np.random.default_rng(44)
    layer = BinaryConvLayer(2, dtype=np.float64, rng=rng)
    layer.rpr.a.value[...] = 1e9
    layer.rpr.b.value[...] = 0.0
    layer.rpr.c.value[...] = 0.0
    x = rng.normal(size=(2, 6, 6))
    assert np.array_equal(layer.forward(x), x)


def test_binary_conv_layer_hand_composed():
    layer = BinaryConvLayer(1, dtype=np.float64)
    layer.w.value[...] = 1.0  # all-positive latents -> +1 kernel
    layer.rpr.c.value[...] = 1.0  # identity rectifier
    x = np.full((1, 1, 1), 2.0)
    # only the window center is valid on a 1x1 input: sign(2) * (+1) = 1
    out = layer.forward(x)
    assert out[0, 0, 0] == pytest.approx(3.0)


def test_binary_conv_layer_smooth_gradcheck():
    rng = np.random.default_rng(45)
    layer = _smooth(BinaryConvLayer(2, dtype=np.float64, rng=rng))
    x = spread_from_zero(rng, (2, 4, 4))
    check_layer_gradients(layer, x, rng, rtol=1e-3)


def test_binary_conv_layer_batched_matches_single():
    rng = np.random.default_rng(46)
    layer = BinaryConvLayer(3, dtype=np.float64, rng=rng)
    xs = rng.normal(size=(4, 3, 8, 8))
    batched = layer.forward(xs)
    single = np.stack([layer.forward(x) for x in xs])
    assert np.allclose(batched, single)


# ------------------------------------------------------------ db conv layer


def test_db_conv_layer_zero_latent_is_pure_residual():
    rng = np.random.default_rng(47)
    layer = DBConvLayer(3, dtype=np.float64, rng=rng)
    layer.db.w.value[...] = 0.0
    x = rng.normal(size=(3, 5, 5))
    assert np.array_equal(layer.forward(x), x)


def test_db_conv_layer_single_element_composition():
    layer = DBConvLayer(1, dtype=np.float64)
    layer.db.w.value[...] = -3.0
    x = np.full((1, 1, 1), 2.0)
    # alpha=0, beta=-3 -> db gives -6; maxout(1, 0.25) -> max(-6, -1.5); +x
    assert layer.forward(x)[0, 0, 0] == pytest.approx(-1.5 + 2.0)


def test_db_conv_layer_smooth_gradcheck():
    rng = np.random.default_rng(48)
    layer = _smooth(DBConvLayer(3, dtype=np.float64, rng=rng))
    layer.db.w.value[...] = rng.normal(size=3)
    _freeze_db_scalars(layer)
    x = spread_from_zero(rng, (3, 4, 4))
    check_layer_gradients(layer, x, rng, rtol=1e-3)


def test_db_conv_unit_normal_mode_closed_form_weight_grad():
    # single pixel: out = alpha*|x|*sign(x)*w_pm1 + beta*x, so the latent
    # gradient must be upstream * alpha * |x| * sign(x) * surrogate'(w)
    rng = np.random.default_rng(49)
    unit = DbConvUnit(1, dtype=np.float64)
    unit.w.value[...] = 0.4
    unit.site_w.k.value[...] = 2.0
    unit.site_a.k.value[...] = 3.0
    x = np.full((1, 1, 1), -1.7)
    unit.zero_grad()
    unit.forward(x, train=True)
    gx = unit.backward(np.ones((1, 1, 1)))
    alpha, beta = unit.scalars()
    assert alpha == 0.0 and beta == pytest.approx(0.4)
    kw, ka = 2.0, 3.0
    want_w = 1.0 * alpha * abs(x[0, 0, 0]) * np.sign(x[0, 0, 0]) * (
        kw / (1 + abs(kw * 0.4)) ** 2
    )
    assert unit.w.grad[0] == pytest.approx(want_w, rel=1e-7)
    # input grad: sign-site term alpha*|x|*w*f'(x) is 0 here (alpha=0),
    # leaving beta plus the |x|-path term (also 0)
    assert gx[0, 0, 0] == pytest.approx(beta, rel=1e-7)


# -------------------------------------------------------------- binary block


def test_binary_block_matches_manual_composition():
    rng = np.random.default_rng(50)
    block = BinaryBlock(4, dtype=np.float64, rng=rng)
    x = rng.normal(size=(4, 6, 6))
    composed = block.dbl.forward(block.redist.forward(block.bconv.forward(x)))
    assert np.array_equal(block.forward(x), composed)


@pytest.mark.parametrize("c", [4, 8])
@pytest.mark.parametrize("hw", [8, 16])
def test_binary_block_shape_contract(c, hw):
    rng = np.random.default_rng(51)
    block = BinaryBlock(c, rng=rng)
    x = rng.normal(size=(c, hw, hw)).astype(np.float32)
    assert block.forward(x).shape == (c, hw, hw)


def test_binary_block_passthrough_configuration():
    rng = np.random.default_rng(52)
    block = BinaryBlock(3, dtype=np.float64, rng=rng)
    configure_passthrough(block)
    x = rng.normal(size=(3, 6, 6))
    assert np.array_equal(block.forward(x), x)


def test_binary_block_smooth_gradcheck():
    rng = np.random.default_rng(53)
    block = _smooth(BinaryBlock(2, dtype=np.float64, rng=rng))
    _freeze_db_scalars(block)
    x = spread_from_zero(rng, (2, 4, 4))
    check_layer_gradients(block, x, rng, rtol=1e-3)


# -------------------------------------------------- down / up / fuse modules


def _identity_db(unit):
    unit.w.value[...] = 1.0  # constant latents: alpha=0, beta=1


def test_downsample_constant_identity_db():
    rng = np.random.default_rng(54)
    ds = DownSample(3, dtype=np.float64, rng=rng)
    _identity_db(ds.db)
    x = np.full((3, 8, 8), 0.37)
    out = ds.forward(x)
    assert out.shape == (6, 4, 4)
    assert np.allclose(out, 0.37)


def test_downsample_rejects_odd_extents():
    ds = DownSample(2)
    with pytest.raises(DimensionError):
        ds.forward(np.zeros((2, 7, 8), dtype=np.float32))


def test_upsample_inverts_channel_duplication_on_constants():
    rng = np.random.default_rng(55)
    us = UpSample(4, dtype=np.float64, rng=rng)
    _identity_db(us.db)
    x = np.full((2, 4, 4), 1.25)
    dup = np.repeat(x, 2, axis=0)  # the channel-duplication half of DS
    out = us.forward(dup)
    assert out.shape == (2, 8, 8)
    assert np.allclose(out, 1.25)


def test_upsample_rejects_odd_channels():
    with pytest.raises(DimensionError):
        UpSample(3)


def test_fuse_identity_db_is_elementwise_add():
    rng = np.random.default_rng(56)
    fu = Fuse(3, dtype=np.float64, rng=rng)
    _identity_db(fu.db)
    a = rng.normal(size=(3, 5, 5))
    b = rng.normal(size=(3, 5, 5))
    assert np.allclose(fu.forward(a, b), a + b)


def test_downsample_smooth_gradcheck():
    rng = np.random.default_rng(57)
    ds = _smooth(DownSample(2, dtype=np.float64, rng=rng))
    _freeze_db_scalars(ds)
    x = spread_from_zero(rng, (2, 4, 4))
    # spread the pooled cells so the argmax is stable under perturbation
    x += np.arange(32, dtype=np.float64).reshape(2, 4, 4) * 0.01
    check_layer_gradients(ds, x, rng, rtol=1e-3)


def test_upsample_smooth_gradcheck():
    rng = np.random.default_rng(58)
    us = _smooth(UpSample(4, dtype=np.float64, rng=rng))
    _freeze_db_scalars(us)
    x = spread_from_zero(rng, (4, 3, 3))
    check_layer_gradients(us, x, rng, rtol=1e-3)


def test_fuse_smooth_gradcheck():
    rng = np.random.default_rng(59)
    fu = _smooth(Fuse(2, dtype=np.float64, rng=rng))
    _freeze_db_scalars(fu)
    a = spread_from_zero(rng, (2, 3, 3))
    b = spread_from_zero(rng, (2, 3, 3))
    y = fu.forward(a, b)
    proj = rng.normal(size=y.shape)
    fu.zero_grad()
    fu.forward(a, b, train=True)
    ga, gb = fu.backward(proj.copy())

    from gradcheck import assert_grads_close, numeric_grad

    fd_a = numeric_grad(lambda v: float(np.sum(fu.forward(v, b) * proj)), a)
    fd_b = numeric_grad(lambda v: float(np.sum(fu.forward(a, v) * proj)), b)
    assert_grads_close(ga, fd_a, 1e-3)
    assert_grads_close(gb, fd_b, 1e-3)


# ---------------------------------------------------------------- float conv


def test_float_conv_gradcheck():
    rng = np.random.default_rng(60)
    layer = FloatConv(2, 3, 3, dtype=np.float64, rng=rng)
    x = rng.normal(size=(2, 5, 5))
    check_layer_gradients(layer, x, rng, rtol=1e-4)


def test_float_conv_zero_init():
    layer = FloatConv(4, 1, 1, init="zero")
    assert np.all(layer.w.value == 0)
