"""Central-finite-difference utilities shared by the gradient tests."""

import numpy as np


def numeric_grad(f, x, h=1e-6):
    """Central finite differences of scalar f at array x (float64)."""
    shape = np.shape(x)
    x = np.ascontiguousarray(x, dtype=np.float64).reshape(shape)
    g = np.zeros_like(x)
    flat, gf = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gf[i] = (fp - fm) / (2.0 * h)
    return g


def assert_grads_close(analytic, numeric, rtol, floor=1e-8):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape
    denom = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = np.abs(analytic - numeric) > rtol * denom + floor
    assert not bad.any(), (
        f"{bad.sum()} / {bad.size} gradient entries off; "
        f"worst abs diff {np.abs(analytic - numeric).max():.3e}"
    )


def check_layer_gradients(layer, x, rng, rtol=1e-3, params=True, h=1e-6):
    """Finite-difference check of a layer's backward against its forward.

    Uses a fixed random projection so the scalar objective is
    sum(forward(x) * proj); checks the input gradient and (optionally)
    every registered parameter's gradient.
    """
    y = layer.forward(x)
    proj = rng.normal(size=y.shape)

    def objective(xv):
        return float(np.sum(layer.forward(xv) * proj))

    layer.zero_grad()
    out = layer.forward(x, train=True)
    gx = layer.backward(proj.copy())
    assert_grads_close(gx, numeric_grad(objective, x, h), rtol)

    if not params:
        return
    for name, p in layer.named_params():
        def p_objective(v, p=p):
            saved = p.value.copy()
            p.value[...] = v
            try:
                return float(np.sum(layer.forward(x) * proj))
            finally:
                p.value[...] = saved

        num = numeric_grad(p_objective, p.value, h)
        assert_grads_close(p.grad, num, rtol)


def spread_from_zero(rng, shape, low=0.25, high=1.5):
    """Random values with |x| in [low, high]: keeps finite differences away
    from the kinks of abs/maxout/rprrelu at zero."""
    mag = rng.uniform(low, high, size=shape)
    return mag * rng.choice([-1.0, 1.0], size=shape)
