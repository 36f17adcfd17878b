"""Central finite-difference gradient checking.

Used both by the test suite and the ``gradcheck`` CLI command.  The checks
compare analytic gradients from the tape against a central-difference
estimate that never touches the backward machinery.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad


def finite_diff_grad(fn, x, h=1e-6):
    """Central finite differences of scalar fn(ndarray) w.r.t. every entry."""
    x = np.asarray(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(x)
        flat[i] = orig - h
        fm = fn(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def max_rel_error(analytic, numeric, floor=None):
    """Max relative error, with an absolute floor so entries that are tiny
    relative to the gradient's overall scale do not blow up the ratio
    (central differences carry ~eps*|f|/h of rounding noise)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if floor is None:
        scale = max(np.max(np.abs(analytic), initial=0.0),
                    np.max(np.abs(numeric), initial=0.0), 1.0)
        floor = 1e-4 * scale
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_scalar_fn(build, x0, h=1e-6, sign_flip=False):
    """Compare tape gradient of ``build`` against finite differences.

    ``build`` takes a Tensor leaf and returns a scalar Tensor.  Returns the
    max relative error.  ``sign_flip`` negates the analytic gradient — a
    self-test knob proving the checker can actually fail.
    """
    leaf = ad.Tensor(np.array(x0, dtype=np.float64), requires_grad=True)
    loss = build(leaf)
    (g,) = ad.grad_of(loss, [leaf])
    analytic = g.data
    if sign_flip:
        analytic = -analytic

    def f(arr):
        with ad.no_grad():
            return build(ad.Tensor(arr)).item()

    numeric = finite_diff_grad(f, np.array(x0, dtype=np.float64), h=h)
    return max_rel_error(analytic, numeric)


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def op_suite(seed=0, sign_flip=False):
    """Finite-difference checks for every differentiable op.

    Returns a list of (name, max_rel_error) covering each op once on a
    random smooth instance.
    """
    rng = np.random.default_rng(seed)
    results = []

    def add_case(name, build, x0, h=1e-6):
        results.append((name, check_scalar_fn(build, x0, h=h, sign_flip=sign_flip)))

    a4 = _rand(rng, 3, 4)
    b4 = ad.Tensor(_rand(rng, 3, 4))
    pos = np.abs(_rand(rng, 3, 4)) + 0.5

    add_case("add", lambda x: (x + b4).sum(), a4)
    add_case("sub", lambda x: (x - b4).sum(), a4)
    add_case("mul", lambda x: ad.reduce_sum(ad.square(x * b4)), a4)
    add_case("div", lambda x: ad.reduce_sum(ad.div(x, ad.Tensor(pos))), a4)
    add_case("neg", lambda x: ad.reduce_sum(ad.neg(x) * b4), a4)
    add_case("exp", lambda x: ad.reduce_sum(ad.exp(x)), a4)
    add_case("log", lambda x: ad.reduce_sum(ad.log(x)), pos)
    add_case("softplus", lambda x: ad.reduce_sum(ad.softplus(x)), a4)
    add_case("sigmoid", lambda x: ad.reduce_sum(ad.sigmoid(x) * b4), a4)
    add_case("relu", lambda x: ad.reduce_sum(ad.relu(x)), a4 + 0.3)
    add_case("leaky_relu", lambda x: ad.reduce_sum(ad.leaky_relu(x, 0.2)), a4 + 0.3)
    add_case("sqrt", lambda x: ad.reduce_sum(ad.sqrt(x)), pos)
    add_case("square", lambda x: ad.reduce_sum(ad.square(x) * b4), a4)
    add_case("abs", lambda x: ad.reduce_sum(ad.absolute(x)), a4 + 0.3)

    m = _rand(rng, 4, 5)
    w = ad.Tensor(_rand(rng, 5, 3))
    add_case("matmul", lambda x: ad.reduce_sum(ad.square(ad.matmul(x, w))), m)

    add_case("sum_axis", lambda x: ad.reduce_sum(ad.square(ad.reduce_sum(x, 0))), a4)
    add_case("mean_axis", lambda x: ad.reduce_sum(ad.square(ad.reduce_mean(x, 1))), a4)
    add_case("max_axis", lambda x: ad.reduce_sum(ad.square(ad.reduce_max(x, 1))), a4)
    add_case("cumsum", lambda x: ad.reduce_sum(ad.square(ad.cumsum(x, 1))), a4)

    add_case("reshape", lambda x: ad.reduce_sum(ad.square(ad.reshape(x, (4, 3)))), a4)
    add_case("permute", lambda x: ad.reduce_sum(ad.square(ad.permute(x, (1, 0)))), a4)
    add_case("flip", lambda x: ad.reduce_sum(ad.square(ad.flip(x, 1)) * b4), a4)
    add_case("broadcast_to",
             lambda x: ad.reduce_sum(ad.square(ad.broadcast_to(ad.reshape(x, (3, 4, 1)),
                                                               (3, 4, 2)))), a4)
    add_case("concat",
             lambda x: ad.reduce_sum(ad.square(ad.concat([x, b4], 1))), a4)
    add_case("getitem", lambda x: ad.reduce_sum(ad.square(x[1:, :2])), a4)

    idx = rng.integers(0, 4, size=7)
    add_case("gather_cols", lambda x: ad.reduce_sum(ad.square(ad.gather_cols(x, idx))), a4)
    add_case("scatter_cols",
             lambda x: ad.reduce_sum(ad.square(ad.scatter_cols(x, np.arange(4) % 3, 6))), a4)

    return results
