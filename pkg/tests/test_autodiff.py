import math
import zlib

import numpy as np
import pytest

from causalattn import autodiff as ad
from causalattn.autodiff import ScatterPlan, Tape, Tensor, backward

from conftest import assert_gradients_match, central_difference, max_rel_err

RNG_CASES = 100


def t(values, grad=True):
    return Tensor(np.asarray(values, dtype=np.float64), requires_grad=grad)


def rand(rng, *shape, low=-2.0, high=2.0):
    return t(rng.uniform(low, high, size=shape))


def scalarize(out: Tensor, rng) -> Tensor:
    """Project an op output onto a fixed random direction to get a scalar."""
    direction = Tensor(rng.uniform(-1.0, 1.0, size=out.values.shape))
    return ad.tsum(ad.mul(out, direction))


# one randomized instance per op kind; returns (tensors_to_check, build_loss)
def _case(kind: str, rng):
    if kind in ("add", "sub", "mul"):
        fn = getattr(ad, kind)
        shape_b = [(3, 4), (1, 4), (3, 1), ()][rng.integers(4)]
        a, b = rand(rng, 3, 4), rand(rng, *shape_b)
        return [a, b], lambda: scalarize(fn(a, b), np.random.default_rng(0))
    if kind == "scale":
        a, c = rand(rng, 3, 4), float(rng.uniform(-3, 3))
        return [a], lambda: scalarize(ad.scale(a, c), np.random.default_rng(0))
    if kind == "shift":
        a, c = rand(rng, 3, 4), float(rng.uniform(-3, 3))
        return [a], lambda: scalarize(ad.shift(a, c), np.random.default_rng(0))
    if kind == "relu":
        a = rand(rng, 4, 5)
        a.values[np.abs(a.values) < 1e-3] += 0.1  # keep clear of the kink
        return [a], lambda: scalarize(ad.relu(a), np.random.default_rng(0))
    if kind == "rsqrt":
        a = rand(rng, 3, 4, low=0.5, high=4.0)
        return [a], lambda: scalarize(ad.rsqrt(a), np.random.default_rng(0))
    if kind == "log_eps":
        a = rand(rng, 3, 4, low=0.1, high=4.0)
        return [a], lambda: scalarize(ad.log_eps(a), np.random.default_rng(0))
    if kind == "softmax_rows":
        a = rand(rng, 4, 5)
        return [a], lambda: scalarize(ad.softmax_rows(a), np.random.default_rng(0))
    if kind == "matmul":
        a, b = rand(rng, 3, 4), rand(rng, 4, 2)
        return [a, b], lambda: scalarize(ad.matmul(a, b), np.random.default_rng(0))
    if kind == "transpose":
        a = rand(rng, 3, 4)
        return [a], lambda: scalarize(ad.transpose(a), np.random.default_rng(0))
    if kind == "concat":
        axis = int(rng.integers(2))
        a, b = rand(rng, 3, 4), rand(rng, 3, 4)
        return [a, b], lambda: scalarize(ad.concat([a, b], axis), np.random.default_rng(0))
    if kind == "slice_cols":
        a = rand(rng, 3, 6)
        return [a], lambda: scalarize(ad.slice_cols(a, 1, 4), np.random.default_rng(0))
    if kind == "slice_rows":
        a = rand(rng, 6, 3)
        return [a], lambda: scalarize(ad.slice_rows(a, 2, 5), np.random.default_rng(0))
    if kind == "gather_rows":
        a = rand(rng, 5, 3)
        idx = rng.integers(0, 5, size=8)
        plan = ScatterPlan(idx, 5) if rng.integers(2) else None
        return [a], lambda: scalarize(ad.gather_rows(a, idx, plan), np.random.default_rng(0))
    if kind == "scatter_rows":
        a = rand(rng, 8, 3)
        idx = rng.integers(0, 5, size=8)
        plan = ScatterPlan(idx, 5)
        return [a], lambda: scalarize(ad.scatter_rows(a, idx, plan), np.random.default_rng(0))
    if kind == "edges_to_dense":
        w = rand(rng, 6, 1, low=0.05, high=0.95)
        src = rng.integers(0, 4, size=6)
        dst = (src + 1 + rng.integers(0, 3, size=6)) % 4
        # ordered pairs must be unique for dense placement
        pairs = {(int(s), int(d)) for s, d in zip(src, dst)}
        src, dst = map(np.asarray, zip(*sorted(pairs)))
        w = t(w.values[: len(src)])
        return [w], lambda: scalarize(ad.edges_to_dense(w, src, dst, 4),
                                      np.random.default_rng(0))
    if kind == "rowsum":
        a = rand(rng, 4, 5)
        return [a], lambda: scalarize(ad.rowsum(a), np.random.default_rng(0))
    if kind == "colmean":
        a = rand(rng, 4, 5)
        return [a], lambda: scalarize(ad.colmean(a), np.random.default_rng(0))
    if kind == "tsum":
        a = rand(rng, 4, 5)
        return [a], lambda: ad.tsum(a)
    if kind == "tmean":
        a = rand(rng, 4, 5)
        return [a], lambda: ad.tmean(a)
    raise AssertionError(f"no gradient case for op kind {kind!r}")


@pytest.mark.parametrize("kind", sorted(ad.OP_KINDS))
def test_gradient_contract_per_op(kind):
    rng = np.random.default_rng(zlib.crc32(kind.encode()))
    for _ in range(RNG_CASES):
        tensors, build = _case(kind, rng)
        assert_gradients_match(build, tensors)


def test_forward_op_dispatch():
    a, b = t(np.eye(2)), t([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]])
    out = ad.forward_op("matmul", a, b)
    np.testing.assert_array_equal(out.values, b.values)
    with pytest.raises(ValueError, match="unknown op kind"):
        ad.forward_op("fft", a)


def test_matmul_identity_passthrough():
    m = t(np.arange(8, dtype=float).reshape(2, 4))
    out = ad.matmul(t(np.eye(2)), m)
    np.testing.assert_array_equal(out.values, m.values)


def test_softmax_symmetry_and_closed_form():
    out = ad.softmax_rows(t([[3.7, 3.7]]))
    np.testing.assert_allclose(out.values, [[0.5, 0.5]], rtol=0, atol=0)
    out = ad.softmax_rows(t([[math.log(3.0), 0.0]]))
    np.testing.assert_allclose(out.values, [[0.75, 0.25]], atol=1e-15)


def test_softmax_rows_sum_to_one_and_shift_invariance(rng):
    x = rng.normal(size=(50, 7)) * 10
    s = ad.softmax_rows(t(x)).values
    np.testing.assert_allclose(s.sum(axis=1), 1.0, atol=1e-12)
    shifted = ad.softmax_rows(t(x + rng.uniform(-10, 10, size=(50, 1)))).values
    np.testing.assert_allclose(shifted, s, atol=1e-12)


def test_backward_sum_gives_ones():
    x = t([[1.0, -2.0], [0.5, 3.0]])
    with Tape() as tape:
        loss = ad.tsum(x)
    backward(tape, loss)
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


def test_backward_mean_square_hand_oracle():
    # loss = mean(x^2 / 2) at x = [1, 2, 3]  =>  grad = x / 3
    x = t([[1.0, 2.0, 3.0]])
    with Tape() as tape:
        loss = ad.tmean(ad.scale(ad.mul(x, x), 0.5))
    backward(tape, loss)
    np.testing.assert_allclose(x.grad, [[1 / 3, 2 / 3, 1.0]], atol=1e-15)


def test_backward_requires_scalar_loss():
    x = t([[1.0, 2.0]])
    with Tape() as tape:
        y = ad.relu(x)
    with pytest.raises(ValueError, match="scalar"):
        backward(tape, y)


def test_fanout_accumulation_matches_single_branches(rng):
    x0 = rng.normal(size=(3, 3))

    def branch_f(v):
        return ad.tsum(ad.mul(v, v))

    def branch_g(v):
        return ad.tmean(ad.relu(v))

    x = t(x0.copy())
    with Tape() as tape:
        loss = ad.add(branch_f(x), branch_g(x))
    backward(tape, loss)
    combined = x.grad.copy()

    grads = []
    for branch in (branch_f, branch_g):
        xb = t(x0.copy())
        with Tape() as tape:
            loss = branch(xb)
        backward(tape, loss)
        grads.append(xb.grad)
    np.testing.assert_allclose(combined, grads[0] + grads[1], atol=1e-15)


def test_composite_chain_matches_finite_differences(rng):
    w1 = rand_param(rng, 4, 6)
    w2 = rand_param(rng, 6, 3)
    x = Tensor(rng.normal(size=(5, 4)))

    def build():
        h = ad.relu(ad.add(ad.matmul(x, w1), Tensor(np.zeros((1, 6)))))
        z = ad.matmul(h, w2)
        p = ad.softmax_rows(z)
        return ad.tmean(ad.mul(ad.log_eps(p), Tensor(np.ones((5, 3)))))

    assert_gradients_match(build, [w1, w2])


def rand_param(rng, *shape):
    return Tensor(rng.normal(size=shape) * 0.7, requires_grad=True)


def test_shape_errors_are_descriptive():
    with pytest.raises(ValueError, match="matmul"):
        ad.matmul(t(np.ones((2, 3))), t(np.ones((2, 3))))
    with pytest.raises(ValueError, match="2-D"):
        ad.softmax_rows(t(np.ones(3)))


def test_log_domain_error():
    with pytest.raises(ValueError, match="nonnegative"):
        ad.log_eps(t([[-0.5]]))


def test_rsqrt_domain_error():
    with pytest.raises(ValueError, match="positive"):
        ad.rsqrt(t([[0.0]]))


def test_no_recording_without_tape():
    x = t([[1.0]])
    y = ad.relu(x)
    assert y.requires_grad
    tape = Tape()
    assert tape.nodes == []


def test_scatter_plan_matches_add_at(rng):
    idx = rng.integers(0, 7, size=30)
    rows = rng.normal(size=(30, 4))
    plan = ScatterPlan(idx, 7)
    expected = np.zeros((7, 4))
    np.add.at(expected, idx, rows)
    np.testing.assert_allclose(plan.scatter(rows), expected, atol=1e-12)


def test_bitwise_determinism(rng):
    def run():
        r = np.random.default_rng(11)
        x = Tensor(r.normal(size=(6, 5)), requires_grad=True)
        w = Tensor(r.normal(size=(5, 4)), requires_grad=True)
        with Tape() as tape:
            loss = ad.tmean(ad.softmax_rows(ad.matmul(ad.relu(x), w)))
        backward(tape, loss)
        return loss.values.tobytes(), x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()
