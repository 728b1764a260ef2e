"""Tensor op correctness: values against hand oracles, gradients against
central finite differences (the FD oracle evaluates forward in float64)."""

import numpy as np
import pytest

from verbrec import autodiff as ad
from verbrec.autodiff import Parameter, Tape, Tensor
from verbrec.errors import DomainError, NotScalarOutput, ShapeMismatch

from oracles import finite_difference_grads, max_rel_err

RNG = np.random.default_rng(20240817)


def check_grads(build, arrays, tol=1e-3, h=1e-3):
    """Analytic tape gradients vs the independent FD oracle, in float64."""

    def run(arrs):
        params = [Parameter(f"p{i}", a, dtype=np.float64) for i, a in enumerate(arrs)]
        return build(params)

    def f(arrs):
        return float(run(arrs).data)

    params = [Parameter(f"p{i}", a, dtype=np.float64) for i, a in enumerate(arrays)]
    with Tape() as tape:
        out = build(params)
    analytic = tape.gradient(out, params)
    numeric = finite_difference_grads(f, [a.copy() for a in arrays], h=h)
    err = max_rel_err(analytic, numeric)
    assert err < tol, f"max rel err {err}"


class TestForwardValues:
    def test_matmul_identity(self):
        a = Tensor(RNG.normal(size=(2, 2)))
        eye = Tensor(np.eye(2))
        np.testing.assert_allclose((eye @ a).data, a.data, rtol=1e-6)

    def test_matmul_hand_case(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[5.0, 6.0], [7.0, 8.0]])
        np.testing.assert_array_equal((a @ b).data, [[19.0, 22.0], [43.0, 50.0]])

    def test_matmul_shape_mismatch(self):
        a = Tensor(np.zeros((2, 3)))
        b = Tensor(np.zeros((2, 3)))
        with pytest.raises(ShapeMismatch):
            ad.matmul(a, b)

    def test_elementwise_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))

    def test_log_domain(self):
        with pytest.raises(DomainError):
            ad.log(Tensor([0.0, 1.0]))
        with pytest.raises(DomainError):
            ad.log(Tensor([-1.0]))

    def test_exp_overflow_raises(self):
        with pytest.raises(DomainError):
            ad.exp(Tensor([1e5]))

    def test_constructor_rejects_nonfinite(self):
        with pytest.raises(DomainError):
            Tensor([np.nan])
        with pytest.raises(DomainError):
            Tensor([np.inf])

    def test_bias_broadcast_over_rows(self):
        m = Tensor(np.ones((3, 4)))
        b = Tensor(np.arange(4.0))
        out = ad.add(m, b)
        np.testing.assert_allclose(out.data, 1.0 + np.arange(4.0)[None, :].repeat(3, 0))

    def test_sigmoid_extremes_are_stable(self):
        out = ad.sigmoid(Tensor([-80.0, 0.0, 80.0], dtype=np.float64))
        assert np.all(np.isfinite(out.data))
        assert out.data[1] == 0.5

    def test_logsigmoid_matches_naive_in_safe_range(self):
        x = np.linspace(-10, 10, 41)
        out = ad.logsigmoid(Tensor(x, dtype=np.float64))
        np.testing.assert_allclose(out.data, np.log(1.0 / (1.0 + np.exp(-x))), atol=1e-12)

    def test_concat_and_split_back(self):
        a, b = Tensor(np.ones((2, 3))), Tensor(2 * np.ones((2, 2)))
        out = ad.concat([a, b], axis=1)
        assert out.shape == (2, 5)
        with pytest.raises(ShapeMismatch):
            ad.concat([a, Tensor(np.ones((3, 3)))], axis=1)

    def test_sum_uses_float64_accumulation(self):
        # 1 + 2^-20 summed 2^20 times: float32 running sum loses the tail
        x = np.full(2**20, 1.0 + 2.0**-20, dtype=np.float32)
        out = ad.reduce_sum(Tensor(x))
        assert abs(float(out.data) - (2.0**20 + 1.0)) < 8.0

    def test_embedding_lookup_values(self):
        table = Tensor(np.arange(12.0).reshape(4, 3))
        out = ad.embedding_lookup(table, np.array([2, 0]))
        np.testing.assert_array_equal(out.data, [[6.0, 7.0, 8.0], [0.0, 1.0, 2.0]])

    def test_embedding_lookup_range_check(self):
        table = Tensor(np.zeros((4, 3)))
        with pytest.raises(ShapeMismatch):
            ad.embedding_lookup(table, np.array([4]))


class TestBackward:
    def test_sum_of_squares(self):
        x = Parameter("x", [1.0, -2.0, 3.0], dtype=np.float64)
        with Tape() as tape:
            loss = ad.reduce_sum(ad.mul(x, x))
        (g,) = tape.gradient(loss, [x])
        np.testing.assert_allclose(g, 2.0 * x.data)

    def test_constant_in_x_gives_zero(self):
        x = Parameter("x", [1.0, 2.0], dtype=np.float64)
        c = Tensor([5.0], dtype=np.float64)
        with Tape() as tape:
            loss = ad.reduce_sum(ad.mul(c, c))
        (g,) = tape.gradient(loss, [x])
        np.testing.assert_array_equal(g, np.zeros(2))

    def test_unreachable_parameter_zero(self):
        x = Parameter("x", [1.0], dtype=np.float64)
        y = Parameter("y", [2.0], dtype=np.float64)
        with Tape() as tape:
            loss = ad.reduce_sum(ad.mul(x, x))
        gx, gy = tape.gradient(loss, [x, y])
        assert gx[0] == 2.0
        assert gy[0] == 0.0

    def test_non_scalar_output_rejected(self):
        x = Parameter("x", [1.0, 2.0], dtype=np.float64)
        with Tape() as tape:
            out = ad.mul(x, x)
        with pytest.raises(NotScalarOutput):
            tape.gradient(out, [x])

    def test_reused_node_accumulates(self):
        x = Parameter("x", [3.0], dtype=np.float64)
        with Tape() as tape:
            y = ad.mul(x, x)  # x^2
            loss = ad.reduce_sum(ad.add(y, y))  # 2 x^2
        (g,) = tape.gradient(loss, [x])
        np.testing.assert_allclose(g, [12.0])


class TestGradOracle:
    """Every differentiable op against the finite-difference oracle."""

    def test_add(self):
        a, b = RNG.normal(size=(3, 4)), RNG.normal(size=(3, 4))
        check_grads(lambda p: ad.reduce_sum(ad.mul(ad.add(p[0], p[1]), ad.add(p[0], p[1]))), [a, b])

    def test_add_broadcast_bias(self):
        a, b = RNG.normal(size=(3, 4)), RNG.normal(size=(4,))
        check_grads(lambda p: ad.reduce_sum(ad.mul(ad.add(p[0], p[1]), ad.add(p[0], p[1]))), [a, b])

    def test_sub(self):
        a, b = RNG.normal(size=(2, 3)), RNG.normal(size=(2, 3))
        check_grads(lambda p: ad.reduce_sum(ad.mul(ad.sub(p[0], p[1]), ad.sub(p[0], p[1]))), [a, b])

    def test_mul(self):
        a, b = RNG.normal(size=(2, 5)), RNG.normal(size=(2, 5))
        check_grads(lambda p: ad.reduce_sum(ad.mul(p[0], p[1])), [a, b])

    def test_neg(self):
        a = RNG.normal(size=(4,))
        check_grads(lambda p: ad.reduce_sum(ad.mul(ad.neg(p[0]), p[0])), [a])

    def test_matmul(self):
        a, b = RNG.normal(size=(3, 4)), RNG.normal(size=(4, 2))
        check_grads(lambda p: ad.reduce_sum(ad.mul(p[0] @ p[1], p[0] @ p[1])), [a, b])

    def test_relu(self):
        a = RNG.normal(size=(5, 5)) + 0.05  # keep away from the kink
        check_grads(lambda p: ad.reduce_sum(ad.relu(p[0])), [a])

    def test_sigmoid(self):
        a = RNG.uniform(-2, 2, size=(3, 3))
        check_grads(lambda p: ad.reduce_sum(ad.sigmoid(p[0])), [a])

    def test_logsigmoid(self):
        a = RNG.uniform(-3, 3, size=(4,))
        check_grads(lambda p: ad.reduce_sum(ad.logsigmoid(p[0])), [a])

    def test_tanh(self):
        a = RNG.uniform(-2, 2, size=(3, 3))
        check_grads(lambda p: ad.reduce_sum(ad.tanh(p[0])), [a])

    def test_exp(self):
        a = RNG.uniform(-1, 1, size=(3,))
        check_grads(lambda p: ad.reduce_sum(ad.exp(p[0])), [a])

    def test_log(self):
        a = RNG.uniform(0.5, 3.0, size=(4,))
        check_grads(lambda p: ad.reduce_sum(ad.log(p[0])), [a])

    def test_sin_cos(self):
        a = RNG.uniform(-3, 3, size=(4,))
        check_grads(lambda p: ad.reduce_sum(ad.mul(ad.sin(p[0]), ad.cos(p[0]))), [a])

    def test_abs(self):
        a = RNG.normal(size=(5,)) + np.sign(RNG.normal(size=(5,))) * 0.1
        a = np.where(np.abs(a) < 0.05, 0.5, a)  # stay off the kink
        check_grads(lambda p: ad.reduce_sum(ad.absval(p[0])), [a])

    def test_concat(self):
        a, b = RNG.normal(size=(2, 2)), RNG.normal(size=(2, 3))
        check_grads(
            lambda p: ad.reduce_sum(ad.mul(ad.concat([p[0], p[1]], axis=1), ad.concat([p[0], p[1]], axis=1))),
            [a, b],
        )

    def test_mean(self):
        a = RNG.normal(size=(3, 4))
        check_grads(lambda p: ad.reduce_mean(ad.mul(p[0], p[0])), [a])

    def test_sum_axis(self):
        a = RNG.normal(size=(3, 4))
        check_grads(lambda p: ad.reduce_sum(ad.mul(ad.reduce_sum(p[0], axis=1), ad.reduce_sum(p[0], axis=1))), [a])

    def test_reshape(self):
        a = RNG.normal(size=(2, 6))
        check_grads(lambda p: ad.reduce_sum(ad.mul(ad.reshape(p[0], (3, 4)), ad.reshape(p[0], (3, 4)))), [a])

    def test_transpose(self):
        a = RNG.normal(size=(2, 3, 4))

        def build(p):
            t = ad.transpose(p[0], (2, 0, 1))
            return ad.reduce_sum(ad.mul(t, t))

        check_grads(build, [a])

    def test_embedding_lookup(self):
        table = RNG.normal(size=(5, 3))
        idx = np.array([0, 2, 2, 4])

        def build(p):
            looked = ad.embedding_lookup(p[0], idx)
            return ad.reduce_sum(ad.mul(looked, looked))

        check_grads(build, [table])

    def test_two_layer_perceptron(self):
        """Random MLP: analytic grads vs central differences (h=1e-3)."""
        w1, b1 = RNG.normal(size=(4, 8)) * 0.5, RNG.normal(size=(8,)) * 0.1
        w2, b2 = RNG.normal(size=(8, 1)) * 0.5, RNG.normal(size=(1,)) * 0.1
        x = Tensor(RNG.normal(size=(3, 4)), dtype=np.float64)

        def build(p):
            h = ad.relu(ad.add(x @ p[0], p[1]))
            out = ad.sigmoid(ad.add(h @ p[2], p[3]))
            return ad.reduce_mean(out)

        check_grads(build, [w1, b1, w2, b2])

    def test_chain_composition_matches_fused(self):
        """grad of composed ops == grad of the algebraically fused form."""
        a = RNG.uniform(0.5, 1.5, size=(4,))

        def composed(p):
            return ad.reduce_sum(ad.exp(ad.log(p[0])))  # == sum(x)

        def fused(p):
            return ad.reduce_sum(p[0])

        params1 = [Parameter("a", a, dtype=np.float64)]
        with Tape() as t1:
            out1 = composed(params1)
        g1 = t1.gradient(out1, params1)

        params2 = [Parameter("a", a, dtype=np.float64)]
        with Tape() as t2:
            out2 = fused(params2)
        g2 = t2.gradient(out2, params2)
        np.testing.assert_allclose(g1[0], g2[0], rtol=1e-9)


class TestInferenceMode:
    def test_ops_outside_tape_do_not_record(self):
        x = Parameter("x", [1.0, 2.0])
        y = ad.reduce_sum(ad.mul(x, x))
        assert y._node_id is None

    def test_nested_tapes_are_independent(self):
        x = Parameter("x", [2.0], dtype=np.float64)
        with Tape() as outer:
            a = ad.mul(x, x)
            with Tape() as inner:
                b = ad.mul(x, x)
                loss_inner = ad.reduce_sum(b)
            loss_outer = ad.reduce_sum(a)
        (gi,) = inner.gradient(loss_inner, [x])
        (go,) = outer.gradient(loss_outer, [x])
        np.testing.assert_allclose(gi, [4.0])
        np.testing.assert_allclose(go, [4.0])
