import math
import os

import numpy as np
import pytest

from dynlab import autodiff as ad
from dynlab.autodiff import Tensor


def fd_check(params, forward, tol=1e-4):
    report = ad.grad_check(lambda: (params, forward), tolerance=tol)
    assert report.passed, report.per_param
    return report


class TestPrimitiveGradients:
    """Every primitive against central finite differences (h=1e-4)."""

    def setup_method(self):
        self.rng = np.random.default_rng(11)

    def param(self, *shape):
        return Tensor(self.rng.standard_normal(shape), True, "p")

    def test_add_broadcast(self):
        a, b = self.param(4, 3), self.param(3)
        fd_check([a, b], lambda: ad.tsum(ad.mul(ad.add(a, b), ad.add(a, b))))

    def test_sub(self):
        a, b = self.param(4, 3), self.param(4, 3)
        fd_check([a, b], lambda: ad.tsum(ad.mul(ad.sub(a, b), ad.sub(a, b))))

    def test_mul_broadcast(self):
        a, b = self.param(4, 3), self.param(3)
        fd_check([a, b], lambda: ad.tsum(ad.mul(ad.mul(a, b), ad.mul(a, b))))

    def test_smul(self):
        a = self.param(5)
        fd_check([a], lambda: ad.tsum(ad.mul(ad.smul(a, -2.5), a)))

    def test_matmul(self):
        a, b = self.param(4, 3), self.param(3, 2)
        fd_check([a, b], lambda: ad.tsum(ad.mul(ad.matmul(a, b), ad.matmul(a, b))))

    def test_transpose(self):
        a = self.param(3, 5)
        fd_check([a], lambda: ad.tsum(ad.mul(ad.transpose(a), ad.transpose(a))))

    def test_relu(self):
        a = Tensor(self.rng.standard_normal((4, 4)) + 0.3, True)  # keep off the kink
        fd_check([a], lambda: ad.tsum(ad.mul(ad.relu(a), ad.relu(a))))

    def test_tanh(self):
        a = self.param(4, 4)
        fd_check([a], lambda: ad.tsum(ad.tanh(a)))

    def test_sigmoid(self):
        a = self.param(4, 4)
        fd_check([a], lambda: ad.tsum(ad.sigmoid(a)))

    def test_exp(self):
        a = self.param(4)
        fd_check([a], lambda: ad.tsum(ad.exp(a)))

    def test_mean(self):
        a = self.param(6)
        fd_check([a], lambda: ad.tmean(ad.mul(a, a)))

    def test_l1_norm(self):
        a = Tensor(self.rng.standard_normal(8) + np.sign(self.rng.standard_normal(8)) * 0.5, True)
        fd_check([a], lambda: ad.l1_norm(a))

    def test_mse(self):
        a = self.param(4, 3)
        target = self.rng.standard_normal((4, 3))
        fd_check([a], lambda: ad.mse(a, target))

    def test_concat(self):
        a, b = self.param(2, 3), self.param(4, 3)
        fd_check([a, b], lambda: ad.tsum(ad.mul(ad.concat([a, b]), ad.concat([a, b]))))

    def test_slice(self):
        a = self.param(6, 3)
        fd_check([a], lambda: ad.tsum(ad.mul(ad.tslice(a, (slice(1, 4),)), ad.tslice(a, (slice(1, 4),)))))

    def test_layer_norm(self):
        x, g, b = self.param(4, 6), Tensor(np.ones(6), True), Tensor(np.zeros(6), True)
        fd_check([x, g, b], lambda: ad.tsum(ad.mul(ad.layer_norm(x, g, b), ad.layer_norm(x, g, b))))

    def test_softmax_cross_entropy(self):
        logits = self.param(5, 4)
        labels = [0, 1, 2, 3, 1]
        fd_check([logits], lambda: ad.softmax_cross_entropy(logits, labels))

    def test_gather_logprob(self):
        logits = self.param(5, 3)
        weights = self.rng.standard_normal(5)
        fd_check(
            [logits],
            lambda: ad.tsum(ad.mul(ad.gather_logprob(logits, [0, 2, 1, 0, 2]), Tensor(weights))),
        )

    def test_three_op_chain(self):
        w1, w2 = self.param(5, 8), self.param(8, 2)
        x = self.rng.standard_normal((3, 5))
        fd_check([w1, w2], lambda: ad.mse(ad.matmul(ad.tanh(ad.matmul(Tensor(x), w1)), w2), 0.1))


class TestClosedForms:
    def test_ce_uniform_logits_is_log10(self):
        loss = ad.softmax_cross_entropy(Tensor(np.zeros((3, 10)), True), [0, 5, 9])
        assert float(loss.data) == pytest.approx(math.log(10), abs=1e-12)

    def test_layer_norm_constant_row_is_zero(self):
        out = ad.layer_norm(
            Tensor(np.full((2, 8), 3.7)), Tensor(np.ones(8)), Tensor(np.zeros(8))
        )
        assert np.allclose(out.data, 0.0)

    def test_mse_gradient_zero_at_minimum(self):
        x0 = np.array([1.0, -2.0, 0.5])
        x = Tensor(x0.copy(), True)
        grads, _ = ad.gradients(ad.mse(x, x0), [x])
        assert np.all(grads[0] == 0.0)


class TestOptimizers:
    def test_adam_zero_gradient_is_identity(self):
        p = Tensor(np.array([1.0, -2.0]), True)
        opt = ad.Adam([p], lr=0.1)
        opt.step([np.zeros(2)])
        assert np.array_equal(p.data, [1.0, -2.0])
        assert opt.step_count == 1

    def test_adam_first_step_magnitude(self):
        p = Tensor(np.array([1.0]), True)
        ad.Adam([p], lr=0.1).step([np.array([1.0])])
        assert p.data[0] == pytest.approx(0.9, abs=1e-6)

    def test_sgd_quadratic_hand_case(self):
        w = Tensor(np.array([1.0]), True)
        ad.sgd_step([w], [np.array([2.0])], lr=0.5)  # grad of w^2 at w=1
        assert w.data[0] == 0.0

    def test_non_finite_gradient_aborts(self):
        p = Tensor(np.array([1.0]), True, "theta")
        with pytest.raises(ad.NonFiniteError, match="theta"):
            ad.Adam([p], lr=0.1).step([np.array([np.nan])])

    def test_clip_global_norm(self):
        grads = [np.array([3.0, 0.0]), np.array([4.0])]
        norm = ad.clip_global_norm(grads, 1.0)
        assert norm == pytest.approx(5.0)
        assert ad.global_norm(grads) == pytest.approx(1.0)


class TestEngine:
    def test_disconnected_param_reports_zero(self):
        used = Tensor(np.ones(3), True, "used")
        unused = Tensor(np.ones(3), True, "unused")
        grads, diagnostics = ad.gradients(ad.tsum(ad.mul(used, used)), [used, unused])
        assert np.all(grads[1] == 0.0)
        assert diagnostics == ["unused"]

    def test_forward_is_deterministic(self):
        def run():
            rng = np.random.default_rng(42)
            mlp = ad.MLP([6, 16, 4], rng, use_layer_norm=True)
            x = Tensor(np.random.default_rng(1).standard_normal((8, 6)))
            return mlp.forward(x).data.tobytes()

        assert run() == run()

    def test_no_grad_prunes_graph(self):
        w = Tensor(np.ones((2, 2)), True)
        with ad.no_grad():
            out = ad.matmul(Tensor(np.ones((3, 2))), w)
        assert not out.requires_grad
        assert out._backward is None

    def test_non_finite_forward_raises(self):
        with pytest.raises(ad.NonFiniteError):
            ad.exp(Tensor(np.array([2000.0])))

    def test_deep_graph_backward(self):
        # episode-length graphs must not hit the recursion limit
        x = Tensor(np.array([1.0]), True)
        node = x
        for _ in range(3000):
            node = ad.add(ad.smul(node, 0.999), Tensor(np.array([0.001])))
        grads, _ = ad.gradients(ad.tsum(node), [x])
        assert grads[0][0] == pytest.approx(0.999**3000, rel=1e-9)

    def test_grad_check_negative_control(self):
        # a deliberately corrupted backward rule must be caught
        def bad_tanh(a):
            out_data = np.tanh(a.data)

            def backward(out):
                a.add_grad(out.grad * 0.5 * (1.0 - out_data**2))  # wrong factor

            return ad._out(out_data, (a,), backward, "bad_tanh")

        w = Tensor(np.random.default_rng(0).standard_normal(4), True, "w")
        report = ad.grad_check(lambda: ([w], lambda: ad.tsum(bad_tanh(w))), tolerance=1e-4)
        assert not report.passed

    def test_grad_check_size_guard(self):
        w = Tensor(np.zeros((100, 100)), True)
        with pytest.raises(ValueError):
            ad.grad_check(lambda: ([w], lambda: ad.tsum(w)))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        path = os.path.join(tmp_path, "model.json")
        params = {
            "w": np.arange(6, dtype=np.float64).reshape(2, 3),
            "b": Tensor(np.array([1.5, -2.5])),
        }
        ad.save_checkpoint(path, params)
        loaded = ad.load_checkpoint(path)
        assert np.array_equal(loaded["w"], params["w"])
        assert np.array_equal(loaded["b"], params["b"].data)

    def test_tamper_detection(self, tmp_path):
        path = os.path.join(tmp_path, "model.json")
        ad.save_checkpoint(path, {"w": np.ones(3)})
        blob = open(path).read().replace("1.0", "2.0", 1)
        with open(path, "w") as fh:
            fh.write(blob)
        with pytest.raises(ValueError, match="hash mismatch"):
            ad.load_checkpoint(path)
