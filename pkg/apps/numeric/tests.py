import math

import numpy as np
from django.test import SimpleTestCase

from apps.core.exceptions import (
    ConfigurationError,
    DimensionError,
    DTypeError,
    StateError,
    TargetIndexError,
)
from apps.numeric.autograd import Tape
from apps.numeric.functional import (
    attention_block,
    conv3d,
    cross_entropy_loss,
    linear,
    maxpool3d,
    mul,
    relu,
    scale,
    softmax,
    sum_all,
)
from apps.numeric.gradcheck import gradient_check
from apps.numeric.optim import sgd_nesterov_step
from apps.numeric.tensor import Param, Tensor


def random_tensor(shape, seed=0, dtype=np.float64):
    return Tensor(np.random.default_rng(seed).standard_normal(shape), dtype=dtype)


def random_param(shape, seed=0, name="p"):
    return Param(np.random.default_rng(seed).standard_normal(shape), name=name, dtype=np.float64)


class Conv3dTests(SimpleTestCase):
    def test_identity_kernel_returns_input(self):
        x = random_tensor((2, 1, 3, 4, 5), dtype=np.float32)
        out = conv3d(x, Tensor(np.ones((1, 1, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_constant_input_sums_receptive_field(self):
        v = 2.0
        x = Tensor(np.full((1, 1, 5, 5, 5), v))
        out = conv3d(x, Tensor(np.ones((1, 1, 3, 3, 3))), Tensor(np.zeros(1)))
        self.assertAlmostEqual(float(out.data[0, 0, 2, 2, 2]), 27 * v, places=5)
        self.assertAlmostEqual(float(out.data[0, 0, 0, 0, 0]), 8 * v, places=5)

    def test_same_padding_preserves_extent(self):
        x = random_tensor((1, 3, 6, 9, 11), dtype=np.float32)
        weight = Tensor(np.zeros((4, 3, 3, 5, 7)))
        out = conv3d(x, weight, Tensor(np.zeros(4)))
        self.assertEqual(out.shape, (1, 4, 6, 9, 11))

    def test_channel_mismatch_raises_dimension_error(self):
        x = random_tensor((1, 2, 3, 3, 3), dtype=np.float32)
        with self.assertRaises(DimensionError):
            conv3d(x, Tensor(np.zeros((1, 3, 3, 3, 3))), Tensor(np.zeros(1)))

    def test_matches_direct_summation(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal((1, 2, 3, 4, 4))
        w = rng.standard_normal((2, 2, 3, 3, 3))
        b = rng.standard_normal(2)
        out = conv3d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64))
        padded = np.pad(x, [(0, 0), (0, 0), (1, 1), (1, 1), (1, 1)])
        expected = np.zeros((1, 2, 3, 4, 4))
        for o in range(2):
            for t in range(3):
                for h in range(4):
                    for col in range(4):
                        expected[0, o, t, h, col] = (
                            padded[0, :, t:t + 3, h:h + 3, col:col + 3] * w[o]
                        ).sum() + b[o]
        np.testing.assert_allclose(out.data, expected, rtol=1e-12, atol=1e-12)

    def test_mixed_dtypes_rejected(self):
        x = random_tensor((1, 1, 3, 3, 3), dtype=np.float32)
        with self.assertRaises(DTypeError):
            conv3d(x, Tensor(np.ones((1, 1, 1, 1, 1)), dtype=np.float64), Tensor(np.zeros(1), dtype=np.float64))


class MaxPool3dTests(SimpleTestCase):
    def test_constant_input_gives_constant_output(self):
        out = maxpool3d(Tensor(np.full((1, 2, 4, 6, 6), 3.5)), (2, 3, 2))
        np.testing.assert_array_equal(out.data, np.full((1, 2, 2, 2, 3), 3.5, dtype=np.float32))

    def test_one_axis_slice(self):
        x = Tensor(np.array([1, 5, 2, 4], dtype=np.float32).reshape(1, 1, 1, 1, 4))
        out = maxpool3d(x, (1, 1, 2))
        np.testing.assert_array_equal(out.data.reshape(-1), [5, 4])

    def test_floor_division_shape_cascade(self):
        x = Tensor(np.zeros((1, 1, 96, 180, 320), dtype=np.float32))
        out = maxpool3d(maxpool3d(x, (2, 3, 4)), (2, 3, 4))
        self.assertEqual(out.shape, (1, 1, 24, 20, 20))

    def test_window_larger_than_input_raises(self):
        with self.assertRaises(DimensionError):
            maxpool3d(Tensor(np.zeros((1, 1, 2, 2, 2))), (3, 1, 1))

    def test_backward_routes_each_gradient_to_one_cell(self):
        x = random_param((2, 3, 5, 7, 6), seed=4)
        with Tape() as tape:
            loss = sum_all(maxpool3d(x, (2, 2, 3)))
        tape.backward(loss)
        # total mass = number of output cells
        self.assertEqual(x.grad.sum(), 2 * 3 * 2 * 3 * 2)
        self.assertEqual(set(np.unique(x.grad)), {0.0, 1.0})
        # trailing partial windows receive nothing
        self.assertEqual(x.grad[:, :, 4].sum(), 0)
        self.assertEqual(x.grad[:, :, :, 6].sum(), 0)

    def test_ties_pick_first_cell(self):
        x = Param(np.ones((1, 1, 1, 2, 2)), dtype=np.float64)
        with Tape() as tape:
            loss = sum_all(maxpool3d(x, (1, 2, 2)))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad.reshape(-1), [1, 0, 0, 0])


class AttentionBlockTests(SimpleTestCase):
    def test_zero_mask_scales_by_one_and_a_half(self):
        x = random_tensor((1, 2, 2, 3, 3), dtype=np.float32)
        out = attention_block(x, Tensor(np.zeros((1, 2, 1, 1, 1))), Tensor(np.zeros(1)))
        np.testing.assert_allclose(out.data, 1.5 * x.data, rtol=1e-6)

    def test_zero_input_stays_zero(self):
        x = Tensor(np.zeros((1, 2, 2, 2, 2)))
        out = attention_block(x, Tensor(np.full((1, 2, 1, 1, 1), 3.0)), Tensor(np.array([-1.0])))
        np.testing.assert_array_equal(out.data, x.data)

    def test_matches_scalar_oracle(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 2, 2, 2, 2))
        w = rng.standard_normal((1, 2, 1, 1, 1))
        b = rng.standard_normal(1)
        out = attention_block(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64))
        for index in np.ndindex(x.shape):
            n, c, t, h, col = index
            z = sum(w[0, k, 0, 0, 0] * x[n, k, t, h, col] for k in range(2)) + b[0]
            expected = x[index] * (1 + 1 / (1 + math.exp(-z)))
            self.assertAlmostEqual(out.data[index], expected, places=12)

    def test_positive_input_ratio_between_one_and_two(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.uniform(0.1, 1.0, (1, 3, 2, 4, 4)), dtype=np.float64)
        w = Tensor(rng.standard_normal((1, 3, 1, 1, 1)), dtype=np.float64)
        out = attention_block(x, w, Tensor(np.zeros(1), dtype=np.float64))
        ratio = out.data / x.data
        self.assertTrue(np.all(ratio > 1) and np.all(ratio < 2))


class LinearTests(SimpleTestCase):
    def test_identity_weight(self):
        x = random_tensor((3, 4), dtype=np.float32)
        out = linear(x, Tensor(np.eye(4)), Tensor(np.zeros(4)))
        np.testing.assert_array_equal(out.data, x.data)

    def test_hand_dot_product(self):
        out = linear(Tensor([[1, 2]]), Tensor([[3, 4]]), Tensor([5]))
        np.testing.assert_array_equal(out.data, [[16]])

    def test_zero_weight_returns_bias_rows(self):
        out = linear(random_tensor((3, 2), dtype=np.float32), Tensor(np.zeros((2, 2))), Tensor([7, -1]))
        np.testing.assert_array_equal(out.data, [[7, -1]] * 3)

    def test_feature_mismatch(self):
        with self.assertRaises(DimensionError):
            linear(Tensor(np.zeros((1, 3))), Tensor(np.zeros((2, 2))), Tensor(np.zeros(2)))


class SoftmaxAndLossTests(SimpleTestCase):
    def test_uniform_logits(self):
        probs = softmax(Tensor(np.zeros((1, 21))))
        np.testing.assert_allclose(probs.data, np.full((1, 21), 1 / 21), rtol=1e-6)

    def test_closed_form(self):
        probs = softmax(Tensor([[0.0, math.log(2)]], dtype=np.float64))
        np.testing.assert_allclose(probs.data, [[1 / 3, 2 / 3]], rtol=1e-12)

    def test_shift_invariance_and_row_sums(self):
        logits = random_tensor((4, 6), seed=8)
        shifted = Tensor(logits.data + 123.0, dtype=np.float64)
        np.testing.assert_allclose(softmax(logits).data, softmax(shifted).data, atol=1e-12)
        np.testing.assert_allclose(softmax(logits).data.sum(axis=1), np.ones(4), atol=1e-12)

    def test_uniform_loss_is_log_classes(self):
        loss = cross_entropy_loss(Tensor(np.zeros((1, 21)), dtype=np.float64), [3])
        self.assertAlmostEqual(loss.item(), math.log(21), places=10)
        self.assertAlmostEqual(loss.item(), 3.0445, places=4)

    def test_closed_form_loss(self):
        logits = Tensor([[math.log(1), math.log(2), math.log(3)]], dtype=np.float64)
        self.assertAlmostEqual(cross_entropy_loss(logits, [2]).item(), -math.log(0.5), places=12)

    def test_sum_reduction_over_batch(self):
        row = np.random.default_rng(9).standard_normal(5)
        single = cross_entropy_loss(Tensor([row], dtype=np.float64), [1]).item()
        batch = cross_entropy_loss(Tensor([row] * 4, dtype=np.float64), [1] * 4).item()
        self.assertAlmostEqual(batch, 4 * single, places=10)
        self.assertGreaterEqual(single, 0)

    def test_target_out_of_range(self):
        with self.assertRaises(TargetIndexError):
            cross_entropy_loss(Tensor(np.zeros((1, 3))), [3])


class BackpropTests(SimpleTestCase):
    def test_linear_loss_gives_ones(self):
        theta = random_param((3, 2))
        with Tape() as tape:
            loss = sum_all(theta)
        tape.backward(loss)
        np.testing.assert_array_equal(theta.grad, np.ones((3, 2)))

    def test_quadratic_loss_gives_theta(self):
        theta = random_param((4,), seed=1)
        with Tape() as tape:
            loss = scale(sum_all(mul(theta, theta)), 0.5)
        tape.backward(loss)
        np.testing.assert_allclose(theta.grad, theta.data, rtol=1e-12)

    def test_backward_without_forward_raises(self):
        with self.assertRaises(StateError):
            Tape().backward(Tensor(1.0))

    def test_tape_is_released_after_backward(self):
        theta = random_param((2,))
        with Tape() as tape:
            loss = sum_all(relu(theta))
        tape.backward(loss)
        self.assertEqual(tape.nodes, [])
        self.assertIsNone(loss.node)

    def test_nothing_recorded_without_tape(self):
        theta = random_param((2,))
        out = sum_all(theta)
        self.assertIsNone(out.node)


class NesterovStepTests(SimpleTestCase):
    def test_hand_recurrence(self):
        theta = Param([1.0], dtype=np.float64)
        theta.grad[:] = 1.0
        sgd_nesterov_step([theta], lr=0.1, momentum=0.5, weight_decay=0.0)
        self.assertAlmostEqual(theta.data[0], 0.85, delta=1e-12)
        sgd_nesterov_step([theta], lr=0.1, momentum=0.5, weight_decay=0.0)
        self.assertAlmostEqual(theta.data[0], 0.675, delta=1e-12)

    def test_zero_momentum_is_vanilla_sgd(self):
        rng = np.random.default_rng(10)
        theta = Param(rng.standard_normal(5), dtype=np.float64)
        start = theta.data.copy()
        for _ in range(3):
            grad = rng.standard_normal(5)
            theta.grad[:] = grad
            expected = start - 0.01 * grad
            sgd_nesterov_step([theta], lr=0.01, momentum=0.0, weight_decay=0.0)
            np.testing.assert_array_equal(theta.data, expected)
            start = expected

    def test_zero_gradient_is_fixed_point(self):
        theta = Param([0.3, -2.0], dtype=np.float64)
        sgd_nesterov_step([theta], lr=0.5, momentum=0.9, weight_decay=0.0)
        np.testing.assert_array_equal(theta.data, [0.3, -2.0])

    def test_non_positive_lr_rejected(self):
        with self.assertRaises(ConfigurationError):
            sgd_nesterov_step([Param([1.0])], lr=0.0, momentum=0.5, weight_decay=0.0)


class GradientCheckTests(SimpleTestCase):
    def test_linear_layer(self):
        x = random_tensor((4, 3), seed=11)
        weight = random_param((2, 3), seed=12)
        bias = random_param((2,), seed=13)
        error = gradient_check(lambda: cross_entropy_loss(linear(x, weight, bias), [0, 1, 1, 0]), [weight, bias])
        self.assertLess(error, 1e-6)

    def test_conv3d(self):
        x = random_tensor((1, 1, 4, 4, 4), seed=14)
        weight = random_param((2, 1, 3, 3, 3), seed=15)
        bias = random_param((2,), seed=16)
        projection = random_tensor((1, 2, 4, 4, 4), seed=17)
        error = gradient_check(lambda: sum_all(mul(conv3d(x, weight, bias), projection)), [weight, bias])
        self.assertLess(error, 1e-5)

    def test_attention_block(self):
        x = random_tensor((1, 2, 2, 2, 2), seed=18)
        mask_weight = random_param((1, 2, 1, 1, 1), seed=19)
        mask_bias = random_param((1,), seed=20)
        projection = random_tensor((1, 2, 2, 2, 2), seed=21)
        error = gradient_check(
            lambda: sum_all(mul(attention_block(x, mask_weight, mask_bias), projection)),
            [mask_weight, mask_bias],
        )
        self.assertLess(error, 1e-5)

    def test_conv3d_input_gradient(self):
        # the input itself is a parameter here, exercising the flipped-kernel rule
        x = random_param((1, 2, 3, 4, 5), seed=22)
        weight = Tensor(np.random.default_rng(23).standard_normal((3, 2, 3, 3, 5)), dtype=np.float64)
        bias = Tensor(np.zeros(3), dtype=np.float64)
        projection = random_tensor((1, 3, 3, 4, 5), seed=24)
        error = gradient_check(lambda: sum_all(mul(conv3d(x, weight, bias), projection)), [x])
        self.assertLess(error, 1e-5)

    def test_float32_params_rejected(self):
        with self.assertRaises(DTypeError):
            gradient_check(lambda: None, [Param([1.0])])
