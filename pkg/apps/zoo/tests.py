import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from apps.core.exceptions import ConfigurationError, DimensionError, StateError
from apps.numeric.autograd import Tape
from apps.numeric.functional import cross_entropy_loss
from apps.numeric.gradcheck import gradient_check
from apps.zoo.checkpoint import CheckpointError, encode_checkpoint, load_checkpoint, save_checkpoint
from apps.zoo.networks import (
    LayerSpec,
    NetworkSpec,
    build_v1,
    build_v2,
    feature_shape,
    infer_shapes,
    model_forward,
    v1_spec,
    v2_spec,
)


def count_kinds(spec, kind):
    return sum(1 for layer in spec.blocks if layer.kind == kind)


class ArchitectureTests(SimpleTestCase):
    def test_v1_default_layout(self):
        spec = v1_spec()
        self.assertEqual(count_kinds(spec, "conv"), 6)
        self.assertEqual(count_kinds(spec, "pool"), 6)
        self.assertEqual(count_kinds(spec, "attention"), 4)
        self.assertEqual(count_kinds(spec, "linear"), 2)
        convs = [layer for layer in spec.blocks if layer.kind == "conv"]
        self.assertTrue(all(layer.kernel == (3, 3, 3) for layer in convs))
        pools = [layer.window for layer in spec.blocks if layer.kind == "pool"]
        self.assertEqual(pools, [(1, 2, 2)] * 2 + [(2, 2, 2)] * 4)

    def test_v1_feature_shape(self):
        self.assertEqual(feature_shape(v1_spec()), (256, 6, 2, 5))

    def test_v2_default_layout(self):
        spec = v2_spec()
        self.assertEqual(spec.attention_count, 5)
        convs = [layer.kernel for layer in spec.blocks if layer.kind == "conv"]
        self.assertEqual(convs, [(3, 5, 7)] * 2 + [(3, 3, 3)] * 3)
        pools = [layer.window for layer in spec.blocks if layer.kind == "pool"]
        self.assertEqual(pools, [(2, 3, 4)] * 2 + [(2, 2, 2)] * 3)

    def test_v2_feature_maps_are_square_after_block_two(self):
        shapes = infer_shapes(v2_spec())
        second_attention = [s for s in shapes if s.kind == "attention"][1]
        self.assertEqual(second_attention.shape, (32, 24, 20, 20))
        self.assertEqual(feature_shape(v2_spec()), (256, 3, 2, 2))

    def test_num_classes_sets_final_layer(self):
        shapes = infer_shapes(v2_spec(num_classes=2))
        self.assertEqual(shapes[-1].shape, (2,))

    def test_short_channel_plan_builds_leading_blocks(self):
        spec = v2_spec(input_shape=(3, 16, 32, 32), channel_plan=[8, 16], hidden_fc=32, num_classes=5)
        self.assertEqual(count_kinds(spec, "conv"), 2)
        self.assertEqual(feature_shape(spec), (16, 4, 3, 2))

    def test_long_channel_plan_rejected(self):
        with self.assertRaises(ConfigurationError):
            v2_spec(channel_plan=[4] * 6)

    def test_input_too_small_names_the_layer(self):
        with self.assertRaises(ConfigurationError) as ctx:
            infer_shapes(v2_spec(input_shape=(3, 8, 12, 12)))
        self.assertEqual(ctx.exception.layer_index, 4)

    def test_single_class_rejected(self):
        with self.assertRaises(ConfigurationError):
            v2_spec(num_classes=1)

    def test_even_kernel_rejected(self):
        with self.assertRaises(ConfigurationError):
            LayerSpec("conv", kernel=(3, 4, 3), channels_out=2)

    def test_description_text_round_trip(self):
        spec = v1_spec(channel_plan=[4, 8], num_classes=3, hidden_fc=7)
        again = NetworkSpec.from_text(spec.to_text())
        self.assertEqual(again, spec)


def tiny_v2(seed=0, dtype=np.float32, num_classes=21):
    return build_v2(input_shape=(3, 8, 12, 16), channel_plan=[2, 4], num_classes=num_classes,
                    seed=seed, hidden_fc=6, dtype=dtype)


def tiny_v1(seed=0, dtype=np.float32):
    return build_v1(input_shape=(2, 8, 12, 12), channel_plan=[2, 3], num_classes=3,
                    seed=seed, hidden_fc=5, dtype=dtype)


class ModelForwardTests(SimpleTestCase):
    def test_zero_input_gives_finite_logits(self):
        model = tiny_v2()
        logits = model_forward(model, np.zeros((1, 3, 8, 12, 16), dtype=np.float32))
        self.assertEqual(logits.shape, (1, 21))
        self.assertTrue(np.all(np.isfinite(logits.data)))

    def test_duplicated_sample_gives_identical_rows(self):
        model = tiny_v2(seed=1)
        sample = np.random.default_rng(2).uniform(size=(1, 3, 8, 12, 16))
        logits = model_forward(model, np.concatenate([sample, sample]))
        np.testing.assert_array_equal(logits.data[0], logits.data[1])

    def test_repeated_forward_is_bit_stable(self):
        model = tiny_v2(seed=3)
        batch = np.random.default_rng(4).uniform(size=(2, 3, 8, 12, 16))
        first = model_forward(model, batch).data
        second = model_forward(model, batch).data
        self.assertEqual(first.tobytes(), second.tobytes())

    def test_float32_matches_float64_oracle(self):
        model = tiny_v2(seed=5)
        batch = np.random.default_rng(6).uniform(size=(1, 3, 8, 12, 16))
        single = model_forward(model, batch).data
        double = model_forward(model.astype(np.float64), batch).data
        np.testing.assert_allclose(single, double, rtol=1e-4, atol=1e-5)

    def test_batch_shape_mismatch(self):
        with self.assertRaises(DimensionError):
            model_forward(tiny_v2(), np.zeros((1, 3, 8, 12, 12)))

    def test_recording_requires_a_tape(self):
        with self.assertRaises(StateError):
            model_forward(tiny_v2(), np.zeros((1, 3, 8, 12, 16)), record_tape=True)

    def test_forward_without_flag_records_nothing(self):
        model = tiny_v2()
        with Tape() as tape:
            model_forward(model, np.zeros((1, 3, 8, 12, 16)))
        self.assertEqual(tape.nodes, [])

    def test_seed_fixes_initialisation(self):
        self.assertEqual(tiny_v2(seed=9).fingerprint(), tiny_v2(seed=9).fingerprint())
        self.assertNotEqual(tiny_v2(seed=9).fingerprint(), tiny_v2(seed=10).fingerprint())

    def test_end_to_end_gradient_check(self):
        model = tiny_v1(dtype=np.float64)
        batch = np.random.default_rng(7).uniform(size=(1, 2, 8, 12, 12))

        def loss():
            return cross_entropy_loss(model.forward(batch), [1])

        self.assertLess(gradient_check(loss, model.params, samples=6), 1e-4)


class CheckpointTests(SimpleTestCase):
    def setUp(self):
        self.tmp = tempfile.TemporaryDirectory()
        self.path = Path(self.tmp.name) / "best.stck"

    def tearDown(self):
        self.tmp.cleanup()

    def test_round_trip_is_bit_exact(self):
        model = tiny_v2(seed=11)
        save_checkpoint(model, self.path)
        loaded = load_checkpoint(self.path)
        self.assertEqual(loaded.spec, model.spec)
        for original, restored in zip(model.params, loaded.params):
            self.assertEqual(original.data.tobytes(), restored.data.tobytes())
        self.assertEqual(encode_checkpoint(loaded), self.path.read_bytes())

    def test_corrupt_magic(self):
        payload = bytearray(encode_checkpoint(tiny_v2()))
        payload[0:4] = b"XXXX"
        self.path.write_bytes(bytes(payload))
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_truncated_payload(self):
        self.path.write_bytes(encode_checkpoint(tiny_v2())[:-3])
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_trailing_bytes(self):
        self.path.write_bytes(encode_checkpoint(tiny_v2()) + b"\0\0\0\0")
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)

    def test_v1_where_v2_expected(self):
        save_checkpoint(tiny_v1(), self.path)
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path, expected="v2")
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path, expected=tiny_v2().spec)

    def test_version_mismatch(self):
        payload = bytearray(encode_checkpoint(tiny_v2()))
        payload[4] = 9
        self.path.write_bytes(bytes(payload))
        with self.assertRaises(CheckpointError):
            load_checkpoint(self.path)
