import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from apps.core.exceptions import ConfigurationError
from apps.dataset.clips import ClipDataset, ClipItem, LoadedVideo, load_split
from apps.dataset.labels import LabelMap
from apps.dataset.rawvideo import RawVideo
from apps.dataset.synth import SynthConfig, synth_dataset
from apps.training.services import (
    DivergenceError,
    TrainConfig,
    TrainState,
    evaluate_split,
    lr_plateau_step,
    read_stats,
    train,
    write_stats,
)
from apps.zoo.networks import build_v2


def noise_dataset(labels, frames=40, seed=0):
    rng = np.random.default_rng(seed)
    video = RawVideo.from_frames(rng.integers(0, 256, (frames, 8, 8, 3), dtype=np.uint8))
    items = [ClipItem("noise", 4 * i, 4 * i + 7, label) for i, label in enumerate(labels)]
    return ClipDataset([LoadedVideo("noise", video, [])], items, clip_length=8)


def tiny_model(seed=0, num_classes=3):
    return build_v2(input_shape=(3, 8, 8, 8), channel_plan=[2], num_classes=num_classes, seed=seed, hidden_fc=4)


class PoisonedClips(ClipDataset):
    """Clips whose pixels are all NaN."""

    def batch(self, indices, rng=None):
        clips, targets = super().batch(indices, rng)
        return np.full_like(clips, np.nan), targets


def poisoned_dataset(labels):
    clean = noise_dataset(labels)
    return PoisonedClips([LoadedVideo("noise", clean.videos["noise"], [])], clean.items, clip_length=8)


class PlateauTests(SimpleTestCase):
    config = TrainConfig()

    def test_improving_losses_keep_lr(self):
        state = TrainState(model=None, lr=1e-4)
        for loss in np.linspace(10, 1, 300):
            self.assertEqual(lr_plateau_step(state, loss, self.config), 1e-4)

    def test_fifty_flat_epochs_halve_lr_once(self):
        state = TrainState(model=None, lr=1e-4)
        lr_plateau_step(state, 1.0, self.config)
        rates = [lr_plateau_step(state, 1.0, self.config) for _ in range(50)]
        self.assertEqual(rates[:49], [1e-4] * 49)
        self.assertEqual(rates[49], 5e-5)
        self.assertEqual(state.epochs_since_improvement, 0)

    def test_tiny_improvements_do_not_count(self):
        state = TrainState(model=None, lr=1e-4)
        lr_plateau_step(state, 1.0, self.config)
        for step in range(1, 51):
            lr_plateau_step(state, 1.0 - step * 1e-8, self.config)
        self.assertEqual(state.lr, 5e-5)

    def test_lr_floor(self):
        state = TrainState(model=None, lr=1e-6)
        lr_plateau_step(state, 1.0, self.config)
        for _ in range(200):
            self.assertEqual(lr_plateau_step(state, 2.0, self.config), 1e-6)


class TrainConfigTests(SimpleTestCase):
    def test_defaults(self):
        config = TrainConfig()
        self.assertEqual((config.epochs, config.lr, config.momentum, config.weight_decay), (2000, 1e-4, 0.5, 0.005))

    def test_invalid_values(self):
        for kwargs in ({"epochs": -1}, {"lr": 0}, {"plateau_factor": 1.0}, {"batch_size": 0}):
            with self.assertRaises(ConfigurationError):
                TrainConfig(**kwargs)


class EvaluateSplitTests(SimpleTestCase):
    def test_uniform_logits_give_log_classes(self):
        model = tiny_model()
        for param in model.params:
            param.data[...] = 0
        loss, _ = evaluate_split(model, noise_dataset([0, 1, 2, 1]))
        self.assertAlmostEqual(loss, math.log(3), places=5)

    def test_perfect_predictor(self):
        model = tiny_model()
        for param in model.params:
            param.data[...] = 0
        model.params[-1].data[2] = 10.0
        _, accuracy = evaluate_split(model, noise_dataset([2, 2, 2]))
        self.assertEqual(accuracy, 1.0)

    def test_duplicated_split_and_no_side_effects(self):
        model = tiny_model(seed=4)
        fingerprint = model.fingerprint()
        single = evaluate_split(model, noise_dataset([0, 1, 2]), batch_size=16)
        doubled = noise_dataset([0, 1, 2])
        doubled.items = doubled.items * 2
        double = evaluate_split(model, doubled, batch_size=16)
        self.assertAlmostEqual(single[0], double[0], places=5)
        self.assertEqual(single[1], double[1])
        self.assertEqual(model.fingerprint(), fingerprint)

    def test_empty_split(self):
        with self.assertRaises(ConfigurationError):
            evaluate_split(tiny_model(), noise_dataset([]))


class TrainLoopTests(SimpleTestCase):
    def test_zero_epochs_is_a_no_op(self):
        model = tiny_model()
        fingerprint = model.fingerprint()
        best, stats = train(model, noise_dataset([0, 1]), noise_dataset([2]), TrainConfig(epochs=0))
        self.assertIs(best, model)
        self.assertEqual(stats, [])
        self.assertEqual(model.fingerprint(), fingerprint)

    def test_empty_split_rejected(self):
        with self.assertRaises(ConfigurationError):
            train(tiny_model(), noise_dataset([]), noise_dataset([1]), TrainConfig(epochs=1))

    def test_non_finite_parameters_diverge(self):
        model = tiny_model()
        model.params[0].data[...] = np.nan
        with self.assertRaises(DivergenceError) as ctx:
            train(model, noise_dataset([0, 1]), noise_dataset([2]), TrainConfig(epochs=3))
        self.assertEqual(ctx.exception.epoch, 0)

    def test_divergence_seen_first_in_validation(self):
        with self.assertRaises(DivergenceError) as ctx:
            train(tiny_model(), noise_dataset([0, 1]), poisoned_dataset([2]), TrainConfig(epochs=3))
        self.assertEqual(ctx.exception.epoch, 0)
        self.assertIn("epoch 0", str(ctx.exception))

    def test_seeded_runs_are_bit_identical(self):
        config = TrainConfig(epochs=3, lr=1e-2, batch_size=2, seed=5)
        runs = []
        for _ in range(2):
            best, stats = train(tiny_model(seed=1), noise_dataset([0, 1, 2, 0]), noise_dataset([1, 2]), config)
            runs.append((best.fingerprint(), stats))
        self.assertEqual(runs[0], runs[1])

    def test_lr_is_non_increasing_and_floored(self):
        config = TrainConfig(epochs=6, lr=1e-2, batch_size=2, plateau_patience=1, min_lr=3e-3)
        _, stats = train(tiny_model(), noise_dataset([0, 1, 2]), noise_dataset([1]), config)
        rates = [s.lr for s in stats]
        self.assertTrue(all(a >= b for a, b in zip(rates, rates[1:])))
        self.assertTrue(all(rate >= 3e-3 for rate in rates))

    def test_stats_csv_round_trip(self):
        config = TrainConfig(epochs=2, lr=1e-2, batch_size=2)
        with tempfile.TemporaryDirectory() as tmp:
            path = Path(tmp) / "stats.csv"
            _, stats = train(tiny_model(), noise_dataset([0, 1]), noise_dataset([2]), config, stats_path=path)
            self.assertEqual(path.read_text().splitlines()[0], "epoch,train_loss,train_acc,val_loss,val_acc,lr")
            again = read_stats(write_stats(stats, path))
        for original, restored in zip(stats, again):
            self.assertEqual(original.epoch, restored.epoch)
            self.assertAlmostEqual(original.val_loss, restored.val_loss, delta=1e-8 * max(1.0, original.val_loss))


class OverfitTests(SimpleTestCase):
    """A tiny V2-style network memorises 40 synthetic clips."""

    def test_overfits_forty_clips(self):
        config = SynthConfig(num_classes=5, train_videos=10, validation_videos=2, test_videos=0,
                             width=32, height=32, strokes_per_video=4, noise=8, seed=3)
        with tempfile.TemporaryDirectory() as tmp:
            manifest = synth_dataset(config, tmp)
            train_videos = load_split(manifest, "train", resize_width=32)
            validation_videos = load_split(manifest, "validation", resize_width=32)

        labels = LabelMap.classification(config.class_names())
        train_set = ClipDataset.from_videos(train_videos, labels, clip_length=16, jitter=2)
        validation_set = ClipDataset.from_videos(validation_videos, labels, clip_length=16)
        self.assertEqual(len(train_set), 40)

        model = build_v2(input_shape=(3, 16, 32, 32), channel_plan=[8, 16], num_classes=len(labels),
                         seed=0, hidden_fc=32)
        train_config = TrainConfig(epochs=200, lr=1e-3, momentum=0.9, weight_decay=0.0, batch_size=8, seed=0)
        best, stats = train(model, train_set, validation_set, train_config)

        self.assertGreaterEqual(max(s.train_acc for s in stats), 0.95)
        best_loss, _ = evaluate_split(best, validation_set, train_config.batch_size)
        self.assertEqual(best_loss, min(s.val_loss for s in stats))
