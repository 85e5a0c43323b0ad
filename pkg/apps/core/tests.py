from django.test import SimpleTestCase, override_settings

from apps.core.exceptions import ConfigurationError, StrokeBenchError, TargetIndexError
from apps.core.utils import get_inference_batch_size, get_worker_count, package_versions


class WorkerSettingsTests(SimpleTestCase):
    @override_settings(STROKEBENCH_DETERMINISTIC=True, STROKEBENCH_THREADS=8)
    def test_deterministic_mode_uses_one_worker(self):
        self.assertEqual(get_worker_count(), 1)

    @override_settings(STROKEBENCH_DETERMINISTIC=False, STROKEBENCH_THREADS=2)
    def test_thread_cap(self):
        self.assertIn(get_worker_count(), (1, 2))

    @override_settings(STROKEBENCH_INFERENCE_BATCH=0)
    def test_batch_size_floor(self):
        self.assertEqual(get_inference_batch_size(), 1)

    def test_package_versions(self):
        versions = package_versions()
        self.assertIn("python", versions)
        self.assertIn("numpy", versions)


class ExceptionTests(SimpleTestCase):
    def test_families(self):
        error = ConfigurationError("bad pool", layer_index=4)
        self.assertIsInstance(error, ValueError)
        self.assertIsInstance(error, StrokeBenchError)
        self.assertEqual(error.layer_index, 4)
        self.assertIsInstance(TargetIndexError("x"), IndexError)
