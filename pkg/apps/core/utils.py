"""
Utility functions shared across strokebench apps.
"""

import os
import platform
from importlib import metadata

from django.conf import settings

# Packages recorded in run manifests
MANIFEST_PACKAGES = ("numpy", "Pillow", "Django", "python-decouple", "openpyxl")


def get_setting(name, default):
    """
    Read a strokebench setting, falling back when Django is not configured.

    Args:
        name: Settings attribute name
        default: Value used when the setting (or Django) is unavailable
    """
    if not settings.configured:
        return default
    return getattr(settings, name, default)


def is_deterministic():
    """Whether work must run on one worker in a fixed order."""
    return bool(get_setting("STROKEBENCH_DETERMINISTIC", True))


def get_worker_count():
    """
    Number of workers a parallel stage may use.

    Returns 1 in deterministic mode; otherwise the CPU count, capped by
    STROKEBENCH_THREADS when that is positive.
    """
    if is_deterministic():
        return 1
    cpus = os.cpu_count() or 1
    cap = int(get_setting("STROKEBENCH_THREADS", 0))
    return max(1, min(cpus, cap) if cap > 0 else cpus)


def get_inference_batch_size():
    """Windows per forward pass during sliding-window inference."""
    return max(1, int(get_setting("STROKEBENCH_INFERENCE_BATCH", 32)))


def package_versions():
    """
    Versions of the interpreter and the numeric stack, for run manifests.

    Returns:
        dict mapping package name to version string ("missing" when absent)
    """
    versions = {"python": platform.python_version()}
    for name in MANIFEST_PACKAGES:
        try:
            versions[name] = metadata.version(name)
        except metadata.PackageNotFoundError:
            versions[name] = "missing"
    return versions
