"""
Django base settings for strokebench.

These settings are shared across all environments.
"""

from pathlib import Path

from decouple import config

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent.parent


# =============================================================================
# CORE SETTINGS
# =============================================================================

SECRET_KEY = config("SECRET_KEY", default="django-insecure-strokebench-batch-jobs")

DEBUG = config("DEBUG", default=False, cast=bool)

ALLOWED_HOSTS = []


# =============================================================================
# APPLICATION DEFINITION
# =============================================================================

DJANGO_APPS = []

LOCAL_APPS = [
    "apps.core",
    "apps.numeric",
    "apps.zoo",
    "apps.dataset",
    "apps.training",
    "apps.detection",
    "apps.evaluation",
    "apps.experiments",
]

INSTALLED_APPS = DJANGO_APPS + LOCAL_APPS


# =============================================================================
# DATABASE - batch jobs keep everything on the filesystem
# =============================================================================

DATABASES = {}


# =============================================================================
# INTERNATIONALIZATION
# =============================================================================

LANGUAGE_CODE = "en-us"

TIME_ZONE = config("TIME_ZONE", default="UTC")

USE_I18N = False

USE_TZ = True


# =============================================================================
# DEFAULT PRIMARY KEY
# =============================================================================

DEFAULT_AUTO_FIELD = "django.db.models.BigAutoField"


# =============================================================================
# EXECUTION
# =============================================================================

# Worker cap for window scoring (0 = one worker per CPU)
STROKEBENCH_THREADS = config("STROKEBENCH_THREADS", default=0, cast=int)

# Single worker, fixed reduction order
STROKEBENCH_DETERMINISTIC = config("STROKEBENCH_DETERMINISTIC", default=True, cast=bool)

# Windows per forward pass during sliding-window inference
STROKEBENCH_INFERENCE_BATCH = config("STROKEBENCH_INFERENCE_BATCH", default=32, cast=int)

STROKEBENCH_LOG_LEVEL = config("STROKEBENCH_LOG_LEVEL", default="INFO")


# =============================================================================
# PIPELINE DEFAULTS
# =============================================================================

# Every run manifest and report carries this label next to mAP/IoU values
METRIC_CONVENTIONS = (
    "internal conventions: one-to-one greedy matching at temporal IoU >= threshold, "
    "all-point interpolated AP, global IoU = per-video union-of-frames IoU averaged over videos"
)
