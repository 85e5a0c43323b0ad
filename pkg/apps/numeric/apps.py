from django.apps import AppConfig


class NumericConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.numeric"
    verbose_name = "Tensor Arithmetic and Autodiff"
