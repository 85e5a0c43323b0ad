from django.apps import AppConfig


class ZooConfig(AppConfig):
    default_auto_field = "django.db.models.BigAutoField"
    name = "apps.zoo"
    verbose_name = "Network Architectures"
