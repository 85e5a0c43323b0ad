# Settings module - import from development by default
# For long unattended runs, set DJANGO_SETTINGS_MODULE=config.settings.production
