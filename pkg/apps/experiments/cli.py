"""
Shell entry point: `strokebench <subcommand> ...` without going through manage.py.
"""

import os
import sys

COMMAND = "strokebench"


def run_command(argv=None):
    """
    Run one strokebench subcommand and return its exit code.

    0 on success, 1 on a domain error, 2 on a usage error.
    """
    os.environ.setdefault("DJANGO_SETTINGS_MODULE", "config.settings.development")
    from django.core.management import execute_from_command_line

    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        execute_from_command_line([COMMAND, COMMAND, *argv])
    except SystemExit as exc:
        if exc.code is None:
            return 0
        return exc.code if isinstance(exc.code, int) else 1
    return 0


def main():
    sys.exit(run_command())


if __name__ == "__main__":
    main()
