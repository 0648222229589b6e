#!/usr/bin/env python3
"""Launcher for the refchoice command line."""

import sys

from cli import dispatch
from config import settings
from exceptions import EXIT_VALIDATION


def main():
    """Validate settings, then hand argv to the subcommand dispatcher."""
    try:
        settings.validate_config()
    except ValueError as e:
        print(f"Configuration error: {e}", file=sys.stderr)
        print("Please check your REFCHOICE_* environment variables and .env file", file=sys.stderr)
        sys.exit(EXIT_VALIDATION)

    sys.exit(dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
