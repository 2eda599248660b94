"""Main entry point for the kkl_tune module."""

import sys

from .cli import cli


def main():
    """Run the CLI; with no arguments, show the help instead of an error."""
    if len(sys.argv) == 1:
        sys.argv.append("--help")
    cli()


if __name__ == "__main__":
    main()
