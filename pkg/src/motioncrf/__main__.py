"""Run the command line with ``python -m motioncrf``."""

from .cli import run

run()
