"""Run ``python -m polylab``."""

from polylab.cli import main

main()
