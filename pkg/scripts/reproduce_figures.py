#!/usr/bin/env python3
"""Write the full-power and cross-correlation curves for the reference set.

Equivalent to ``vcselnoise reproduce-figures``; extra arguments are passed
through (e.g. ``--out-dir figs``).
"""
import sys

from vcselnoise.cli import main

if __name__ == "__main__":
    sys.exit(main(["reproduce-figures", *sys.argv[1:]]))
