"""Main program for the power-flow multi-solution engine."""

import sys

from pfmulti.cli import main


if __name__ == "__main__":
    sys.exit(main())
