"""
Entry point for the dashlab command line.
"""
import sys

from dashlab.cli import main

if __name__ == "__main__":
    sys.exit(main())
