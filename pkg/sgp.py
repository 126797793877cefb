#!/usr/bin/env python
import sys

from score_guided_planning.cli import main

if __name__ == "__main__":
    sys.exit(main())
