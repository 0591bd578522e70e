#!/usr/bin/env python3
"""
Simple run script for curvesurvey.
Runs the command line interface without installing the package.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

from src.main import main

if __name__ == "__main__":
    sys.exit(main())
