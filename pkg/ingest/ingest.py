#!/usr/bin/env python3
"""Entry point: ingest.py --manifest manifests/indian_pines.toml"""

import os
import sys

sys.path.insert(0, os.path.join(os.path.dirname(os.path.abspath(__file__)), "src"))

from hsingest.cli import main

if __name__ == "__main__":
    sys.exit(main())
