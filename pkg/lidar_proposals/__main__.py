from __future__ import annotations

import sys

from lidar_proposals.cli import main

if __name__ == "__main__":
    sys.exit(main())
