"""Real-time LiDAR object proposals: ground removal, scan clustering, filtering and classification."""

from __future__ import annotations

__version__ = "0.1.0"
