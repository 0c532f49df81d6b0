"""
Archetype matching for dynamical systems.

Fits a learned diffeomorphism that carries a simple attractor archetype
(ring, limit cycle, fixed point, bistable, bounded line attractor) onto the
trajectories of a target system and reports how well it fits and how much
the map had to bend to get there.
"""

from __future__ import annotations

__version__ = "0.1.0"

__all__ = ["__version__"]
