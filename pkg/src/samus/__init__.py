"""Angles-only multitarget tracking for spacecraft swarms.

Core layers: orbit/frame geometry (frames), relative-orbit dynamics (roe),
bearing motion models (motion), kinematic gating (gating), hypothesis
scoring (scoring), maneuver association (maneuvers), the multi-hypothesis
tracker (tracker), the scenario simulator (simulate), and the Monte-Carlo
evaluation harness (harness). A FastAPI service (samus.service) exposes the
tracker and harness; the samus CLI is a thin client of that service.
"""

__version__ = "0.1.0"
