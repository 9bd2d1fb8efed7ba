"""HTTP service wrapping the simulator: scenario/rate/solve endpoints plus
background experiment jobs whose output files are byte-identical to a local
run."""

from .app import create_app

__all__ = ["create_app"]
