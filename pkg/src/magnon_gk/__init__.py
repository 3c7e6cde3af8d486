"""Event-driven simulator and closed-form toolkit for heat transport in
noisy charged harmonic lattices."""

__version__ = "0.1.0"
