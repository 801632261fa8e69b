"""System identification of a generator's terminal response from simulated telemetry."""

__version__ = "0.1.0"
