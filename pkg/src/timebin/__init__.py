"""Time-bin entanglement pipeline: simulation, coincidences, tomography, metrics, mode overlap."""
__version__ = "0.1.0"
