"""dashlab: attribution stability laboratory for boosted tree ensembles."""

__version__ = "0.1.0"
