"""Trace-driven SSD/HDD tiering laboratory.

Pieces: a job/trace data model, a synthetic workload generator, the
TCO/TCIO cost model, a deterministic placement simulator with spillover
feedback, online placement policies (including the adaptive category
selection algorithm), a clairvoyant branch-and-bound oracle, and a
from-scratch gradient-boosted-trees category model.
"""

__version__ = "0.1.0"

from tierlab.costs import CostRates, effective_io, tcio_total, tco, tco_savings
from tierlab.trace import Job, RawIoProfile, ResourceFeatures, Trace, load_trace, save_trace, validate_trace

__all__ = [
    "CostRates",
    "Job",
    "RawIoProfile",
    "ResourceFeatures",
    "Trace",
    "effective_io",
    "load_trace",
    "save_trace",
    "tcio_total",
    "tco",
    "tco_savings",
    "validate_trace",
]
