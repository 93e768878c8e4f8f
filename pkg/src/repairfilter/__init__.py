"""Repair-then-filter tooling for noisy pseudo-parallel corpora."""

__version__ = "0.1.0"
TOOL_VERSION = f"repairfilter {__version__}"
