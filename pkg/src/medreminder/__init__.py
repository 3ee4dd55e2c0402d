"""Medication reminder service: scheduling, multi-channel escalation,
adherence reporting, ingestion, and a deterministic simulation harness."""

__version__ = "0.1.0"
