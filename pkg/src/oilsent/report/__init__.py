"""Run configuration, pipeline stages, report bundle and CLI."""

from .bundle import emit_report_bundle
from .pipeline import MissingInputs, run_replay

__all__ = ["emit_report_bundle", "MissingInputs", "run_replay"]
