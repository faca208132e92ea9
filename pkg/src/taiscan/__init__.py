"""TAI Scan Tool: two-stage AI Act compliance self-assessment.

A deterministic pre-screening rule engine plus a retrieval-augmented
assessment pipeline over the AI Act text, exposed as a library, a CLI
and a REST service.
"""

from importlib import resources
from pathlib import Path

__version__ = "0.1.0"


def data_path(*parts: str) -> Path:
    """Path to a bundled data file (corpus text, catalogs, templates, fixtures)."""
    return Path(resources.files("taiscan").joinpath("data", *parts))
