"""Dataset label-id mapping, shipped as an editable JSON data file."""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path
from typing import Dict, Optional

DEFAULT_TABLE = "nyu40_labels.json"


def load_label_map(path: Optional[Path] = None) -> Dict[str, str]:
    """Map from stringified numeric label ids to text labels.

    Without an explicit path, the packaged nyu40-style table is used.
    """
    if path is not None:
        return json.loads(Path(path).read_text())
    with resources.files("vog_ingest.data").joinpath(DEFAULT_TABLE).open() as handle:
        return json.load(handle)
