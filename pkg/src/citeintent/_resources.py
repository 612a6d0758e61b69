from __future__ import annotations

import json
from functools import lru_cache
from importlib import resources


@lru_cache(maxsize=None)
def load_resource(name: str) -> dict:
    with resources.files("citeintent.resources").joinpath(name).open("r", encoding="utf-8") as fh:
        return json.load(fh)
