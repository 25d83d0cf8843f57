"""Loading tracker configurations from dataset profiles and JSON files.

Profiles are data, not code: one JSON file per benchmark carrying that
benchmark's association hyper-parameters. Unknown keys are rejected so a
typo cannot silently fall back to a default.
"""

from __future__ import annotations

import dataclasses
import json
from importlib import resources

from .tracker import MergeConfig, TrackerConfig

__all__ = ["PROFILE_NAMES", "load_profile", "config_from_dict"]

PROFILE_NAMES = ("mot17", "mot20", "dancetrack", "bdd100k", "waymo", "tao")

_VALID_KEYS = {f.name for f in dataclasses.fields(TrackerConfig)}
_MERGE_KEYS = {f.name for f in dataclasses.fields(MergeConfig)}


def config_from_dict(data: dict) -> TrackerConfig:
    """Build a TrackerConfig from a plain dict, rejecting unknown keys."""
    unknown = set(data) - _VALID_KEYS
    if unknown:
        raise ValueError(f"unknown tracker config keys: {sorted(unknown)}")
    data = dict(data)
    merge = data.get("merge")
    if merge is not None:
        unknown = set(merge) - _MERGE_KEYS
        if unknown:
            raise ValueError(f"unknown merge config keys: {sorted(unknown)}")
        data["merge"] = MergeConfig(**merge)
    return TrackerConfig(**data)


def load_profile(name: str) -> TrackerConfig:
    """Load a benchmark profile by name."""
    if name not in PROFILE_NAMES:
        raise ValueError(
            f"unknown profile {name!r}; available: {', '.join(PROFILE_NAMES)}"
        )
    text = resources.files("embedtrack.profiles").joinpath(f"{name}.json").read_text()
    return config_from_dict(json.loads(text))
