"""Configuration files and output storage"""
from app.storage.config_file import (
    config_digest,
    config_from_dict,
    dump_config,
    list_presets,
    load_preset,
    parse_config,
    resolve_config,
)
from app.storage.layout import OutputLayout, RunManifest, read_manifest

__all__ = [
    "config_digest",
    "config_from_dict",
    "dump_config",
    "list_presets",
    "load_preset",
    "parse_config",
    "resolve_config",
    "OutputLayout",
    "RunManifest",
    "read_manifest",
]
