"""Flat key-value run configuration (INI sections, unknown keys rejected).

Config values become argparse defaults; explicit command-line flags win.
"""

from __future__ import annotations

import configparser
from pathlib import Path

from .errors import ScreenKitError

KNOWN_KEYS: dict[str, set[str]] = {
    "paths": {
        "corpus", "template", "criteria", "manifest", "sft", "ledger",
        "ratings", "report", "out", "out_dir", "record", "replay",
    },
    "split": {"train_size", "seed", "mode", "enrichment_target"},
    "inference": {
        "endpoint", "model", "temperatures", "max_new_tokens", "majority_class",
        "request_timeout", "max_retries", "concurrency_limit", "greedy",
    },
    "chat": {"user_open", "assistant_open", "turn_close"},
    "bootstrap": {"replicates", "seed", "confidence"},
    "report": {"figures", "ci"},
}


class ConfigError(ScreenKitError):
    """Raised for missing files, unknown sections, or unknown keys."""


def load_run_config(path: str | Path) -> dict[str, dict[str, str]]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as exc:
        raise ConfigError(f"cannot parse config {path}: {exc}") from exc

    config: dict[str, dict[str, str]] = {}
    for section in parser.sections():
        if section not in KNOWN_KEYS:
            raise ConfigError(f"{path}: unknown config section [{section}]")
        config[section] = {}
        for key, value in parser.items(section):
            if key not in KNOWN_KEYS[section]:
                raise ConfigError(f"{path}: unknown key {key!r} in section [{section}]")
            config[section][key] = value
    return config


def unescape(value: str) -> str:
    """Decode backslash escapes so markers like "<|im_end|>\\n" fit on one line."""
    return value.encode("utf-8").decode("unicode_escape")
