"""Plain-text ``key = value`` experiment configuration.

Blank lines and ``#`` comments are ignored.  Keys are the long CLI flag
names with dashes or underscores (``block-size`` and ``block_size`` are the
same key).  Unknown keys are errors so typos in sweep files fail loudly.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


def _int_or_none(v: str):
    return None if v.lower() in ("none", "") else int(v)


# key -> parser; every key is also a CLI flag
KEYS = {
    "bits": str,
    "mapping": str,
    "block_size": int,
    "t1": int,
    "t2": int,
    "T1": int,
    "T2": int,
    "beta": float,
    "eps": float,
    "variant": str,
    "fo": str,
    "lr": float,
    "seed": int,
    "steps": int,
    "out": str,
    "problem": str,
    "batch_size": _int_or_none,
    "eigensolver": str,
    "max_order": int,
    "min_quant_size": int,
}


def normalize_key(key: str) -> str:
    key = key.strip().replace("-", "_")
    if key in KEYS:
        return key
    # interval keys are case sensitive (t1 vs T1); every other key is not
    if key.lower() in KEYS and key.lower() not in ("t1", "t2"):
        return key.lower()
    raise ConfigError(f"unknown config key {key!r}")


def parse_config(text: str, source: str = "<config>") -> dict:
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key = value, got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        try:
            key = normalize_key(key)
        except ConfigError as e:
            raise ConfigError(f"{source}:{lineno}: {e}") from None
        try:
            out[key] = KEYS[key](value)
        except ValueError:
            raise ConfigError(f"{source}:{lineno}: bad value {value!r} for {key}") from None
    return out


def load_config(path) -> dict:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


def merge(file_values: dict, cli_values: dict) -> dict:
    """CLI values override file values; ``None`` on the CLI means "not given"."""
    out = dict(file_values)
    out.update({k: v for k, v in cli_values.items() if v is not None})
    return out
