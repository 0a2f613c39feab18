"""Flat ``section.key = value`` configuration files.

Grammar, one assignment per line::

    # comment (also allowed after a value)
    attack.radius = 0.1
    rejection.thresholds = [0.9, 0.95, 0.99]
    data.generator = two_moons

Values are Python literals (numbers, booleans, quoted strings, lists); any
other text is taken as a bare string.  ``true``/``false`` are accepted.
"""

from __future__ import annotations

import ast
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

_LINE = re.compile(r"^\s*([A-Za-z_][\w-]*)\.([A-Za-z_][\w-]*)\s*=\s*(.*?)\s*$")
_BARE = {"true": True, "false": False, "none": None}


class ConfigError(ValueError):
    pass


def _strip_comment(line: str) -> str:
    out, quote = [], None
    for ch in line:
        if quote:
            if ch == quote:
                quote = None
        elif ch in "'\"":
            quote = ch
        elif ch == "#":
            break
        out.append(ch)
    return "".join(out)


def parse_value(text: str):
    if text.lower() in _BARE:
        return _BARE[text.lower()]
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_config(text: str, source: str = "<config>") -> dict:
    """``{section: {key: value}}``; later assignments override earlier ones."""
    sections: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw).strip()
        if not line:
            continue
        m = _LINE.match(line)
        if not m:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value', got {raw.strip()!r}")
        section, key, value = m.groups()
        if value == "":
            raise ConfigError(f"{source}:{lineno}: missing value for {section}.{key}")
        sections.setdefault(section.replace("-", "_"), {})[key.replace("-", "_")] = parse_value(value)
    return sections


def load_config(path) -> dict:
    path = Path(path)
    return parse_config(path.read_text(), str(path))


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated view of the experiment-level settings in a config file."""

    generator: Optional[str] = "two_moons"
    n: int = 200
    noise: float = 0.05
    data_seed: int = 0
    data_path: Optional[str] = None
    models: tuple = ()
    attack: dict = field(default_factory=dict)
    embed: dict = field(default_factory=dict)
    thresholds: tuple = (0.9, 0.95, 0.99)
    separation: dict = field(default_factory=dict)
    out_dir: str = "report"
    seed: int = 0

    def __post_init__(self):
        for p in ([self.data_path] if self.data_path else []) + list(self.models):
            if not Path(p).exists():
                raise ConfigError(f"referenced file does not exist: {p}")
        for name, sec in (("attack", self.attack), ("embed", self.embed), ("separation", self.separation)):
            for key in ("radius", "xi", "delta", "eta"):
                v = sec.get(key)
                if v is not None and (not isinstance(v, (int, float)) or v < 0):
                    raise ConfigError(f"{name}.{key} must be a nonnegative number, got {v!r}")
        for t in self.thresholds:
            if not isinstance(t, (int, float)) or not 0.0 < t < 1.0:
                raise ConfigError(f"threshold {t!r} outside (0, 1)")

    @classmethod
    def from_sections(cls, sections: dict) -> "ExperimentConfig":
        data = sections.get("data", {})
        models = sections.get("model", {}).get("paths", sections.get("model", {}).get("path", ()))
        if isinstance(models, str):
            models = (models,)
        thresholds = sections.get("rejection", {}).get("thresholds", cls.thresholds)
        if isinstance(thresholds, (int, float)):
            thresholds = (thresholds,)
        return cls(
            generator=data.get("generator", cls.generator),
            n=data.get("n", cls.n),
            noise=data.get("noise", cls.noise),
            data_seed=data.get("seed", cls.data_seed),
            data_path=data.get("path"),
            models=tuple(models),
            attack=dict(sections.get("attack", {})),
            embed=dict(sections.get("embed", {})),
            thresholds=tuple(thresholds),
            separation=dict(sections.get("separation", {})),
            out_dir=sections.get("output", {}).get("dir", cls.out_dir),
            seed=sections.get("global", {}).get("seed", cls.seed),
        )
