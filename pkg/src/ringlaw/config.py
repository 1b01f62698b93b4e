"""Run configuration: defaults, YAML config files and command-line overrides."""
from __future__ import annotations

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import yaml

from .errors import ParseError, ValidationError
from .gridsim import SimConfig
from .powermap import MapSpec
from .windows import WindowConfig

THREADS_ENV = "RINGLAW_THREADS"


@dataclass(frozen=True)
class RunConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    sim: SimConfig = field(default_factory=SimConfig)
    map: MapSpec = field(default_factory=lambda: MapSpec(96, 96))
    threads: int = 1

    def section(self, name: str) -> dict:
        """Plain-data view of one section, without runtime-only fields."""
        obj = getattr(self, name)
        d = asdict(obj)
        d.pop("threads", None)
        d.pop("partitions", None)
        if name == "map":
            d.pop("bbox", None)
        return d

    def effective(self, *names) -> dict:
        return {n: self.section(n) for n in names}


def config_hash(data: dict) -> str:
    blob = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _update(obj, values: dict, where: str):
    known = {f.name for f in fields(obj)}
    unknown = set(values) - known
    if unknown:
        raise ValidationError(f"{where}: unknown keys {sorted(unknown)}")
    return replace(obj, **values)


def load_config(path=None) -> RunConfig:
    cfg = RunConfig()
    if path is None:
        return cfg
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except OSError as exc:
        raise ParseError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a mapping")
    unknown = set(data) - {"window", "sim", "map", "threads"}
    if unknown:
        raise ValidationError(f"{path}: unknown sections {sorted(unknown)}")
    return merge(cfg, data, str(path))


def merge(cfg: RunConfig, data: dict, where: str = "flags") -> RunConfig:
    """Overlay nested ``{"window": {...}, "sim": {...}, ...}`` values; None means unset."""
    out = cfg
    for name in ("window", "sim", "map"):
        vals = {k: v for k, v in (data.get(name) or {}).items() if v is not None}
        if vals:
            out = replace(out, **{name: _update(getattr(out, name), vals, f"{where} [{name}]")})
    if data.get("threads") is not None:
        out = replace(out, threads=int(data["threads"]))
    return out


def resolve_threads(flag) -> int:
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            raise ValidationError(f"{THREADS_ENV}={env!r} is not an integer") from None
    return 1
