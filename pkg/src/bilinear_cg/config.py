"""Plain-text experiment configuration.

One ``key = value`` pair per line; ``#`` starts a comment. List values are
written ``[a, b, c]``. Unknown keys are rejected so that a misspelt key
never falls back silently to a default.

Example::

    example = 1
    level = 5
    alpha1 = 1e6
    tol = 1e-5
    snapshot_times = [0.25, 0.5, 0.75]
"""

from __future__ import annotations

import os
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

OUTPUT_DIR_ENV = "BILINEAR_CG_OUTPUT_DIR"
MAX_REFERENCE_LEVEL = 8


class ConfigError(ValueError):
    """Malformed or inconsistent configuration; ``line`` is 1-based when known."""

    def __init__(self, message: str, line: int | None = None, source: str | None = None):
        where = ""
        if source is not None:
            where = f"{source}:{line}: " if line is not None else f"{source}: "
        elif line is not None:
            where = f"line {line}: "
        super().__init__(where + message)
        self.line = line
        self.source = source


class ExperimentConfig(BaseModel):
    """Validated settings for one experiment or a sweep over levels."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    example: int = Field(ge=1, le=2)
    alpha1: float = Field(gt=0)
    tol: float = Field(gt=0, lt=1)
    level: int | None = Field(default=None, ge=2, le=10)
    levels: list[int] | None = None
    dt_power: int | None = Field(default=None, ge=0)
    tol_pcg: float = Field(default=1e-8, gt=0, lt=1)
    max_outer: int = Field(default=2000, ge=1)
    max_inner: int = Field(default=200, ge=1)
    output_dir: str = "results"
    snapshot_times: list[float] = Field(default_factory=list)
    reference_level: int | None = Field(default=None, ge=2, le=10)
    threads: int = Field(default_factory=lambda: os.cpu_count() or 1, ge=1)
    restart_every: int = Field(default=0, ge=0)

    @field_validator("levels")
    @classmethod
    def _levels(cls, v):
        if v is None:
            return v
        if not v:
            raise ValueError("levels must not be empty")
        if any(not 2 <= L <= 10 for L in v):
            raise ValueError("every level must lie in [2, 10]")
        if len(set(v)) != len(v):
            raise ValueError("levels must be distinct")
        return sorted(v)

    @field_validator("snapshot_times")
    @classmethod
    def _times(cls, v):
        if any(not 0.0 <= t <= 1.0 for t in v):
            raise ValueError("snapshot times must lie in [0, 1]")
        return v

    @model_validator(mode="after")
    def _consistent(self):
        if self.level is None and self.levels is None:
            raise ValueError("one of level or levels is required")
        if self.reference_level is not None and self.example != 2:
            raise ValueError("reference_level only applies to example 2")
        finest = self.level if self.level is not None else max(self.levels)
        if self.reference_level is not None and self.reference_level < finest:
            raise ValueError("reference_level must not be coarser than the experiment level")
        return self

    def for_level(self, level: int) -> "ExperimentConfig":
        """Single-level copy used by sweeps (time step tied to ``h / 2``)."""
        return self.model_copy(update={"level": level, "levels": None, "dt_power": level + 1})

    @property
    def effective_dt_power(self) -> int:
        return self.dt_power if self.dt_power is not None else self.level + 1

    @property
    def effective_reference_level(self) -> int:
        if self.reference_level is not None:
            return self.reference_level
        return max(self.level, min(self.level + 2, MAX_REFERENCE_LEVEL))


_LIST_KEYS = {"levels", "snapshot_times"}


def _split_list(raw: str) -> list[str]:
    inner = raw.strip()
    if inner.startswith("[") != inner.endswith("]"):
        raise ValueError("unbalanced brackets")
    inner = inner.strip("[]").strip()
    if not inner:
        return []
    return [item.strip() for item in inner.split(",")]


def parse_config_text(text: str, source: str | None = None) -> dict[str, object]:
    """Raw ``{key: value}`` mapping with the line number of each key recorded."""
    values: dict[str, object] = {}
    lines: dict[str, int] = {}
    known = set(ExperimentConfig.model_fields)
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", no, source)
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError("missing key before '='", no, source)
        if key not in known:
            raise ConfigError(f"unknown key {key!r}", no, source)
        if key in values:
            raise ConfigError(f"duplicate key {key!r} (first set on line {lines[key]})", no, source)
        if not value:
            raise ConfigError(f"missing value for {key!r}", no, source)
        if key in _LIST_KEYS:
            try:
                values[key] = _split_list(value)
            except ValueError as exc:
                raise ConfigError(f"bad list for {key!r}: {exc}", no, source) from None
        else:
            values[key] = value
        lines[key] = no
    values["__lines__"] = lines
    return values


def validate_config(values: dict[str, object], source: str | None = None) -> ExperimentConfig:
    values = dict(values)
    lines = values.pop("__lines__", {})
    try:
        return ExperimentConfig(**values)
    except ValidationError as exc:
        errors = exc.errors()
        missing = [str(e["loc"][0]) for e in errors if e["type"] == "missing"]
        if missing:
            names = ", ".join(repr(k) for k in missing)
            raise ConfigError(f"missing required key {names}", None, source) from None
        err = errors[0]
        key = str(err["loc"][0]) if err["loc"] else None
        msg = err["msg"].removeprefix("Value error, ")
        if key is None:
            raise ConfigError(msg, None, source) from None
        raise ConfigError(f"invalid value for {key!r}: {msg}", lines.get(key), source) from None


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a config file; ``$BILINEAR_CG_OUTPUT_DIR`` wins over ``output_dir``."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc.strerror}", None, str(path)) from None
    cfg = validate_config(parse_config_text(text, str(path)), str(path))
    return apply_env(cfg)


def apply_env(cfg: ExperimentConfig) -> ExperimentConfig:
    override = os.environ.get(OUTPUT_DIR_ENV)
    if override:
        cfg = cfg.model_copy(update={"output_dir": override})
    return cfg
