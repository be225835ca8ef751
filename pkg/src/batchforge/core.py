"""Shared domain types, configuration validation, and the strategy registry.

Everything here is immutable after construction. Validation never raises on
bad field values while building a config; :func:`validate_config` returns
the complete violation list so callers (and the CLI) can report every
problem at once.
"""

from __future__ import annotations

from dataclasses import dataclass, fields, replace
from enum import Enum
from typing import Callable, Iterable, Mapping

_MAX_SEED = (1 << 64) - 1


class Strategy(str, Enum):
    """Batch scheduling strategies."""

    SSC_FBS = "ssc_fbs"  # single scale, fixed batch
    MSC_FBS = "msc_fbs"  # multi scale, fixed batch
    MSC_VBS = "msc_vbs"  # multi scale, variable batch
    VIDEO_VBS = "video_vbs"  # variably-sized video clips

    @classmethod
    def parse(cls, text: str) -> "Strategy":
        try:
            return cls(text.strip().lower())
        except ValueError:
            known = ", ".join(s.value for s in cls)
            raise ValueError(f"unknown strategy {text!r} (known: {known})") from None


class BatchRounding(str, Enum):
    """How a rescaled batch size is snapped to an integer."""

    FLOOR = "floor"
    NEAREST = "nearest"
    MULTIPLE_OF_WORLD = "multiple_of_world"

    @classmethod
    def parse(cls, text: str) -> "BatchRounding":
        try:
            return cls(text.strip().lower())
        except ValueError:
            known = ", ".join(r.value for r in cls)
            raise ValueError(f"unknown batch_rounding {text!r} (known: {known})") from None


@dataclass(frozen=True, order=True)
class Resolution:
    """A spatial size in pixels."""

    height: int
    width: int

    def pixel_count(self) -> int:
        return self.height * self.width

    def __str__(self) -> str:
        return f"{self.height}x{self.width}"

    @classmethod
    def parse(cls, text: str) -> "Resolution":
        """Parse '224x224' (or bare '224' for a square)."""
        text = text.strip().lower()
        if "x" in text:
            h, _, w = text.partition("x")
            return cls(int(h), int(w))
        side = int(text)
        return cls(side, side)


@dataclass(frozen=True)
class ResolutionSet:
    """Ordered collection of resolutions, ascending by pixel count."""

    entries: tuple[Resolution, ...]

    def __init__(self, entries: Iterable[Resolution]):
        object.__setattr__(self, "entries", tuple(entries))

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)

    def __getitem__(self, index: int) -> Resolution:
        return self.entries[index]

    def max(self) -> Resolution:
        return self.entries[-1]

    def index_of(self, resolution: Resolution) -> int:
        return self.entries.index(resolution)

    def is_sorted(self) -> bool:
        counts = [r.pixel_count() for r in self.entries]
        return all(a < b for a, b in zip(counts, counts[1:]))

    @classmethod
    def squares(cls, sides: Iterable[int]) -> "ResolutionSet":
        return cls(Resolution(s, s) for s in sides)

    @classmethod
    def parse(cls, text: str) -> "ResolutionSet":
        return cls(Resolution.parse(part) for part in text.split(",") if part.strip())

    def __str__(self) -> str:
        return ",".join(str(r) for r in self.entries)


@dataclass(frozen=True)
class SamplerConfig:
    """Everything a planner needs to emit a deterministic schedule.

    ``base_batch`` is the per-replica batch at ``base_resolution``; one
    iteration of the global schedule consumes ``base_batch * world_size``
    sample ids, which :func:`batchforge.samplers.shard_for_rank` then
    splits evenly across ranks.
    """

    strategy: Strategy
    dataset_size: int
    base_batch: int
    base_resolution: Resolution
    resolutions: ResolutionSet
    epochs: int
    world_size: int = 1
    seed: int = 0
    drop_last: bool = True
    batch_rounding: BatchRounding = BatchRounding.MULTIPLE_OF_WORLD
    min_batch: int | None = None

    def __post_init__(self):
        if self.min_batch is None:
            object.__setattr__(self, "min_batch", self.world_size)

    def with_strategy(self, strategy: Strategy) -> "SamplerConfig":
        return replace(self, strategy=strategy)

    def effective_batch(self) -> int:
        """Global ids consumed per iteration at the base resolution."""
        return self.base_batch * self.world_size


@dataclass(frozen=True)
class ConfigViolation:
    code: str
    message: str

    def __str__(self) -> str:
        return f"{self.code}: {self.message}"


class ConfigValidationError(ValueError):
    """Raised by ensure_valid; carries the full violation list."""

    def __init__(self, violations: list[ConfigViolation]):
        super().__init__("; ".join(str(v) for v in violations))
        self.violations = violations

    @property
    def codes(self) -> list[str]:
        return [v.code for v in self.violations]


def validate_config(config: SamplerConfig) -> list[ConfigViolation]:
    """Check every SamplerConfig invariant; return all violations found."""
    bad = []

    def flag(code: str, message: str):
        bad.append(ConfigViolation(code, message))

    for res in (config.base_resolution, *config.resolutions):
        if res.height < 1 or res.width < 1:
            flag("NONPOSITIVE_RESOLUTION", f"resolution {res} has a dimension < 1")

    if len(config.resolutions) == 0:
        flag("EMPTY_RESOLUTION_SET", "resolutions must contain at least one entry")
    elif not config.resolutions.is_sorted():
        flag(
            "UNSORTED_RESOLUTIONS",
            "resolutions must be strictly ascending by pixel count with no duplicates",
        )

    if (
        config.strategy is not Strategy.VIDEO_VBS
        and len(config.resolutions) > 0
        and config.base_resolution not in config.resolutions.entries
    ):
        flag(
            "BASE_RES_NOT_IN_SET",
            f"base resolution {config.base_resolution} is not in the resolution set",
        )

    if config.base_batch < 1 or (config.min_batch or 0) < 1:
        flag("ZERO_BATCH", "base_batch and min_batch must be >= 1")
    elif config.world_size >= 1 and config.effective_batch() < config.min_batch:
        flag(
            "BATCH_BELOW_MIN",
            f"effective batch {config.effective_batch()} < min_batch {config.min_batch}",
        )

    if config.epochs < 1:
        flag("ZERO_EPOCHS", "epochs must be >= 1")
    if config.world_size < 1:
        flag("ZERO_WORLD", "world_size must be >= 1")
    if not (0 <= config.seed <= _MAX_SEED):
        flag("SEED_OUT_OF_RANGE", "seed must fit in 64 unsigned bits")

    if config.dataset_size < 1:
        flag("DATASET_TOO_SMALL", "dataset_size must be >= 1")
    elif config.drop_last and config.world_size >= 1 and config.dataset_size < config.effective_batch():
        flag(
            "DATASET_TOO_SMALL",
            f"dataset_size {config.dataset_size} < one full iteration "
            f"({config.base_batch} x {config.world_size}) with drop_last",
        )

    return bad


def ensure_valid(config: SamplerConfig) -> SamplerConfig:
    """Return the config unchanged, or raise with the full violation list."""
    violations = validate_config(config)
    if violations:
        raise ConfigValidationError(violations)
    return config


class RegistryError(KeyError):
    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code


class Registry:
    """Named component registry; duplicate names are rejected."""

    def __init__(self, kind: str = "component"):
        self._kind = kind
        self._entries: dict[str, Callable] = {}

    def register(self, name: str, factory: Callable) -> Callable:
        if not name:
            raise RegistryError("EMPTY_NAME", f"{self._kind} name must be non-empty")
        if name in self._entries:
            raise RegistryError("DUPLICATE_NAME", f"{self._kind} {name!r} already registered")
        self._entries[name] = factory
        return factory

    def lookup(self, name: str) -> Callable:
        try:
            return self._entries[name]
        except KeyError:
            known = ", ".join(sorted(self._entries)) or "<none>"
            raise RegistryError(
                "UNKNOWN_NAME", f"no {self._kind} named {name!r} (known: {known})"
            ) from None

    def names(self) -> list[str]:
        return sorted(self._entries)


STRATEGIES = Registry("strategy")


def register_strategy(name: str, factory: Callable) -> Callable:
    return STRATEGIES.register(name, factory)


def lookup_strategy(name: str) -> Callable:
    return STRATEGIES.lookup(name)


# --- flat key/value config files ----------------------------------------

_BOOL_TRUE = {"1", "true", "yes", "on"}
_BOOL_FALSE = {"0", "false", "no", "off"}


def parse_flat_config(text: str) -> dict[str, str]:
    """Parse `key = value` lines; '#' starts a comment."""
    mapping: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        mapping[key.strip()] = value.strip()
    return mapping


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in _BOOL_TRUE:
        return True
    if low in _BOOL_FALSE:
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


_SAMPLER_PARSERS: dict[str, Callable[[str], object]] = {
    "strategy": Strategy.parse,
    "dataset_size": int,
    "base_batch": int,
    "base_resolution": Resolution.parse,
    "resolutions": ResolutionSet.parse,
    "epochs": int,
    "world_size": int,
    "seed": int,
    "drop_last": _parse_bool,
    "batch_rounding": BatchRounding.parse,
    "min_batch": int,
}


def sampler_config_from_mapping(
    mapping: Mapping[str, str], base: SamplerConfig | None = None
) -> SamplerConfig:
    """Build a SamplerConfig from flat string keys, over optional defaults.

    Keys match the SamplerConfig field names exactly. Unknown sampler-ish
    keys are ignored so a single file can also hold trainer settings.
    """
    kwargs: dict[str, object] = {}
    for key, parser in _SAMPLER_PARSERS.items():
        if key in mapping and mapping[key] is not None:
            kwargs[key] = parser(str(mapping[key]))
    if base is not None:
        return replace(base, **kwargs)
    missing = [k for k in ("strategy", "dataset_size", "base_batch", "base_resolution", "resolutions", "epochs") if k not in kwargs]
    if missing:
        raise ValueError(f"config is missing required keys: {', '.join(missing)}")
    return SamplerConfig(**kwargs)  # type: ignore[arg-type]


def sampler_config_to_mapping(config: SamplerConfig) -> dict[str, object]:
    """Flat representation with keys matching the field names."""
    out: dict[str, object] = {}
    for f in fields(config):
        value = getattr(config, f.name)
        if isinstance(value, (Strategy, BatchRounding)):
            out[f.name] = value.value
        elif isinstance(value, (Resolution, ResolutionSet)):
            out[f.name] = str(value)
        else:
            out[f.name] = value
    return out
