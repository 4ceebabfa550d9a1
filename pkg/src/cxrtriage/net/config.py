"""Graph and training configuration with desk/full profiles.

The desk profile shrinks every width so the whole test suite runs on a
laptop CPU; the full profile keeps the real-deployment values (512x512
inputs, 128/256 base channels, lr 2e-6, batch 48).
"""

from dataclasses import dataclass, fields, replace
from pathlib import Path

from ..errors import ConfigError


@dataclass(frozen=True)
class GraphConfig:
    """Widths, sizes, and seed for one pyramid classifier graph.

    Field defaults are the deployment-scale values; desk_profile() swaps in
    the laptop-sized set.
    """

    input_size: tuple[int, int] = (512, 512)
    base_channels_a: int = 128
    base_channels_b: int = 256
    pyramid_channels: int = 256
    dilated_block_channels: tuple[int, ...] = (256, 512, 1024)
    groups: int = 16
    dropout_rate: float = 0.2
    sop_channels: int = 128
    seed: int = 0

    def __post_init__(self) -> None:
        h, w = self.input_size
        if h < 16 or w < 16 or h % 16 or w % 16:
            raise ConfigError(
                f"input_size: {self.input_size} must be divisible by 16")
        for name in ("base_channels_a", "base_channels_b", "pyramid_channels",
                     "sop_channels", "groups"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be a positive integer")
        if not self.dilated_block_channels:
            raise ConfigError("dilated_block_channels: at least one block width")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(
                f"dropout_rate: {self.dropout_rate} outside [0, 1)")
        for channels in self.feature_channel_counts():
            if channels % self.groups:
                raise ConfigError(
                    f"groups: channel count {channels} not divisible by "
                    f"{self.groups}")
        # The head pools once per dilated block, starting from the stride-8
        # map, so the input must survive that many halvings.
        head_factor = 8 * 2 ** len(self.dilated_block_channels)
        if h % head_factor or w % head_factor:
            raise ConfigError(
                f"input_size: {self.input_size} must be divisible by "
                f"{head_factor} for {len(self.dilated_block_channels)} "
                "dilated blocks")

    def feature_channel_counts(self) -> tuple[int, ...]:
        """Every feature-map width the graph will materialize."""
        a, b = self.base_channels_a, self.base_channels_b
        counts = [a, 2 * a, 4 * a, b, 2 * b, 4 * b,
                  a + b, 2 * (a + b), 4 * (a + b), self.pyramid_channels]
        counts.extend(self.dilated_block_channels)
        return tuple(counts)

    def to_dict(self) -> dict:
        return {
            "input_size": list(self.input_size),
            "base_channels_a": self.base_channels_a,
            "base_channels_b": self.base_channels_b,
            "pyramid_channels": self.pyramid_channels,
            "dilated_block_channels": list(self.dilated_block_channels),
            "groups": self.groups,
            "dropout_rate": self.dropout_rate,
            "sop_channels": self.sop_channels,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GraphConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"config: unknown key {sorted(unknown)[0]!r}")
        kwargs = dict(data)
        if "input_size" in kwargs:
            kwargs["input_size"] = tuple(kwargs["input_size"])
        if "dilated_block_channels" in kwargs:
            kwargs["dilated_block_channels"] = tuple(
                kwargs["dilated_block_channels"])
        return cls(**kwargs)


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer and loop settings for one training run."""

    learning_rate: float = 1e-3
    batch_size: int = 16
    epochs: int = 20

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate: must be positive")
        if self.batch_size < 1:
            raise ConfigError("batch_size: must be a positive integer")
        if self.epochs < 0:
            raise ConfigError("epochs: must be non-negative")


@dataclass(frozen=True)
class Profile:
    """A named (graph, training) default bundle."""

    name: str
    graph: GraphConfig
    train: TrainConfig


def desk_profile(seed: int = 0) -> Profile:
    """Laptop-sized defaults: 64x64 inputs, narrow channels, 4 groups."""
    return Profile(
        name="desk",
        graph=GraphConfig(
            input_size=(64, 64), base_channels_a=8, base_channels_b=16,
            pyramid_channels=16, dilated_block_channels=(16, 32, 64),
            groups=4, dropout_rate=0.2, sop_channels=16, seed=seed),
        train=TrainConfig(learning_rate=1e-3, batch_size=16, epochs=20),
    )


def full_profile(seed: int = 0) -> Profile:
    """Deployment-scale defaults: 512x512 inputs, 128/256 base channels."""
    return Profile(
        name="full",
        graph=GraphConfig(seed=seed),
        train=TrainConfig(learning_rate=2e-6, batch_size=48, epochs=20),
    )


PROFILES = {"desk": desk_profile, "full": full_profile}

_GRAPH_KEYS = {
    "input_size", "base_channels_a", "base_channels_b", "pyramid_channels",
    "dilated_block_channels", "groups", "dropout_rate", "sop_channels", "seed",
}
_TRAIN_KEYS = {"learning_rate", "batch_size", "epochs"}


def _parse_value(key: str, raw: str):
    if key == "input_size":
        parts = raw.replace("x", ",").split(",")
        if len(parts) != 2:
            raise ConfigError(f"input_size: expected HxW, got {raw!r}")
        return (int(parts[0]), int(parts[1]))
    if key == "dilated_block_channels":
        return tuple(int(p) for p in raw.split(",") if p.strip())
    if key in ("dropout_rate", "learning_rate"):
        return float(raw)
    return int(raw)


def read_config_file(path: str | Path) -> dict:
    """Parse a flat key=value file into typed overrides.

    Blank lines and #-comments are skipped; unknown keys are configuration
    errors naming the key.
    """
    overrides: dict = {}
    with open(path, "r", encoding="utf-8") as fh:
        for number, line in enumerate(fh, start=1):
            stripped = line.split("#", 1)[0].strip()
            if not stripped:
                continue
            if "=" not in stripped:
                raise ConfigError(
                    f"config line {number}: expected key=value, got {stripped!r}")
            key, raw = (part.strip() for part in stripped.split("=", 1))
            if key not in _GRAPH_KEYS | _TRAIN_KEYS:
                raise ConfigError(f"config: unknown key {key!r}")
            try:
                overrides[key] = _parse_value(key, raw)
            except ValueError as exc:
                raise ConfigError(f"config: bad value for {key!r}: {raw!r}") from exc
    return overrides


def resolve_profile(name: str, overrides: dict | None = None,
                    seed: int | None = None) -> Profile:
    """Profile defaults with file/flag overrides applied on top."""
    if name not in PROFILES:
        raise ConfigError(f"profile: unknown profile {name!r}")
    profile = PROFILES[name](seed=seed if seed is not None else 0)
    if not overrides:
        return profile
    unknown = set(overrides) - _GRAPH_KEYS - _TRAIN_KEYS
    if unknown:
        raise ConfigError(f"config: unknown key {sorted(unknown)[0]!r}")
    graph_kwargs = {k: v for k, v in overrides.items() if k in _GRAPH_KEYS}
    train_kwargs = {k: v for k, v in overrides.items() if k in _TRAIN_KEYS}
    if seed is not None:
        graph_kwargs.setdefault("seed", seed)
    return Profile(
        name=profile.name,
        graph=replace(profile.graph, **graph_kwargs),
        train=replace(profile.train, **train_kwargs),
    )
